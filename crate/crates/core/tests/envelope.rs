//! Envelope solver checked against an independent discretisation of the
//! integral form, plus the shape properties of the rescaled envelope.

use massfront_core::curves::{cstar, CurveSpec};
use massfront_core::envelope::{
    assumption_a_sup, check_delta_properties, compute_envelope, default_beta, k_const, solve_l,
    EnvelopeError,
};

/// March the integral equation with implicit trapezoid steps on a grid graded
/// towards both ends; returns whether `l` stays positive up to `s = 1`.
fn fixed_point_survives(alpha: f64, c: f64, n: usize) -> bool {
    let k = k_const();
    let s = |j: usize| {
        let x = j as f64 / n as f64;
        let (a, b) = (x.powi(3), (1.0 - x).powi(3));
        a / (a + b)
    };
    let mut integral = 0.0;
    let mut prev = alpha;
    for j in 1..=n {
        let h = s(j) - s(j - 1);
        let base = alpha + c * s(j).cbrt() - k * (integral + h / 2.0 / (prev * prev));
        let mut l = base;
        let mut converged = false;
        for _ in 0..500 {
            let next = base - k * h / 2.0 / (l * l);
            if next <= 0.0 {
                return false;
            }
            if (next - l).abs() < 1e-15 * l.abs() {
                l = next;
                converged = true;
                break;
            }
            l = next;
        }
        if !converged {
            return false;
        }
        integral += h / 2.0 * (1.0 / (prev * prev) + 1.0 / (l * l));
        prev = l;
    }
    true
}

fn fixed_point_alpha(c: f64) -> f64 {
    let (mut lo, mut hi) = (1e-6, 1e3);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if fixed_point_survives(mid, c, 10_000) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

#[test]
fn shooting_matches_fixed_point_oracle() {
    for f in [0.25, 0.5, 0.75] {
        let c = cstar() * f;
        let sol = solve_l(c, 1e-4).unwrap();
        let oracle = fixed_point_alpha(c);
        assert!(
            (sol.alpha - oracle).abs() < 1e-4,
            "c = {c}: shooting {} vs oracle {oracle}",
            sol.alpha
        );
    }
}

#[test]
fn regression_alphas() {
    // Pinned from the fixed-point oracle above (agreement ~1e-7).
    let pinned = [(0.25, 1.386_829_34), (0.5, 0.680_742_0), (0.75, 0.156_740_1)];
    for (f, a) in pinned {
        let sol = solve_l(cstar() * f, 1e-4).unwrap();
        assert!((sol.alpha - a).abs() < 1e-6, "c*{f}: {}", sol.alpha);
    }
}

#[test]
fn solution_is_bounded_by_c_plus_alpha() {
    for f in [0.25, 0.5, 0.75] {
        let sol = solve_l(cstar() * f, 1e-4).unwrap();
        for (_, l) in sol.grid(10_001) {
            assert!(l <= sol.c + sol.alpha);
        }
        for (s, l) in sol.grid(1001) {
            if s < 0.999 {
                assert!(l > 0.0, "l({s}) = {l}");
            }
        }
    }
}

#[test]
fn derivative_matches_differential_form() {
    let sol = solve_l(cstar() / 2.0, 1e-4).unwrap();
    let h = 1e-4;
    for i in 1..99 {
        let s = i as f64 / 100.0;
        let fd = (sol.l(s + h) - sol.l(s - h)) / (2.0 * h);
        // Centred difference error is O(h^2 l''').
        assert!((fd - sol.l_prime(s)).abs() < 1e-5 * (1.0 + sol.l_second(s).abs()), "s = {s}");
    }
}

#[test]
fn u_t_increases_towards_one() {
    let sol = solve_l(cstar() / 2.0, 1e-4).unwrap();
    let beta = default_beta(sol.alpha, sol.c);
    let a = compute_envelope(&sol, 1e4, beta, 2.0).unwrap();
    let b = compute_envelope(&sol, 1e6, beta, 2.0).unwrap();
    assert!(b.u_t > a.u_t && b.u_t < 1.0);
}

#[test]
fn delta_properties_at_large_t() {
    for f in [0.25, 0.5] {
        let sol = solve_l(cstar() * f, 1e-4).unwrap();
        let beta = default_beta(sol.alpha, sol.c);
        for t in [1e4, 1e6] {
            let env = compute_envelope(&sol, t, beta, 2.0).unwrap();
            let report = check_delta_properties(&env);
            let k = report.smallest_passing_k.expect("some shift passes");
            assert!(k <= 64.0);
            assert!(report.big_l_lower_ok && report.big_l_upper_ok);
            let env = env.with_shift(k);
            assert!(env.delta.iter().all(|&d| d >= t.powf(0.25) && d <= k * t.cbrt()));
            assert!(*env.delta.last().unwrap() <= k * t.powf(0.25));
        }
    }
}

#[test]
fn slope_bound_at_large_t() {
    let sol = solve_l(cstar() / 4.0, 1e-4).unwrap();
    let t = 1e6;
    let env = compute_envelope(&sol, t, default_beta(sol.alpha, sol.c), 2.0).unwrap();
    let r = check_delta_properties(&env);
    assert!(r.max_abs_slope <= 2.0 / t.sqrt(), "{}", r.max_abs_slope);
}

#[test]
fn small_t_is_rejected() {
    let sol = solve_l(cstar() / 2.0, 1e-4).unwrap();
    let err = compute_envelope(&sol, 10.0, default_beta(sol.alpha, sol.c), 2.0).unwrap_err();
    assert!(matches!(err, EnvelopeError::ThresholdNotReached { .. }));
}

#[test]
fn assumption_a_is_uniform_in_t() {
    let sol = solve_l(cstar() / 2.0, 1e-4).unwrap();
    let beta = default_beta(sol.alpha, sol.c);
    let k = 2.0;
    let q: Vec<f64> = [1e4, 1e5, 1e6]
        .iter()
        .map(|&t| {
            let env = compute_envelope(&sol, t, beta, k).unwrap();
            let f = CurveSpec::B { c: sol.c, beta, t }.shifted(k * t.powf(1.0 / 6.0));
            let q1 = assumption_a_sup(&f, &env, 4001);
            let q2 = assumption_a_sup(&f, &env, 8001);
            assert!(((q2 - q1) / q2).abs() < 0.01, "t = {t}: {q1} vs {q2}");
            q2
        })
        .collect();
    for w in q.windows(2) {
        let r = w[1] / w[0];
        assert!((0.1..=10.0).contains(&r), "{q:?}");
    }
}

#[test]
fn b_curve_lies_below_g() {
    for (c, beta, t) in [(1.0, 0.5, 8.0), (2.0, 0.01, 1e4), (3.0, 1.0, 10.0)] {
        let b = CurveSpec::B { c, beta, t };
        let g = CurveSpec::G { c };
        for i in 0..=1000 {
            let s = t * i as f64 / 1000.0;
            assert!(b.eval(s) <= g.eval(s));
        }
    }
    let b = CurveSpec::B { c: 1.0, beta: 0.5, t: 8.0 };
    assert!((b.eval(0.0) + 4f64.cbrt()).abs() < 1e-15);
}
