//! Density sweeps against brute-force evaluation.

use massfront_core::density::{
    front_d, front_upper, zeta_at, zeta_at_config, zeta_at_particles, zeta_profile, zmax, PrefixSums,
};
use massfront_core::engine::{init_population, SimConfig};
use massfront_core::PopulationState;
use proptest::prelude::*;

fn state_of(initial: Vec<(f64, f64)>) -> PopulationState {
    init_population(&SimConfig {
        initial,
        ..SimConfig::default()
    })
    .unwrap()
}

fn config_strategy(max_n: usize, spread: f64) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-spread..spread, 0.001f64..=1.0), 1..max_n)
}

/// Brute-force z(x): mass within distance < 1/2, including particles at x.
fn z_brute(pos: &[f64], mass: &[f64], x: f64) -> f64 {
    pos.iter().zip(mass).filter(|(p, _)| (**p - x).abs() < 0.5).map(|(_, m)| m).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn profile_matches_brute_force_at_midpoints(init in config_strategy(300, 6.0)) {
        let s = state_of(init);
        let p = zeta_profile(&s);
        prop_assert_eq!(p.values.len(), p.breakpoints.len() + 1);
        prop_assert_eq!(p.values[0], 0.0);
        prop_assert_eq!(*p.values.last().unwrap(), 0.0);
        for w in p.breakpoints.windows(2) {
            // A midpoint sitting exactly on a particle sees the measure-zero dip.
            let mut mid = 0.5 * (w[0] + w[1]);
            if s.positions().contains(&mid) {
                mid = w[0] + (w[1] - w[0]) / 3.0;
            }
            let brute = zeta_at_config(s.positions(), s.masses(), mid);
            prop_assert!((p.value_at(mid) - brute).abs() <= 1e-12, "at {}: {} vs {}", mid, p.value_at(mid), brute);
            prop_assert!(p.value_at(mid) >= 0.0);
        }
    }

    #[test]
    fn point_queries_match_brute_force(init in config_strategy(200, 4.0), q in prop::collection::vec(-6.0f64..6.0, 50)) {
        let s = state_of(init);
        for x in q {
            let brute = zeta_at_config(s.positions(), s.masses(), x);
            prop_assert!((zeta_at(&s, x) - brute).abs() <= 1e-12);
        }
        // Queries exactly at particles exercise self-exclusion.
        for &x in s.positions() {
            let brute = zeta_at_config(s.positions(), s.masses(), x);
            prop_assert!((zeta_at(&s, x) - brute).abs() <= 1e-12);
        }
    }

    #[test]
    fn particle_sweep_matches_point_queries(init in config_strategy(200, 3.0)) {
        let s = state_of(init);
        let mut out = Vec::new();
        zeta_at_particles(s.positions(), &PrefixSums::new(s.masses()), &mut out);
        for (i, &x) in s.positions().iter().enumerate() {
            prop_assert!((out[i] - zeta_at_config(s.positions(), s.masses(), x)).abs() <= 1e-12);
        }
    }

    #[test]
    fn half_window_max_matches_candidate_centres(init in config_strategy(200, 5.0)) {
        let s = state_of(init);
        let (pos, mass) = (s.positions(), s.masses());
        let mut best: f64 = 0.0;
        for i in 0..pos.len() {
            for j in i..pos.len() {
                if pos[j] - pos[i] < 1.0 {
                    best = best.max(z_brute(pos, mass, 0.5 * (pos[i] + pos[j])));
                }
            }
        }
        let (x, z) = zmax(&s);
        prop_assert!((z - best).abs() <= 1e-12, "{} vs {}", z, best);
        prop_assert!((z_brute(pos, mass, x) - z).abs() <= 1e-12);
        // zeta never exceeds twice the half-window maximum.
        prop_assert!(zeta_profile(&s).max_value() <= 2.0 * z + 1e-12);
    }

    #[test]
    fn fronts_match_grid_scan(init in config_strategy(50, 4.0), m in 0.05f64..2.0) {
        let s = state_of(init);
        let h = 1e-3;
        let p = zeta_profile(&s);
        // Grid oracle for d: first grid x > 0 with zeta(x) < m (grid points at
        // particle positions are skipped; they are measure-zero dips).
        let max_pos = *s.positions().last().unwrap();
        let n = ((max_pos.max(0.0) + 2.0) / h).ceil() as usize;
        let grid_d = (1..=n)
            .map(|i| i as f64 * h)
            .find(|&x| zeta_at_config(s.positions(), s.masses(), x) < m && !s.positions().contains(&x))
            .unwrap();
        let d = front_d(&s, m);
        prop_assert!(d <= grid_d + 1e-12 && grid_d - d <= h + 1e-12, "d = {}, grid {}", d, grid_d);
        // Grid oracle for D: last grid x with zeta(x) > m.
        let lo = ((s.positions()[0] - 2.0) / h).floor() as i64;
        let hi = ((max_pos + 2.0) / h).ceil() as i64;
        let grid_upper = (lo..=hi)
            .rev()
            .map(|i| i as f64 * h)
            .find(|&x| zeta_at_config(s.positions(), s.masses(), x) > m);
        match (front_upper(&s, m), grid_upper) {
            (Some(u), Some(g)) => prop_assert!(u >= g - 1e-12 && u - g <= h + 1e-12, "D = {}, grid {}", u, g),
            (None, None) => {}
            // The grid can miss an interval narrower than one cell.
            (Some(u), None) => prop_assert!(p.breakpoints.iter().any(|&b| (b - u).abs() < 1e-15)),
            (None, Some(g)) => prop_assert!(false, "grid found {} but D is none", g),
        }
        if let Some(u) = front_upper(&s, m) {
            prop_assert!(u <= max_pos + 1.0);
        }
    }
}

/// Brute force with compensated summation, accurate to a few ulps.
fn neumaier_zeta(pos: &[f64], mass: &[f64], x: f64) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (p, m) in pos.iter().zip(mass) {
        let d = (p - x).abs();
        if d > 0.0 && d < 1.0 {
            let t = sum + m;
            comp += if sum.abs() >= m.abs() { (sum - t) + m } else { (m - t) + sum };
            sum = t;
        }
    }
    sum + comp
}

#[test]
fn large_configuration_agrees() {
    use massfront_core::rng::KeyedRng;
    use rand::Rng;
    let mut rng = KeyedRng::new(1, 2, 3);
    let init: Vec<(f64, f64)> = (0..10_000)
        .map(|_| (rng.random_range(-20.0..20.0), rng.random_range(1e-6..=1.0)))
        .collect();
    let s = state_of(init);
    let p = zeta_profile(&s);
    for j in (0..p.breakpoints.len() - 1).step_by(37) {
        let mid = 0.5 * (p.breakpoints[j] + p.breakpoints[j + 1]);
        let brute = neumaier_zeta(s.positions(), s.masses(), mid);
        assert!((p.value_at(mid) - brute).abs() <= 1e-12, "{} vs {brute}", p.value_at(mid));
    }
}
