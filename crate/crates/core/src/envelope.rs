//! Solution of the singular integral equation
//! `l(s) = alpha + c s^{1/3} - k * int_0^s l(r)^{-2} dr` with `l(1) = 0`,
//! and the rescaled envelope `L` built from it.
//!
//! Differentiating gives `l' = (c/3) s^{-2/3} - k / l^2`. Near `s = 0` the
//! substitution `s = sigma^3` turns this into the smooth problem
//! `dl/dsigma = c - 3 k sigma^2 / l^2`, `l(0) = alpha`. Close to the zero of `l`
//! the roles swap and `s` is integrated as a function of `l`, which removes the
//! `l^{-2}` singularity. `alpha` is found by bisection on the zero time.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::cstar;

/// `pi^2 / (2 sqrt 2)`.
pub fn k_const() -> f64 {
    std::f64::consts::PI.powi(2) / (2.0 * std::f64::consts::SQRT_2)
}

const PHASE1_STEPS: usize = 20_000;
const PHASE2_STEPS: usize = 4_000;
const SWITCH_LEVEL: f64 = 0.5;
const ALPHA_MIN: f64 = 1e-6;
const ALPHA_MAX: f64 = 1e3;
const SCAN_POINTS: usize = 91;

#[derive(Debug, Error, PartialEq)]
pub enum EnvelopeError {
    #[error("c must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("no alpha in [{ALPHA_MIN}, {ALPHA_MAX}] gives l(1) = 0 for c = {c} (c* = {cstar})")]
    NoSolution { c: f64, cstar: f64 },
    #[error("solver did not reach tolerance {tol}: |l(1)| = {l_at_one:e}, residual = {residual:e}")]
    NotConverged {
        tol: f64,
        l_at_one: f64,
        residual: f64,
    },
    #[error("t must be > 1 and finite, got {0}")]
    InvalidT(f64),
    #[error("l never exceeds the level 2 t^(-1/12) = {threshold} (max l = {l_max}); t is too small")]
    ThresholdNotReached { threshold: f64, l_max: f64 },
    #[error("beta = {beta} violates 0 < beta < min(alpha^3/8, alpha^3/(8c^3), 1) = {bound}")]
    BetaOutOfRange { beta: f64, bound: f64 },
    #[error("l drops below alpha/2 on [0, beta u_t/(1+beta)]: min l = {min_l}, alpha/2 = {half_alpha}")]
    LowerBoundViolated { min_l: f64, half_alpha: f64 },
    #[error("shift K must be positive and finite, got {0}")]
    InvalidShift(f64),
}

/// Numerical solution `l` on `[0, 1]` together with its diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LSolution {
    pub c: f64,
    pub alpha: f64,
    /// Largest deviation from the integral equation over all solver nodes.
    pub residual: f64,
    pub l_at_one: f64,
    /// Zero of `l` as integrated; equals 1 up to the bisection resolution.
    pub zero_time: f64,
    /// Every `alpha` bracket where the zero time crosses 1, smallest first.
    pub brackets: Vec<(f64, f64)>,
    sigma_step: f64,
    phase1_l: Vec<f64>,
    level_step: f64,
    phase2_l: Vec<f64>,
    phase2_s: Vec<f64>,
}

enum Shot {
    /// `l` stays positive on `[0, 1]`.
    Survives { phase1_l: Vec<f64> },
    /// `l` hits zero at `zero_time`.
    Dies {
        zero_time: f64,
        phase1_l: Vec<f64>,
        phase2_l: Vec<f64>,
        phase2_s: Vec<f64>,
        level_step: f64,
    },
}

impl Shot {
    fn zero_time(&self) -> f64 {
        match self {
            Shot::Survives { .. } => f64::INFINITY,
            Shot::Dies { zero_time, .. } => *zero_time,
        }
    }
}

#[inline]
fn dl_dsigma(c: f64, k: f64, sigma: f64, l: f64) -> f64 {
    c - 3.0 * k * sigma * sigma / (l * l)
}

/// One RK4 step in sigma, split into halves while the step is coarse relative to `l`.
fn rk4_sigma(c: f64, k: f64, sigma: f64, l: f64, h: f64, depth: u32) -> f64 {
    let f0 = dl_dsigma(c, k, sigma, l);
    if depth < 40 && (f0 * h).abs() > 0.05 * l {
        let mid = rk4_sigma(c, k, sigma, l, h / 2.0, depth + 1);
        if !(mid > 0.0) {
            return mid;
        }
        return rk4_sigma(c, k, sigma + h / 2.0, mid, h / 2.0, depth + 1);
    }
    let k1 = f0;
    let k2 = dl_dsigma(c, k, sigma + h / 2.0, l + h / 2.0 * k1);
    let k3 = dl_dsigma(c, k, sigma + h / 2.0, l + h / 2.0 * k2);
    let k4 = dl_dsigma(c, k, sigma + h, l + h * k3);
    l + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// `ds/dl` once `l` is decreasing.
#[inline]
fn ds_dl(c: f64, k: f64, l: f64, s: f64) -> f64 {
    3.0 * l * l / (c * s.powf(-2.0 / 3.0) * l * l - 3.0 * k)
}

fn shoot(alpha: f64, c: f64, k: f64) -> Shot {
    let h = 1.0 / PHASE1_STEPS as f64;
    let mut phase1 = Vec::with_capacity(PHASE1_STEPS + 1);
    phase1.push(alpha);
    let mut l = alpha;
    for i in 0..PHASE1_STEPS {
        let sigma = i as f64 * h;
        let next = rk4_sigma(c, k, sigma, l, h, 0);
        let sigma_next = (i + 1) as f64 * h;
        if !(next > 0.0) || !next.is_finite() {
            // Collapsed inside a step far from any relevant alpha.
            return Shot::Dies {
                zero_time: sigma_next.powi(3),
                phase1_l: phase1,
                phase2_l: Vec::new(),
                phase2_s: Vec::new(),
                level_step: 0.0,
            };
        }
        phase1.push(next);
        l = next;
        if l < SWITCH_LEVEL && dl_dsigma(c, k, sigma_next, l) < 0.0 {
            let (phase2_l, phase2_s, level_step) = integrate_phase2(c, k, l, sigma_next.powi(3));
            return Shot::Dies {
                zero_time: *phase2_s.last().unwrap(),
                phase1_l: phase1,
                phase2_l,
                phase2_s,
                level_step,
            };
        }
    }
    Shot::Survives { phase1_l: phase1 }
}

fn integrate_phase2(c: f64, k: f64, l0: f64, s0: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let h = -l0 / PHASE2_STEPS as f64;
    let mut ls = Vec::with_capacity(PHASE2_STEPS + 1);
    let mut ss = Vec::with_capacity(PHASE2_STEPS + 1);
    let mut s = s0;
    ls.push(l0);
    ss.push(s0);
    for j in 0..PHASE2_STEPS {
        let l = l0 + j as f64 * h;
        let k1 = ds_dl(c, k, l, s);
        let k2 = ds_dl(c, k, l + h / 2.0, s + h / 2.0 * k1);
        let k3 = ds_dl(c, k, l + h / 2.0, s + h / 2.0 * k2);
        let k4 = ds_dl(c, k, l + h, s + h * k3);
        s += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let l_next = if j + 1 == PHASE2_STEPS { 0.0 } else { l0 + (j + 1) as f64 * h };
        ls.push(l_next);
        ss.push(s);
    }
    (ls, ss, -h)
}

/// Solve for `alpha(c)` and `l`. `tol` bounds both `|l(1)|` and the residual.
pub fn solve_l(c: f64, tol: f64) -> Result<LSolution, EnvelopeError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(EnvelopeError::InvalidC(c));
    }
    let k = k_const();
    let survives = |a: f64| shoot(a, c, k).zero_time() >= 1.0;

    let grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| {
            let x = i as f64 / (SCAN_POINTS - 1) as f64;
            ALPHA_MIN * (ALPHA_MAX / ALPHA_MIN).powf(x)
        })
        .collect();
    let outcome: Vec<bool> = grid.iter().map(|&a| survives(a)).collect();
    let brackets: Vec<(f64, f64)> = grid
        .windows(2)
        .zip(outcome.windows(2))
        .filter(|(_, o)| o[0] != o[1])
        .map(|(g, _)| (g[0], g[1]))
        .collect();
    let Some(&(mut lo, mut hi)) = brackets.first() else {
        return Err(EnvelopeError::NoSolution { c, cstar: cstar() });
    };
    // `lo` dies before time 1 and `hi` survives, unless the first crossing goes the other way.
    let lo_survives = outcome[grid.iter().position(|&g| g == lo).unwrap()];
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if survives(mid) == lo_survives {
            lo = mid;
        } else {
            hi = mid;
        }
    }

    let candidates = [lo, hi].map(|a| build_solution(a, c, k, &brackets));
    let best = candidates
        .into_iter()
        .min_by(|a, b| a.l_at_one.abs().total_cmp(&b.l_at_one.abs()))
        .unwrap();
    if best.l_at_one.abs() > tol || best.residual > tol || !best.residual.is_finite() {
        return Err(EnvelopeError::NotConverged {
            tol,
            l_at_one: best.l_at_one,
            residual: best.residual,
        });
    }
    Ok(best)
}

fn build_solution(alpha: f64, c: f64, k: f64, brackets: &[(f64, f64)]) -> LSolution {
    let sigma_step = 1.0 / PHASE1_STEPS as f64;
    let mut sol = match shoot(alpha, c, k) {
        Shot::Survives { phase1_l } => LSolution {
            c,
            alpha,
            residual: f64::NAN,
            l_at_one: *phase1_l.last().unwrap(),
            zero_time: f64::INFINITY,
            brackets: brackets.to_vec(),
            sigma_step,
            phase1_l,
            level_step: 0.0,
            phase2_l: Vec::new(),
            phase2_s: Vec::new(),
        },
        Shot::Dies {
            zero_time,
            phase1_l,
            phase2_l,
            phase2_s,
            level_step,
        } => LSolution {
            c,
            alpha,
            residual: f64::NAN,
            l_at_one: f64::NAN,
            zero_time,
            brackets: brackets.to_vec(),
            sigma_step,
            phase1_l,
            level_step,
            phase2_l,
            phase2_s,
        },
    };
    if sol.zero_time.is_finite() {
        sol.l_at_one = sol.l(1.0);
    }
    sol.residual = sol.compute_residual();
    sol
}

fn hermite(y0: f64, y1: f64, d0: f64, d1: f64, h: f64, x: f64) -> f64 {
    let x2 = x * x;
    let x3 = x2 * x;
    (2.0 * x3 - 3.0 * x2 + 1.0) * y0
        + (x3 - 2.0 * x2 + x) * h * d0
        + (-2.0 * x3 + 3.0 * x2) * y1
        + (x3 - x2) * h * d1
}

impl LSolution {
    fn k(&self) -> f64 {
        k_const()
    }

    /// End of the sigma-parametrised part, as a value of `s`.
    fn switch_time(&self) -> f64 {
        ((self.phase1_l.len() - 1) as f64 * self.sigma_step).powi(3)
    }

    fn has_phase2(&self) -> bool {
        !self.phase2_s.is_empty()
    }

    /// `l(s)`. Past the zero time the local shape `-(3k(s-T))^{1/3}` is used.
    pub fn l(&self, s: f64) -> f64 {
        let k = self.k();
        if s <= 0.0 {
            return self.alpha;
        }
        if !self.has_phase2() || s <= self.switch_time() {
            let h = self.sigma_step;
            let last = self.phase1_l.len() - 1;
            let sigma = s.cbrt();
            let i = ((sigma / h).floor() as usize).min(last.saturating_sub(1));
            let (s0, s1) = (i as f64 * h, (i + 1) as f64 * h);
            let (l0, l1) = (self.phase1_l[i], self.phase1_l[i + 1]);
            let d0 = dl_dsigma(self.c, k, s0, l0);
            let d1 = dl_dsigma(self.c, k, s1, l1);
            return hermite(l0, l1, d0, d1, h, (sigma - s0) / h);
        }
        if s >= self.zero_time {
            return -(3.0 * k * (s - self.zero_time)).cbrt();
        }
        let j = self.phase2_s.partition_point(|&v| v <= s).clamp(1, self.phase2_s.len() - 1) - 1;
        let h = -self.level_step;
        let (la, lb) = (self.phase2_l[j], self.phase2_l[j + 1]);
        let (sa, sb) = (self.phase2_s[j], self.phase2_s[j + 1]);
        let da = ds_dl(self.c, k, la, sa);
        let db = ds_dl(self.c, k, lb, sb);
        // s is monotone in l on the cell; invert the Hermite interpolant by bisection.
        let (mut x0, mut x1) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let xm = 0.5 * (x0 + x1);
            if hermite(sa, sb, da, db, h, xm) < s {
                x0 = xm;
            } else {
                x1 = xm;
            }
        }
        la + h * 0.5 * (x0 + x1)
    }

    /// `l'(s)` from the differential form of the equation.
    pub fn l_prime(&self, s: f64) -> f64 {
        let l = self.l(s);
        self.c / 3.0 * s.powf(-2.0 / 3.0) - self.k() / (l * l)
    }

    pub fn l_second(&self, s: f64) -> f64 {
        let l = self.l(s);
        let lp = self.c / 3.0 * s.powf(-2.0 / 3.0) - self.k() / (l * l);
        -2.0 * self.c / 9.0 * s.powf(-5.0 / 3.0) + 2.0 * self.k() * lp / (l * l * l)
    }

    /// `l` sampled at `n` equally spaced points of `[0, 1]`.
    pub fn grid(&self, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let s = i as f64 / (n - 1) as f64;
                (s, self.l(s))
            })
            .collect()
    }

    /// Largest value of `l` and where it is attained, on a fine grid.
    pub fn max(&self) -> (f64, f64) {
        let n = 20_001;
        let mut best = (0.0, self.alpha);
        for i in 0..n {
            let s = i as f64 / (n - 1) as f64 * self.zero_time.min(1.0);
            let v = self.l(s);
            if v > best.1 {
                best = (s, v);
            }
        }
        best
    }

    /// Worst violation of the integral equation over all solver nodes, with the
    /// integral evaluated by endpoint-corrected trapezoid quadrature.
    fn compute_residual(&self) -> f64 {
        let (c, k, a) = (self.c, self.k(), self.alpha);
        let h = self.sigma_step;
        let g = |sigma: f64, l: f64| 3.0 * sigma * sigma / (l * l);
        let dg = |sigma: f64, l: f64| {
            let ls = dl_dsigma(c, k, sigma, l);
            6.0 * sigma / (l * l) - 6.0 * sigma * sigma * ls / (l * l * l)
        };
        let mut integral = 0.0;
        let mut worst: f64 = 0.0;
        for i in 0..self.phase1_l.len() {
            let sigma = i as f64 * h;
            let l = self.phase1_l[i];
            if i > 0 {
                let (sp, lp) = ((i - 1) as f64 * h, self.phase1_l[i - 1]);
                integral += h / 2.0 * (g(sp, lp) + g(sigma, l))
                    + h * h / 12.0 * (dg(sp, lp) - dg(sigma, l));
            }
            worst = worst.max((l - a - c * sigma + k * integral).abs());
        }
        if !self.has_phase2() {
            return worst;
        }
        let q = |l: f64, s: f64| 3.0 / (c * s.powf(-2.0 / 3.0) * l * l - 3.0 * k);
        let dq = |l: f64, s: f64| {
            let e = c * s.powf(-2.0 / 3.0) * l * l - 3.0 * k;
            let sl = 3.0 * l * l / e;
            let de = c * (-2.0 / 3.0 * s.powf(-5.0 / 3.0) * sl * l * l + 2.0 * s.powf(-2.0 / 3.0) * l);
            -3.0 * de / (e * e)
        };
        let hl = -self.level_step;
        for j in 1..self.phase2_l.len() {
            let (la, sa) = (self.phase2_l[j - 1], self.phase2_s[j - 1]);
            let (lb, sb) = (self.phase2_l[j], self.phase2_s[j]);
            integral += hl / 2.0 * (q(la, sa) + q(lb, sb)) + hl * hl / 12.0 * (dq(la, sa) - dq(lb, sb));
            worst = worst.max((lb - a - c * sb.cbrt() + k * integral).abs());
        }
        worst
    }
}

/// Default `beta`: 90% of the largest value the envelope construction allows.
pub fn default_beta(alpha: f64, c: f64) -> f64 {
    0.9 * beta_bound(alpha, c)
}

pub fn beta_bound(alpha: f64, c: f64) -> f64 {
    let a3 = alpha.powi(3);
    (a3 / 8.0).min(a3 / (8.0 * c.powi(3))).min(1.0)
}

/// Envelope `L` on `[0, t]` and its shift `Delta = L - K t^{1/6}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvelopeSolution {
    pub c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub shift_k: f64,
    pub t: f64,
    /// Last time `l` is above `2 t^{-1/12}`.
    pub u_t: f64,
    pub threshold: f64,
    pub s_grid: Vec<f64>,
    pub big_l: Vec<f64>,
    pub delta: Vec<f64>,
    scale: f64,
    lsol: LSolution,
}

/// Number of grid points stored with an envelope.
pub const ENVELOPE_GRID: usize = 4_001;

pub fn compute_envelope(
    lsol: &LSolution,
    t: f64,
    beta: f64,
    shift_k: f64,
) -> Result<EnvelopeSolution, EnvelopeError> {
    if !(t > 1.0) || !t.is_finite() {
        return Err(EnvelopeError::InvalidT(t));
    }
    if !(shift_k > 0.0) || !shift_k.is_finite() {
        return Err(EnvelopeError::InvalidShift(shift_k));
    }
    let bound = beta_bound(lsol.alpha, lsol.c);
    if !(beta > 0.0 && beta < bound) {
        return Err(EnvelopeError::BetaOutOfRange { beta, bound });
    }
    let threshold = 2.0 * t.powf(-1.0 / 12.0);
    let (s_max, l_max) = lsol.max();
    if l_max <= threshold {
        return Err(EnvelopeError::ThresholdNotReached { threshold, l_max });
    }
    // Crossing on the descending branch; l is unimodal.
    let (mut lo, mut hi) = (s_max, lsol.zero_time.min(1.0));
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if lsol.l(mid) > threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let u_t = lo;

    let start = beta * u_t / (1.0 + beta);
    let half_alpha = lsol.alpha / 2.0;
    let mut min_l = f64::INFINITY;
    for i in 0..=2_000 {
        min_l = min_l.min(lsol.l(start * i as f64 / 2_000.0));
    }
    if min_l < half_alpha {
        return Err(EnvelopeError::LowerBoundViolated { min_l, half_alpha });
    }

    let scale = t.cbrt() * ((1.0 + beta) / u_t).cbrt();
    let mut env = EnvelopeSolution {
        c: lsol.c,
        alpha: lsol.alpha,
        beta,
        shift_k,
        t,
        u_t,
        threshold,
        s_grid: Vec::new(),
        big_l: Vec::new(),
        delta: Vec::new(),
        scale,
        lsol: lsol.clone(),
    };
    let offset = shift_k * t.powf(1.0 / 6.0);
    for i in 0..ENVELOPE_GRID {
        let s = t * i as f64 / (ENVELOPE_GRID - 1) as f64;
        let l = env.big_l_at(s);
        env.s_grid.push(s);
        env.big_l.push(l);
        env.delta.push(l - offset);
    }
    Ok(env)
}

impl EnvelopeSolution {
    fn phi(&self, s: f64) -> f64 {
        (s + self.beta * self.t) * self.u_t / (self.t * (1.0 + self.beta))
    }

    fn dphi(&self) -> f64 {
        self.u_t / (self.t * (1.0 + self.beta))
    }

    pub fn lsolution(&self) -> &LSolution {
        &self.lsol
    }

    pub fn big_l_at(&self, s: f64) -> f64 {
        self.scale * self.lsol.l(self.phi(s))
    }

    pub fn big_l_prime(&self, s: f64) -> f64 {
        self.scale * self.dphi() * self.lsol.l_prime(self.phi(s))
    }

    pub fn big_l_second(&self, s: f64) -> f64 {
        self.scale * self.dphi().powi(2) * self.lsol.l_second(self.phi(s))
    }

    pub fn delta_at(&self, s: f64) -> f64 {
        self.big_l_at(s) - self.shift_k * self.t.powf(1.0 / 6.0)
    }

    /// Same envelope with a different shift.
    pub fn with_shift(&self, shift_k: f64) -> Self {
        let mut env = self.clone();
        let offset = shift_k * self.t.powf(1.0 / 6.0);
        env.shift_k = shift_k;
        env.delta = env.big_l.iter().map(|l| l - offset).collect();
        env
    }
}

/// Outcome of the shape checks on `Delta` for one shift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub shift_k: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    pub delta_end: f64,
    pub above_quarter_power: bool,
    pub below_third_power: bool,
    pub end_below_quarter_power: bool,
    pub slope_bounded: bool,
}

impl ShiftCheck {
    pub fn passed(&self) -> bool {
        self.above_quarter_power && self.below_third_power && self.end_below_quarter_power && self.slope_bounded
    }

    /// Name of the first failing condition, in the order they are listed.
    pub fn first_violation(&self) -> Option<&'static str> {
        [
            (self.above_quarter_power, "Delta >= t^(1/4)"),
            (self.below_third_power, "Delta <= K t^(1/3)"),
            (self.end_below_quarter_power, "Delta(t) <= K t^(1/4)"),
            (self.slope_bounded, "|Delta'| <= 1"),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, name)| name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub t: f64,
    pub big_l_min: f64,
    pub big_l_max: f64,
    pub max_abs_slope: f64,
    /// `L >= 2 t^{1/4}` on the grid.
    pub big_l_lower_ok: bool,
    /// `L <= 2 (c + alpha) t^{1/3}` on the grid.
    pub big_l_upper_ok: bool,
    pub checks: Vec<ShiftCheck>,
    /// Smallest shift on the ladder passing every check.
    pub smallest_passing_k: Option<f64>,
}

/// Shifts tried by [`check_delta_properties`].
pub const SHIFT_LADDER: [f64; 10] = [2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0, 256.0, 512.0, 1024.0];

/// Check the range, endpoint and slope conditions of `Delta` along the shift
/// ladder, on a grid of 20001 points.
pub fn check_delta_properties(env: &EnvelopeSolution) -> DeltaReport {
    let t = env.t;
    let n = 20_001;
    let mut l_vals = Vec::with_capacity(n);
    let mut max_abs_slope: f64 = 0.0;
    for i in 0..n {
        let s = t * i as f64 / (n - 1) as f64;
        l_vals.push(env.big_l_at(s));
        max_abs_slope = max_abs_slope.max(env.big_l_prime(s).abs());
    }
    let l_min = l_vals.iter().copied().fold(f64::INFINITY, f64::min);
    let l_max = l_vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l_end = *l_vals.last().unwrap();
    let checks: Vec<ShiftCheck> = SHIFT_LADDER
        .iter()
        .map(|&kk| {
            let offset = kk * t.powf(1.0 / 6.0);
            ShiftCheck {
                shift_k: kk,
                delta_min: l_min - offset,
                delta_max: l_max - offset,
                delta_end: l_end - offset,
                above_quarter_power: l_min - offset >= t.powf(0.25),
                below_third_power: l_max - offset <= kk * t.cbrt(),
                end_below_quarter_power: l_end - offset <= kk * t.powf(0.25),
                slope_bounded: max_abs_slope <= 1.0,
            }
        })
        .collect();
    DeltaReport {
        t,
        big_l_min: l_min,
        big_l_max: l_max,
        max_abs_slope,
        big_l_lower_ok: l_min >= 2.0 * t.powf(0.25),
        big_l_upper_ok: l_max <= 2.0 * (env.c + env.alpha) * t.cbrt(),
        smallest_passing_k: checks.iter().find(|c| c.passed()).map(|c| c.shift_k),
        checks,
    }
}

/// Supremum over `u` of
/// `|L'(0)|L(0) + |L'(u)|L(u) + int_0^u |L''| L + int_0^u |f''| L - |L'(0)| f(0)`
/// from samples on a uniform grid, using centred differences and the trapezoid rule.
pub fn assumption_a_sup_sampled(s: &[f64], big_l: &[f64], f: &[f64]) -> f64 {
    let n = s.len();
    assert!(n >= 3 && big_l.len() == n && f.len() == n, "need at least 3 matching samples");
    let h = s[1] - s[0];
    let d1 = |v: &[f64], i: usize| -> f64 {
        if i == 0 {
            (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        } else if i == n - 1 {
            (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
        } else {
            (v[i + 1] - v[i - 1]) / (2.0 * h)
        }
    };
    let d2 = |v: &[f64], i: usize| -> f64 {
        let j = i.clamp(1, n - 2);
        (v[j + 1] - 2.0 * v[j] + v[j - 1]) / (h * h)
    };
    let lp0 = d1(big_l, 0).abs();
    let base = lp0 * big_l[0] - lp0 * f[0];
    let mut integral = 0.0;
    let mut prev = (d2(big_l, 0).abs() + d2(f, 0).abs()) * big_l[0];
    let mut sup = base + lp0 * big_l[0];
    for i in 1..n {
        let cur = (d2(big_l, i).abs() + d2(f, i).abs()) * big_l[i];
        integral += 0.5 * h * (prev + cur);
        prev = cur;
        sup = sup.max(base + d1(big_l, i).abs() * big_l[i] + integral);
    }
    sup
}

/// The same supremum for an envelope and a barrier curve on `[0, t]`, using `n` grid points.
pub fn assumption_a_sup(f: &crate::curves::CurveSpec, env: &EnvelopeSolution, n: usize) -> f64 {
    let s: Vec<f64> = (0..n).map(|i| env.t * i as f64 / (n - 1) as f64).collect();
    let l: Vec<f64> = s.iter().map(|&x| env.big_l_at(x)).collect();
    let fv: Vec<f64> = s.iter().map(|&x| f.eval(x)).collect();
    assumption_a_sup_sampled(&s, &l, &fv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quarter_critical_solution() {
        let sol = solve_l(cstar() / 4.0, 1e-4).unwrap();
        assert!((sol.alpha - 1.386_829_335).abs() < 1e-6, "alpha {}", sol.alpha);
        assert!(sol.residual < 1e-6, "residual {}", sol.residual);
        assert!(sol.l_at_one.abs() < 1e-4);
        assert_eq!(sol.brackets.len(), 1);
        assert!((sol.l(0.0) - sol.alpha).abs() < 1e-15);
    }

    #[test]
    fn supercritical_has_no_solution() {
        assert!(matches!(
            solve_l(cstar() * 1.2, 1e-4),
            Err(EnvelopeError::NoSolution { .. })
        ));
        assert!(matches!(solve_l(-1.0, 1e-4), Err(EnvelopeError::InvalidC(_))));
    }

    #[test]
    fn interpolant_is_continuous_across_switch() {
        let sol = solve_l(cstar() / 2.0, 1e-4).unwrap();
        let sw = sol.switch_time();
        let a = sol.l(sw - 1e-12);
        let b = sol.l(sw + 1e-12);
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        let sol = solve_l(cstar() / 4.0, 1e-4).unwrap();
        for s in [0.05, 0.3, 0.7, 0.95] {
            let h = 1e-6;
            let fd = (sol.l(s + h) - sol.l(s - h)) / (2.0 * h);
            assert!((fd - sol.l_prime(s)).abs() < 1e-5, "s={s}: {fd} vs {}", sol.l_prime(s));
        }
    }

    #[test]
    fn beta_validation() {
        let sol = solve_l(cstar() / 4.0, 1e-4).unwrap();
        let bound = beta_bound(sol.alpha, sol.c);
        assert!(matches!(
            compute_envelope(&sol, 1e4, bound * 1.01, 2.0),
            Err(EnvelopeError::BetaOutOfRange { .. })
        ));
        assert!(compute_envelope(&sol, 1e4, default_beta(sol.alpha, sol.c), 2.0).is_ok());
    }

    #[test]
    fn synthetic_assumption_a_vanishes_for_flat_inputs() {
        let s: Vec<f64> = (0..1001).map(|i| i as f64 * 0.01).collect();
        let l = vec![3.0; s.len()];
        let f: Vec<f64> = s.iter().map(|x| 2.0 * x).collect();
        assert!(assumption_a_sup_sampled(&s, &l, &f).abs() < 1e-8);
    }
}
