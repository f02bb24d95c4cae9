//! Closed-form tail bounds and Monte Carlo checks that they hold.
//!
//! Every check compares an analytic upper bound with an empirical frequency
//! and passes when `empirical <= bound + 95% CI half-width`. They are one-sided:
//! the bounds are never expected to be tight.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{init_population, run, SimConfig};
use crate::rng::KeyedRng;
use crate::stats::{normal_sf, tv_distance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundsError {
    #[error("eps must lie in (0, 1/2), got {0}")]
    EpsOutOfRange(f64),
    #[error("delta must be positive, got {0}")]
    InvalidDelta(f64),
    #[error("V must be at least 1, got {0}")]
    InvalidV(f64),
    #[error("weights have max/sum = {ratio}, exceeding 1/V = {limit} for V = {v}")]
    WeightsTooConcentrated { ratio: f64, limit: f64, v: f64 },
    #[error("x = {x} is below 8 sqrt(T) = {min} for total length T = {total}")]
    XTooSmall { x: f64, min: f64, total: f64 },
    #[error("need at least one path, and lengths and kinds of equal size")]
    BadPaths,
    #[error("{0} must be positive")]
    NonPositive(&'static str),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailBoundReport {
    pub bound: f64,
    pub empirical: f64,
    pub replicates: u64,
    pub ci_halfwidth: f64,
    pub pass: bool,
}

impl TailBoundReport {
    pub fn from_hits(bound: f64, hits: u64, replicates: u64) -> Self {
        let p = hits as f64 / replicates as f64;
        let ci = 1.96 * (p * (1.0 - p) / replicates as f64).sqrt();
        Self {
            bound,
            empirical: p,
            replicates,
            ci_halfwidth: ci,
            pass: p <= bound + ci,
        }
    }
}

/// `(e^c (V/(V+c))^{V+c}, (eV/c)^c)`. The second form needs `c > 0`.
pub fn bernstein_bound(v: f64, c: f64) -> (f64, Option<f64>) {
    assert!(v > 0.0 && c >= 0.0, "need V > 0 and c >= 0");
    let tight = (c + (v + c) * (v / (v + c)).ln()).exp();
    let loose = (c > 0.0).then(|| (c * (std::f64::consts::E * v / c).ln()).exp());
    (tight, loose)
}

/// Empirical check of both Bernstein forms on a sum of `n` Bernoulli(`p`)
/// variables, with `V` set to the exact variance.
pub fn mc_bernstein(n: u32, p: f64, c: f64, replicates: u64, seed: u64) -> (TailBoundReport, TailBoundReport) {
    let v = n as f64 * p * (1.0 - p);
    let (tight, loose) = bernstein_bound(v, c);
    let level = n as f64 * p + c;
    let hits = (0..replicates)
        .filter(|&r| {
            let mut rng = KeyedRng::for_replicate(seed, r);
            let s = (0..n).filter(|_| rng.random::<f64>() < p).count();
            s as f64 >= level
        })
        .count() as u64;
    (
        TailBoundReport::from_hits(tight, hits, replicates),
        TailBoundReport::from_hits(loose.unwrap_or(f64::INFINITY), hits, replicates),
    )
}

/// `2 (2^{1+delta} eps^delta)^V` for weighted sums of `Geom(1 - eps)` variables.
pub fn weighted_geom_bound(eps: f64, delta: f64, v: f64) -> Result<f64, BoundsError> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(BoundsError::EpsOutOfRange(eps));
    }
    if !(delta > 0.0) {
        return Err(BoundsError::InvalidDelta(delta));
    }
    if !(v >= 1.0) {
        return Err(BoundsError::InvalidV(v));
    }
    Ok(2.0 * (v * ((1.0 + delta) * 2f64.ln() + delta * eps.ln())).exp())
}

/// `G` on `{1, 2, ...}` with `P(G >= k) = eps^{k-1}`.
pub fn sample_geom(eps: f64, rng: &mut impl Rng) -> u64 {
    let u: f64 = 1.0 - rng.random::<f64>();
    1 + (u.ln() / eps.ln()).floor() as u64
}

/// Empirical `P(sum r_i G_i >= (1 + delta) sum r_i)` against the closed-form bound.
pub fn mc_weighted_geom(
    r: &[f64],
    eps: f64,
    delta: f64,
    v: f64,
    replicates: u64,
    seed: u64,
) -> Result<TailBoundReport, BoundsError> {
    let bound = weighted_geom_bound(eps, delta, v)?;
    let total: f64 = r.iter().sum();
    let max = r.iter().copied().fold(0.0, f64::max);
    let ratio = max / total;
    if !(total > 0.0) || ratio > 1.0 / v {
        return Err(BoundsError::WeightsTooConcentrated { ratio, limit: 1.0 / v, v });
    }
    let level = (1.0 + delta) * total;
    let hits = (0..replicates)
        .filter(|&k| {
            let mut rng = KeyedRng::for_replicate(seed, k);
            r.iter().map(|&w| w * sample_geom(eps, &mut rng) as f64).sum::<f64>() >= level
        })
        .count() as u64;
    Ok(TailBoundReport::from_hits(bound, hits, replicates))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Meander,
    Excursion,
}

/// Brownian excursion of the given length on `n_steps + 1` grid points:
/// a discrete Brownian bridge rotated to start at its minimum.
pub fn sample_excursion(n_steps: usize, length: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(n_steps >= 2 && length > 0.0);
    let sd = (1.0 / n_steps as f64).sqrt();
    let mut walk = Vec::with_capacity(n_steps + 1);
    walk.push(0.0);
    let mut w = 0.0;
    for _ in 0..n_steps {
        w += sd * rng.sample::<f64, _>(StandardNormal);
        walk.push(w);
    }
    let end = walk[n_steps];
    let bridge: Vec<f64> = (0..n_steps)
        .map(|k| walk[k] - k as f64 / n_steps as f64 * end)
        .collect();
    let m = (0..n_steps).min_by(|&a, &b| bridge[a].total_cmp(&bridge[b])).unwrap();
    let scale = length.sqrt();
    let mut out: Vec<f64> = (0..n_steps)
        .map(|k| scale * (bridge[(m + k) % n_steps] - bridge[m]).max(0.0))
        .collect();
    out.push(0.0);
    out
}

/// Brownian meander of the given length on `n_steps + 1` grid points.
///
/// A meander on `[0, 1]` is a three-dimensional Bessel bridge from 0 to a
/// Rayleigh-distributed endpoint `rho`, i.e. the norm of
/// `(u rho + b1(u), b2(u), b3(u))` with independent standard Brownian bridges.
pub fn sample_meander(n_steps: usize, length: f64, rng: &mut impl Rng) -> Vec<f64> {
    assert!(n_steps >= 2 && length > 0.0);
    let rho = (-2.0 * (1.0 - rng.random::<f64>()).ln()).sqrt();
    let sd = (1.0 / n_steps as f64).sqrt();
    let mut walks = [vec![0.0; n_steps + 1], vec![0.0; n_steps + 1], vec![0.0; n_steps + 1]];
    for w in walks.iter_mut() {
        for k in 1..=n_steps {
            w[k] = w[k - 1] + sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let scale = length.sqrt();
    (0..=n_steps)
        .map(|k| {
            let u = k as f64 / n_steps as f64;
            let b: Vec<f64> = walks.iter().map(|w| w[k] - u * w[n_steps]).collect();
            let x = u * rho + b[0];
            scale * (x * x + b[1] * b[1] + b[2] * b[2]).sqrt()
        })
        .collect()
}

pub fn sample_path(kind: PathKind, n_steps: usize, length: f64, rng: &mut impl Rng) -> Vec<f64> {
    match kind {
        PathKind::Meander => sample_meander(n_steps, length, rng),
        PathKind::Excursion => sample_excursion(n_steps, length, rng),
    }
}

fn path_max(p: &[f64]) -> f64 {
    p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Default grid resolution for path samplers.
pub const DEFAULT_STEPS: usize = 1 << 10;

/// `P(max W >= x)` for a unit meander or excursion against `4 P(N >= x/4)`.
pub fn gauss_fact_check(kind: PathKind, x: f64, replicates: u64, n_steps: usize, seed: u64) -> TailBoundReport {
    let bound = 4.0 * normal_sf(x / 4.0);
    let hits = (0..replicates)
        .filter(|&r| {
            let mut rng = KeyedRng::for_replicate(seed, r);
            path_max(&sample_path(kind, n_steps, 1.0, &mut rng)) >= x
        })
        .count() as u64;
    TailBoundReport::from_hits(bound, hits, replicates)
}

/// Independent paths of lengths `t_i`: `P(max over all >= x)` against
/// `exp(-x^2 / 16T)` with `T = sum t_i`, valid for `x >= 8 sqrt(T)`.
pub fn gb_bound_check(
    lengths: &[f64],
    kinds: &[PathKind],
    x: f64,
    replicates: u64,
    n_steps: usize,
    seed: u64,
) -> Result<TailBoundReport, BoundsError> {
    if lengths.is_empty() || lengths.len() != kinds.len() {
        return Err(BoundsError::BadPaths);
    }
    if lengths.iter().any(|&t| !(t > 0.0)) {
        return Err(BoundsError::NonPositive("path length"));
    }
    let total: f64 = lengths.iter().sum();
    let min = 8.0 * total.sqrt();
    if x < min {
        return Err(BoundsError::XTooSmall { x, min, total });
    }
    let bound = (-x * x / (16.0 * total)).exp();
    let hits = (0..replicates)
        .filter(|&r| {
            let mut rng = KeyedRng::for_replicate(seed, r);
            lengths
                .iter()
                .zip(kinds)
                .any(|(&t, &k)| path_max(&sample_path(k, n_steps, t, &mut rng)) >= x)
        })
        .count() as u64;
    Ok(TailBoundReport::from_hits(bound, hits, replicates))
}

/// Two-sided agreement of an estimate with an exact value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactCheck {
    pub target: f64,
    pub empirical: f64,
    pub standard_error: f64,
    pub replicates: u64,
    /// `|empirical - target| <= 3 SE`.
    pub pass: bool,
}

impl ExactCheck {
    pub fn new(target: f64, samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        Self {
            target,
            empirical: mean,
            standard_error: se,
            replicates: samples.len() as u64,
            pass: (mean - target).abs() <= 3.0 * se,
        }
    }
}

/// `P(sup_{s <= 1} B(s) >= a)` against `2 P(N >= a)`.
///
/// Each path is simulated on `n_steps` steps and the maximum inside every step
/// is drawn exactly from the Brownian bridge law, so the estimate is unbiased.
pub fn reflection_check(a: f64, replicates: u64, n_steps: usize, seed: u64) -> ExactCheck {
    let h = 1.0 / n_steps as f64;
    let sd = h.sqrt();
    let samples: Vec<f64> = (0..replicates)
        .map(|r| {
            let mut rng = KeyedRng::for_replicate(seed, r);
            let mut x = 0.0;
            for _ in 0..n_steps {
                let y = x + sd * rng.sample::<f64, _>(StandardNormal);
                let u = 1.0 - rng.random::<f64>();
                let m = 0.5 * (x + y + ((y - x).powi(2) - 2.0 * h * u.ln()).sqrt());
                if m >= a {
                    return 1.0;
                }
                x = y;
            }
            0.0
        })
        .collect();
    ExactCheck::new(2.0 * normal_sf(a), &samples)
}

/// Law of the number of descendants at time `s` of a single ancestor, as
/// produced by the engine, against `Geom(e^{-s})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomLawReport {
    pub s: f64,
    pub dt: f64,
    pub counts: Vec<u64>,
    pub tv_distance: f64,
    pub mean: ExactCheck,
}

impl GeomLawReport {
    pub fn pass(&self, tv_tolerance: f64) -> bool {
        self.tv_distance < tv_tolerance && self.mean.pass
    }
}

/// `P(G = k) = (1 - p)^{k-1} p` on `{1, 2, ...}`.
pub fn geom_pmf(p: f64, k: usize) -> f64 {
    if k == 0 {
        0.0
    } else {
        (1.0 - p).powi(k as i32 - 1) * p
    }
}

/// Run the engine `replicates` times from one particle to time `s` with the
/// grid step `s / ceil(s / dt_max)` and tabulate the population size.
pub fn population_size_law(s: f64, dt_max: f64, replicates: u64, seed: u64, frozen: bool) -> GeomLawReport {
    let steps = (s / dt_max).ceil().max(1.0);
    let dt = s / steps;
    let mut counts: Vec<u64> = Vec::new();
    let mut sizes = Vec::with_capacity(replicates as usize);
    for r in 0..replicates {
        let cfg = SimConfig {
            dt,
            horizon: s,
            seed: crate::rng::replicate_seed(seed, r),
            motion_frozen: frozen,
            ..SimConfig::default()
        };
        let out = run(init_population(&cfg).expect("valid config"), &cfg, &mut []).expect("within capacity");
        let n = out.state.len();
        if counts.len() <= n {
            counts.resize(n + 1, 0);
        }
        counts[n] += 1;
        sizes.push(n as f64);
    }
    let p = (-s).exp();
    let support = counts.len().max(64);
    GeomLawReport {
        s,
        dt,
        tv_distance: tv_distance(&counts, |k| geom_pmf(p, k), support),
        mean: ExactCheck::new(s.exp(), &sizes),
        counts,
    }
}

/// Descendant counts with positions frozen; branching does not depend on motion.
pub fn descendant_geom_check(s: f64, replicates: u64, seed: u64) -> GeomLawReport {
    population_size_law(s, 1e-3, replicates, seed, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bernstein_values() {
        let (_, loose) = bernstein_bound(1.0, std::f64::consts::E.powi(2));
        assert!((loose.unwrap() - (-std::f64::consts::E.powi(2)).exp()).abs() < 1e-15);
        let (tight, loose) = bernstein_bound(2.0, 0.0);
        assert_eq!(tight, 1.0);
        assert_eq!(loose, None);
    }

    #[test]
    fn weighted_geom_values() {
        let b = weighted_geom_bound(0.1, 1.0, 10.0).unwrap();
        assert!((b - 2.0 * 0.4f64.powi(10)).abs() < 1e-15);
        assert!(weighted_geom_bound(0.5, 1.0, 10.0).is_err());
        assert!(weighted_geom_bound(0.1, 1e-12, 3.0).unwrap() > 1.0);
    }

    #[test]
    fn geometric_sampler_tail() {
        let mut rng = KeyedRng::new(1, 2, 3);
        let n = 200_000;
        let eps = 0.3;
        let hits = (0..n).filter(|_| sample_geom(eps, &mut rng) >= 3).count();
        let p = hits as f64 / n as f64;
        assert!((p - eps * eps).abs() < 0.004, "{p}");
    }

    #[test]
    fn excursion_shape() {
        let mut rng = KeyedRng::new(9, 0, 0);
        for _ in 0..50 {
            let e = sample_excursion(256, 2.0, &mut rng);
            assert_eq!(e.len(), 257);
            assert_eq!(e[0], 0.0);
            assert_eq!(e[256], 0.0);
            assert!(e.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn meander_starts_at_zero() {
        let mut rng = KeyedRng::new(9, 1, 0);
        let m = sample_meander(128, 1.0, &mut rng);
        assert_eq!(m[0], 0.0);
        assert!(m.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(
            gb_bound_check(&[1.0], &[PathKind::Excursion], 7.9, 10, 64, 0),
            Err(BoundsError::XTooSmall { .. })
        ));
        assert!(matches!(
            mc_weighted_geom(&[1.0, 1.0], 0.1, 1.0, 3.0, 10, 0),
            Err(BoundsError::WeightsTooConcentrated { .. })
        ));
    }

    #[test]
    fn vacuous_fact_bound_passes() {
        let r = gauss_fact_check(PathKind::Meander, 0.01, 200, 64, 0);
        assert!(r.bound > 1.0 && r.pass);
    }
}
