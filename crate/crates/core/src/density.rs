//! The density field `zeta(t, x)` and statistics derived from it.
//!
//! `zeta(t, x)` is the total mass within distance one of `x`, excluding
//! particles exactly at `x` (open window, distance zero excluded). The
//! half-window field `z(t, x)` counts mass within distance 1/2 and does include
//! particles at `x`. The logistic variant uses a closed radius-one window that
//! includes every particle at `x`.
//!
//! All sweeps assume positions sorted ascending, which [`PopulationState`]
//! guarantees.

use serde::{Deserialize, Serialize};

use crate::engine::PopulationState;

/// Prefix sums carried in double-double precision so that window sums of
/// small masses next to large ones keep full relative accuracy.
#[derive(Clone, Debug, Default)]
pub struct PrefixSums {
    hi: Vec<f64>,
    lo: Vec<f64>,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Compensated sum.
fn accurate_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut hi, mut lo) = (0.0, 0.0);
    for v in values {
        let (s, e) = two_sum(hi, v);
        hi = s;
        lo += e;
    }
    hi + lo
}

impl PrefixSums {
    pub fn new(values: &[f64]) -> Self {
        let mut p = Self::default();
        p.rebuild(values);
        p
    }

    pub fn rebuild(&mut self, values: &[f64]) {
        self.hi.clear();
        self.lo.clear();
        self.hi.reserve(values.len() + 1);
        self.lo.reserve(values.len() + 1);
        let (mut hi, mut lo) = (0.0, 0.0);
        self.hi.push(hi);
        self.lo.push(lo);
        for &v in values {
            let (s, e) = two_sum(hi, v);
            let (s2, e2) = two_sum(s, lo + e);
            hi = s2;
            lo = e2;
            self.hi.push(hi);
            self.lo.push(lo);
        }
    }

    /// Sum of `values[a..b]`.
    #[inline]
    pub fn range(&self, a: usize, b: usize) -> f64 {
        if b <= a {
            return 0.0;
        }
        (self.hi[b] - self.hi[a]) + (self.lo[b] - self.lo[a])
    }
}

/// Brute-force `zeta(x)` for an arbitrary (unsorted) configuration.
pub fn zeta_at_config(positions: &[f64], masses: &[f64], x: f64) -> f64 {
    let inside = positions
        .iter()
        .zip(masses)
        .filter(|(p, _)| {
            let d = (**p - x).abs();
            d > 0.0 && d < 1.0
        })
        .map(|(_, m)| *m);
    accurate_sum(inside)
}

/// `zeta(t, x)` with the exact open-window, self-excluding convention.
pub fn zeta_at(state: &PopulationState, x: f64) -> f64 {
    let pos = state.positions();
    let mass = state.masses();
    let lo = pos.partition_point(|&p| p - x <= -1.0);
    let e0 = pos.partition_point(|&p| p < x);
    let e1 = pos.partition_point(|&p| p <= x);
    let hi = pos.partition_point(|&p| p - x < 1.0);
    accurate_sum(mass[lo..e0].iter().chain(&mass[e1..hi]).copied())
}

/// `zeta` at every particle of a sorted configuration, written into `out`.
pub fn zeta_at_particles(pos: &[f64], prefix: &PrefixSums, out: &mut Vec<f64>) {
    let n = pos.len();
    out.clear();
    out.reserve(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    let mut i = 0;
    while i < n {
        let x = pos[i];
        let mut e1 = i;
        while e1 < n && pos[e1] == x {
            e1 += 1;
        }
        while pos[lo] - x <= -1.0 {
            lo += 1;
        }
        if hi < e1 {
            hi = e1;
        }
        while hi < n && pos[hi] - x < 1.0 {
            hi += 1;
        }
        let z = prefix.range(lo, i) + prefix.range(e1, hi);
        out.extend(std::iter::repeat_n(z, e1 - i));
        i = e1;
    }
}

/// Closed-window, self-inclusive density at every particle (logistic variant).
pub fn zeta_bar_at_particles(pos: &[f64], prefix: &PrefixSums, out: &mut Vec<f64>) {
    let n = pos.len();
    out.clear();
    out.reserve(n);
    let (mut lo, mut hi) = (0usize, 0usize);
    for &x in pos {
        while pos[lo] - x < -1.0 {
            lo += 1;
        }
        while hi < n && pos[hi] - x <= 1.0 {
            hi += 1;
        }
        out.push(prefix.range(lo, hi));
    }
}

/// Piecewise-constant `x -> zeta(t, x)`.
///
/// `values[j]` holds on the open interval between `breakpoints[j-1]` and
/// `breakpoints[j]`, with unbounded first and last intervals, so
/// `values.len() == breakpoints.len() + 1`. The dip at particle positions is a
/// measure-zero effect and is not represented.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityProfile {
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl DensityProfile {
    pub fn from_sorted(pos: &[f64], mass: &[f64]) -> Self {
        let prefix = PrefixSums::new(mass);
        let n = pos.len();
        let mut breakpoints = Vec::with_capacity(2 * n);
        let (mut a, mut b) = (0usize, 0usize);
        while a < n || b < n {
            let up = if a < n { pos[a] - 1.0 } else { f64::INFINITY };
            let down = if b < n { pos[b] + 1.0 } else { f64::INFINITY };
            let next = up.min(down);
            if breakpoints.last() != Some(&next) {
                breakpoints.push(next);
            }
            if up == next {
                a += 1;
            } else {
                b += 1;
            }
        }
        let mut values = Vec::with_capacity(breakpoints.len() + 1);
        values.push(0.0);
        // Particles active right of breakpoint x: pos - 1 <= x and pos + 1 > x.
        let (mut started, mut ended) = (0usize, 0usize);
        for &x in &breakpoints {
            while started < n && pos[started] - 1.0 <= x {
                started += 1;
            }
            while ended < n && pos[ended] + 1.0 <= x {
                ended += 1;
            }
            values.push(prefix.range(ended, started));
        }
        Self { breakpoints, values }
    }

    /// Interval `j` as `(left, right, value)`; the ends are infinite.
    pub fn interval(&self, j: usize) -> (f64, f64, f64) {
        let left = if j == 0 { f64::NEG_INFINITY } else { self.breakpoints[j - 1] };
        let right = self.breakpoints.get(j).copied().unwrap_or(f64::INFINITY);
        (left, right, self.values[j])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    /// Value of the interval containing `x`; at a breakpoint the interval to its right.
    pub fn value_at(&self, x: f64) -> f64 {
        self.values[self.breakpoints.partition_point(|&b| b <= x)]
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `d(m)`: left end of the first interval meeting `(0, inf)` with value `< m`,
    /// clamped to 0. The flag is set when that interval already contains the origin.
    pub fn lower_front(&self, m: f64) -> (f64, bool) {
        for j in 0..self.len() {
            let (left, right, v) = self.interval(j);
            if right > 0.0 && v < m {
                return if left <= 0.0 { (0.0, true) } else { (left, false) };
            }
        }
        unreachable!("the last interval has value 0")
    }

    /// `D(m)`: right end of the last interval with value `> m`.
    pub fn upper_front(&self, m: f64) -> Option<f64> {
        (0..self.len()).rev().find_map(|j| {
            let (_, right, v) = self.interval(j);
            (v > m).then_some(right)
        })
    }
}

pub fn zeta_profile(state: &PopulationState) -> DensityProfile {
    DensityProfile::from_sorted(state.positions(), state.masses())
}

/// `d(t, m)`; 0 for an empty population.
pub fn front_d(state: &PopulationState, m: f64) -> f64 {
    zeta_profile(state).lower_front(m).0
}

/// `D(t, m)`, or `None` when `zeta <= m` everywhere.
pub fn front_upper(state: &PopulationState, m: f64) -> Option<f64> {
    zeta_profile(state).upper_front(m)
}

/// Front locations for one threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrontStats {
    pub m: f64,
    pub d: Option<f64>,
    /// `d` came from the interval containing the origin.
    pub d_at_origin: bool,
    pub upper: Option<f64>,
}

pub fn front_stats(profile: &DensityProfile, m: f64) -> FrontStats {
    let (d, at_origin) = profile.lower_front(m);
    FrontStats {
        m,
        d: Some(d),
        d_at_origin: at_origin,
        upper: profile.upper_front(m),
    }
}

/// `(argmax, z)` for the half-window field `z(t, x)` on a sorted configuration.
pub fn zmax_sorted(pos: &[f64], mass: &[f64]) -> (f64, f64) {
    if pos.is_empty() {
        return (0.0, 0.0);
    }
    let prefix = PrefixSums::new(mass);
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut j = 0;
    for i in 0..pos.len() {
        if j < i {
            j = i;
        }
        while j + 1 < pos.len() && pos[j + 1] - pos[i] < 1.0 {
            j += 1;
        }
        let v = prefix.range(i, j + 1);
        if v > best.1 {
            best = (0.5 * (pos[i] + pos[j]), v);
        }
    }
    best
}

pub fn zmax(state: &PopulationState) -> (f64, f64) {
    zmax_sorted(state.positions(), state.masses())
}

/// Total mass of particles with position in `[lo, hi]`.
pub fn window_mass(state: &PopulationState, lo: f64, hi: f64) -> f64 {
    let pos = state.positions();
    let a = pos.partition_point(|&p| p < lo);
    let b = pos.partition_point(|&p| p <= hi);
    state.masses()[a..b].iter().sum()
}

/// Stopping times `tau_0 = inf{t : z(t) >= N-1}`,
/// `tau_{k+1} = inf{t > tau_k + gap : z(t) >= N-1}` on a recorded `(t, z)` series.
/// Each time is the first recorded time meeting the condition.
pub fn tau_schedule(series: &[(f64, f64)], n_level: f64, gap: f64) -> Vec<f64> {
    let mut taus: Vec<f64> = Vec::new();
    for &(t, z) in series {
        if z < n_level - 1.0 {
            continue;
        }
        match taus.last() {
            Some(&prev) if t <= prev + gap => {}
            _ => taus.push(t),
        }
    }
    taus
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelfCorrection {
    /// Mean over kept replicates of the fitted `d/dt log(window mass)`.
    pub rate: f64,
    pub per_replicate: Vec<f64>,
    pub kept: usize,
    /// Replicates whose window mass was zero at `t0`.
    pub dropped: usize,
}

/// Growth rate of windowed mass. Each replicate supplies a `(t, window mass)`
/// series; the slope of `log mass` on `[t0, t1]` is fitted by least squares
/// and averaged over replicates.
pub fn self_correction_rate(series: &[Vec<(f64, f64)>], t0: f64, t1: f64) -> SelfCorrection {
    assert!(t1 > t0, "need t1 > t0");
    let mut slopes = Vec::new();
    let mut dropped = 0;
    for rep in series {
        let pts: Vec<(f64, f64)> = rep.iter().copied().filter(|(t, _)| *t >= t0 && *t <= t1).collect();
        let start_ok = pts.first().is_some_and(|&(_, w)| w > 0.0);
        if !start_ok {
            dropped += 1;
            continue;
        }
        // Mass can only vanish if every particle left the window; stop the fit there.
        let pts: Vec<(f64, f64)> = pts.into_iter().take_while(|(_, w)| *w > 0.0).collect();
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
        match crate::stats::linear_fit(&x, &y) {
            Some((_, b)) => slopes.push(b),
            None => dropped += 1,
        }
    }
    let rate = crate::stats::mean(&slopes).unwrap_or(f64::NAN);
    SelfCorrection {
        rate,
        kept: slopes.len(),
        per_replicate: slopes,
        dropped,
    }
}
