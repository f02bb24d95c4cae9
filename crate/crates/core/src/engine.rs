//! Grid-time simulation of the particle system.
//!
//! Each step of length `dt`:
//! 1. evaluates the density at every particle (open self-excluding window, or
//!    the closed self-inclusive window in the logistic variant);
//! 2. adds `dt` to the occupation time below each registered curve for
//!    particles at or below it at the start of the step;
//! 3. multiplies masses by `exp(-zeta dt)` (or `exp((1 - zeta_bar) dt)`);
//! 4. moves every particle by an independent `N(0, dt)` increment;
//! 5. splits each particle with probability `1 - exp(-dt)`;
//! 6. re-sorts by position and updates path functionals at the new time.
//!
//! The density is held fixed over the step at its start-of-step value, which
//! makes `mass = exp(-sum of zeta dt)` exact on the grid.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::density::{zeta_at_particles, zeta_bar_at_particles, PrefixSums};
use crate::lineage::{self, LineageAccumulators, LineageRegistry};
use crate::rng::{mix64, KeyedRng, RngState};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DynamicsMode {
    #[default]
    Standard,
    /// Closed-window density including self, mass growth `exp((1 - zeta_bar) dt)`,
    /// and mass halved between the two children at a split.
    LogisticVariant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub max_particles: usize,
    pub dynamics_mode: DynamicsMode,
    pub motion_frozen: bool,
    pub branching_disabled: bool,
    /// `(position, mass)` of each initial particle.
    pub initial: Vec<(f64, f64)>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 1.0,
            seed: 0,
            max_particles: 10_000_000,
            dynamics_mode: DynamicsMode::Standard,
            motion_frozen: false,
            branching_disabled: false,
            initial: vec![(0.0, 1.0)],
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("dt must be positive and finite, got {0}")]
    InvalidDt(f64),
    #[error("horizon must be non-negative and finite, got {0}")]
    InvalidHorizon(f64),
    #[error("max_particles must be at least 1")]
    ZeroCapacity,
    #[error("initial configuration is empty")]
    EmptyInitial,
    #[error("initial particle {index} has mass {mass}, outside (0, 1]")]
    InvalidMass { index: usize, mass: f64 },
    #[error("initial particle {index} has non-finite position {position}")]
    InvalidPosition { index: usize, position: f64 },
    #[error("{count} initial particles exceed max_particles = {max}")]
    InitialOverCapacity { count: usize, max: usize },
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(ConfigError::InvalidDt(self.dt));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(ConfigError::InvalidHorizon(self.horizon));
        }
        if self.max_particles == 0 {
            return Err(ConfigError::ZeroCapacity);
        }
        if self.initial.is_empty() {
            return Err(ConfigError::EmptyInitial);
        }
        for (index, &(position, mass)) in self.initial.iter().enumerate() {
            if !(mass > 0.0 && mass <= 1.0) {
                return Err(ConfigError::InvalidMass { index, mass });
            }
            if !position.is_finite() {
                return Err(ConfigError::InvalidPosition { index, position });
            }
        }
        if self.initial.len() > self.max_particles {
            return Err(ConfigError::InitialOverCapacity {
                count: self.initial.len(),
                max: self.max_particles,
            });
        }
        Ok(())
    }

    /// Number of grid steps needed to reach the horizon.
    pub fn total_steps(&self) -> u64 {
        let r = self.horizon / self.dt;
        let nearest = r.round();
        if (r - nearest).abs() <= 1e-9 * r.max(1.0) {
            nearest as u64
        } else {
            r.ceil() as u64
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("{births} births at step {step} would take {current} particles past max_particles = {max}")]
    Capacity {
        step: u64,
        current: usize,
        births: usize,
        max: usize,
    },
    #[error("state at step {step} is already at the horizon ({total} steps)")]
    PastHorizon { step: u64, total: u64 },
}

/// Read-only view of one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct Particle {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub position: f64,
    pub mass: f64,
    pub zeta_integral: f64,
    pub lineage: LineageAccumulators,
}

pub(crate) const NO_PARENT: u64 = u64::MAX;

/// Buffers reused across steps; never part of the observable state.
#[derive(Clone, Debug, Default)]
struct Scratch {
    prefix: PrefixSums,
    zeta: Vec<f64>,
    branch: Vec<bool>,
    normal: Vec<f64>,
    order: Vec<(f64, u64, u32)>,
    starts: Vec<u32>,
    fill: Vec<u32>,
    f64_buf: Vec<f64>,
    u64_buf: Vec<u64>,
}

/// Full particle configuration at a grid time, sorted by `(position, id)`.
///
/// Columns are stored separately; per-curve accumulators are packed with a
/// stride of two (`time_below`, `sup_deficit`) per registered curve.
#[derive(Clone, Debug)]
pub struct PopulationState {
    pub(crate) time: f64,
    pub(crate) step_count: u64,
    pub(crate) rng: RngState,
    pub(crate) ids: Vec<u64>,
    pub(crate) parents: Vec<u64>,
    pub(crate) positions: Vec<f64>,
    pub(crate) masses: Vec<f64>,
    pub(crate) zeta_integrals: Vec<f64>,
    pub(crate) min_positions: Vec<f64>,
    pub(crate) registry: LineageRegistry,
    pub(crate) curve_acc: Vec<f64>,
    pub(crate) tube_bits: Vec<u64>,
    scratch: Scratch,
}

/// Raw columns of a state, used for persistence.
#[derive(Clone, Debug, PartialEq)]
pub struct StateParts {
    pub time: f64,
    pub step_count: u64,
    pub rng: RngState,
    pub registry: LineageRegistry,
    pub particles: Vec<Particle>,
}

impl PartialEq for PopulationState {
    /// Bitwise equality of every observable column.
    fn eq(&self, other: &Self) -> bool {
        fn bits(a: &[f64], b: &[f64]) -> bool {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
        }
        self.time.to_bits() == other.time.to_bits()
            && self.step_count == other.step_count
            && self.rng == other.rng
            && self.ids == other.ids
            && self.parents == other.parents
            && bits(&self.positions, &other.positions)
            && bits(&self.masses, &other.masses)
            && bits(&self.zeta_integrals, &other.zeta_integrals)
            && bits(&self.min_positions, &other.min_positions)
            && self.registry == other.registry
            && bits(&self.curve_acc, &other.curve_acc)
            && self.tube_bits == other.tube_bits
    }
}

impl PopulationState {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn rng_state(&self) -> RngState {
        self.rng
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn zeta_integrals(&self) -> &[f64] {
        &self.zeta_integrals
    }

    pub fn registry(&self) -> &LineageRegistry {
        &self.registry
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn rightmost(&self) -> Option<f64> {
        self.positions.last().copied()
    }

    pub fn particle(&self, i: usize) -> Particle {
        Particle {
            id: self.ids[i],
            parent_id: (self.parents[i] != NO_PARENT).then_some(self.parents[i]),
            position: self.positions[i],
            mass: self.masses[i],
            zeta_integral: self.zeta_integrals[i],
            lineage: lineage::accumulators_of(self, i),
        }
    }

    pub fn particles(&self) -> impl Iterator<Item = Particle> + '_ {
        (0..self.len()).map(|i| self.particle(i))
    }

    /// 64-bit digest of every observable bit of the state.
    pub fn digest(&self) -> u64 {
        let mut h = Digest::default();
        h.push(self.time.to_bits());
        h.push(self.step_count);
        h.push(self.rng.seed);
        h.push(self.rng.next_id);
        for col in [&self.ids, &self.parents, &self.tube_bits] {
            h.push(col.len() as u64);
            col.iter().for_each(|&v| h.push(v));
        }
        for col in [
            &self.positions,
            &self.masses,
            &self.zeta_integrals,
            &self.min_positions,
            &self.curve_acc,
        ] {
            h.push(col.len() as u64);
            col.iter().for_each(|v| h.push(v.to_bits()));
        }
        for c in &self.registry.curves {
            for b in format!("{c:?}").bytes() {
                h.push(b as u64);
            }
        }
        self.registry.tubes.iter().for_each(|c| h.push(c.to_bits()));
        h.finish()
    }

    /// Decompose into plain data.
    pub fn to_parts(&self) -> StateParts {
        StateParts {
            time: self.time,
            step_count: self.step_count,
            rng: self.rng,
            registry: self.registry.clone(),
            particles: self.particles().collect(),
        }
    }

    /// Rebuild a state from plain data. Particles are re-sorted.
    pub fn from_parts(parts: StateParts) -> Self {
        let nc = parts.registry.curves.len();
        let mut s = Self {
            time: parts.time,
            step_count: parts.step_count,
            rng: parts.rng,
            ids: Vec::new(),
            parents: Vec::new(),
            positions: Vec::new(),
            masses: Vec::new(),
            zeta_integrals: Vec::new(),
            min_positions: Vec::new(),
            registry: parts.registry,
            curve_acc: Vec::new(),
            tube_bits: Vec::new(),
            scratch: Scratch::default(),
        };
        for p in parts.particles {
            s.ids.push(p.id);
            s.parents.push(p.parent_id.unwrap_or(NO_PARENT));
            s.positions.push(p.position);
            s.masses.push(p.mass);
            s.zeta_integrals.push(p.zeta_integral);
            s.min_positions.push(p.lineage.min_position);
            for h in 0..nc {
                s.curve_acc.push(p.lineage.time_below.get(h).copied().unwrap_or(0.0));
                s.curve_acc.push(p.lineage.sup_deficit.get(h).copied().unwrap_or(f64::NEG_INFINITY));
            }
            let mut bits = 0u64;
            for (j, ok) in p.lineage.tube_ok.iter().enumerate() {
                if *ok {
                    bits |= 1 << j;
                }
            }
            s.tube_bits.push(bits);
        }
        s.sort();
        s
    }

    fn sort(&mut self) {
        let n = self.len();
        let order = &mut self.scratch.order;
        order.clear();
        order.extend((0..n).map(|i| (self.positions[i], self.ids[i], i as u32)));
        if order.windows(2).all(|w| (w[0].0, w[0].1) <= (w[1].0, w[1].1)) {
            return;
        }
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.permute();
    }

    /// Re-sort after a step. Ties in position are already in id order (children are
    /// appended with fresh, increasing ids), so a stable sort on position suffices.
    /// Stable counting sort into `n` equal-width buckets, then insertion sort per bucket.
    fn sort_stepped(&mut self) {
        let n = self.len();
        let pos = &self.positions;
        let (lo, hi) = pos
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if n < 2 || hi <= lo {
            return self.sort();
        }
        let scale = n as f64 / (hi - lo);
        let bucket = |x: f64| (((x - lo) * scale) as usize).min(n - 1);
        let sc = &mut self.scratch;
        sc.starts.clear();
        sc.starts.resize(n + 1, 0);
        for &x in pos {
            sc.starts[bucket(x) + 1] += 1;
        }
        for b in 0..n {
            sc.starts[b + 1] += sc.starts[b];
        }
        sc.fill.clear();
        sc.fill.extend_from_slice(&sc.starts[..n]);
        sc.order.clear();
        sc.order.resize(n, (0.0, 0, 0));
        for (i, &x) in pos.iter().enumerate() {
            let b = bucket(x);
            sc.order[sc.fill[b] as usize] = (x, self.ids[i], i as u32);
            sc.fill[b] += 1;
        }
        let order = &mut sc.order;
        for b in 0..n {
            let (a, e) = (sc.starts[b] as usize, sc.starts[b + 1] as usize);
            for j in a + 1..e {
                let item = order[j];
                let mut k = j;
                while k > a && order[k - 1].0 > item.0 {
                    order[k] = order[k - 1];
                    k -= 1;
                }
                order[k] = item;
            }
        }
        // Two moved particles landing on the same double: restore id order locally.
        let mut i = 0;
        while i < n {
            let mut j = i + 1;
            while j < n && order[j].0 == order[i].0 {
                j += 1;
            }
            if j - i > 1 {
                order[i..j].sort_unstable_by_key(|o| o.1);
            }
            i = j;
        }
        self.permute();
    }

    fn permute(&mut self) {
        let order = &self.scratch.order;
        let fb = &mut self.scratch.f64_buf;
        for col in [
            &mut self.positions,
            &mut self.masses,
            &mut self.zeta_integrals,
            &mut self.min_positions,
        ] {
            fb.clear();
            fb.extend(order.iter().map(|o| col[o.2 as usize]));
            std::mem::swap(col, fb);
        }
        let ub = &mut self.scratch.u64_buf;
        for col in [&mut self.ids, &mut self.parents, &mut self.tube_bits] {
            ub.clear();
            ub.extend(order.iter().map(|o| col[o.2 as usize]));
            std::mem::swap(col, ub);
        }
        let stride = 2 * self.registry.curves.len();
        if stride > 0 {
            fb.clear();
            for o in order.iter() {
                let i = o.2 as usize;
                fb.extend_from_slice(&self.curve_acc[i * stride..(i + 1) * stride]);
            }
            std::mem::swap(&mut self.curve_acc, fb);
        }
    }
}

#[derive(Default)]
struct Digest(u64);

impl Digest {
    fn push(&mut self, v: u64) {
        self.0 = mix64(self.0 ^ v).wrapping_add(0x9E37_79B9_7F4A_7C15);
    }

    fn finish(&self) -> u64 {
        mix64(self.0)
    }
}

/// Digest of a record stream, for determinism checks.
pub fn records_digest(records: &[Record]) -> u64 {
    let mut h = Digest::default();
    for r in records {
        h.push(r.observer as u64);
        h.push(r.step);
        h.push(r.time.to_bits());
        h.push(r.values.len() as u64);
        r.values.iter().for_each(|v| h.push(v.to_bits()));
    }
    h.finish()
}

pub fn init_population(config: &SimConfig) -> Result<PopulationState, ConfigError> {
    config.validate()?;
    let mut initial = config.initial.clone();
    initial.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = initial.len();
    Ok(PopulationState {
        time: 0.0,
        step_count: 0,
        rng: RngState {
            seed: config.seed,
            next_id: n as u64,
        },
        ids: (0..n as u64).collect(),
        parents: vec![NO_PARENT; n],
        positions: initial.iter().map(|p| p.0).collect(),
        masses: initial.iter().map(|p| p.1).collect(),
        zeta_integrals: vec![0.0; n],
        min_positions: initial.iter().map(|p| p.0).collect(),
        registry: LineageRegistry::default(),
        curve_acc: Vec::new(),
        tube_bits: vec![0; n],
        scratch: Scratch::default(),
    })
}

/// Advance `state` by one grid step. On error the state is left untouched.
pub fn step(state: &mut PopulationState, config: &SimConfig) -> Result<(), EngineError> {
    let total = config.total_steps();
    if state.step_count >= total {
        return Err(EngineError::PastHorizon {
            step: state.step_count,
            total,
        });
    }
    let n = state.len();
    let dt = config.dt;
    let k = state.step_count;
    let seed = state.rng.seed;
    let p_branch = -(-dt).exp_m1();
    let sqrt_dt = dt.sqrt();

    // Draws first: uniform for the branching clock, then the Gaussian increment.
    let sc = &mut state.scratch;
    sc.branch.clear();
    sc.normal.clear();
    let mut births = 0usize;
    for &id in &state.ids {
        let mut rng = KeyedRng::for_particle(seed, id, k);
        let u: f64 = rng.random();
        let z: f64 = rng.sample(StandardNormal);
        let b = !config.branching_disabled && u < p_branch;
        births += b as usize;
        sc.branch.push(b);
        sc.normal.push(z * sqrt_dt);
    }
    if n + births > config.max_particles {
        return Err(EngineError::Capacity {
            step: k,
            current: n,
            births,
            max: config.max_particles,
        });
    }

    sc.prefix.rebuild(&state.masses);
    match config.dynamics_mode {
        DynamicsMode::Standard => zeta_at_particles(&state.positions, &sc.prefix, &mut sc.zeta),
        DynamicsMode::LogisticVariant => zeta_bar_at_particles(&state.positions, &sc.prefix, &mut sc.zeta),
    }

    lineage::accumulate_occupation(state, dt);

    let sc = &mut state.scratch;
    for i in 0..n {
        let z = sc.zeta[i];
        state.zeta_integrals[i] += z * dt;
        match config.dynamics_mode {
            DynamicsMode::Standard => state.masses[i] *= (-z * dt).exp(),
            DynamicsMode::LogisticVariant => state.masses[i] *= ((1.0 - z) * dt).exp(),
        }
    }

    if !config.motion_frozen {
        for (x, dx) in state.positions.iter_mut().zip(&sc.normal) {
            *x += dx;
        }
    }

    if births > 0 {
        let stride = 2 * state.registry.curves.len();
        for i in 0..n {
            if !state.scratch.branch[i] {
                continue;
            }
            let id = state.rng.next_id;
            state.rng.next_id += 1;
            if config.dynamics_mode == DynamicsMode::LogisticVariant {
                state.masses[i] *= 0.5;
            }
            state.ids.push(id);
            state.parents.push(state.ids[i]);
            state.positions.push(state.positions[i]);
            state.masses.push(state.masses[i]);
            state.zeta_integrals.push(state.zeta_integrals[i]);
            state.min_positions.push(state.min_positions[i]);
            state.tube_bits.push(state.tube_bits[i]);
            state.curve_acc.extend_from_within(i * stride..(i + 1) * stride);
        }
    }

    state.sort_stepped();
    state.step_count += 1;
    state.time = state.step_count as f64 * dt;
    lineage::accumulate_endpoint(state);
    Ok(())
}

/// Hook called on the starting state and after every step.
pub trait Observer {
    fn observe(&mut self, state: &PopulationState) -> Option<Vec<f64>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub observer: usize,
    pub step: u64,
    pub time: f64,
    pub values: Vec<f64>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub state: PopulationState,
    pub records: Vec<Record>,
}

/// A run stopped by an engine error, with everything produced before it.
#[derive(Debug)]
pub struct RunFailure {
    pub error: EngineError,
    pub state: PopulationState,
    pub records: Vec<Record>,
}

fn observe_all(state: &PopulationState, observers: &mut [&mut dyn Observer], records: &mut Vec<Record>) {
    for (j, obs) in observers.iter_mut().enumerate() {
        if let Some(values) = obs.observe(state) {
            records.push(Record {
                observer: j,
                step: state.step_count,
                time: state.time,
                values,
            });
        }
    }
}

/// Step to the horizon, observing the starting state and every step.
pub fn run(
    mut state: PopulationState,
    config: &SimConfig,
    observers: &mut [&mut dyn Observer],
) -> Result<RunOutput, Box<RunFailure>> {
    let mut records = Vec::new();
    observe_all(&state, observers, &mut records);
    let total = config.total_steps();
    while state.step_count < total {
        if let Err(error) = step(&mut state, config) {
            return Err(Box::new(RunFailure { error, state, records }));
        }
        observe_all(&state, observers, &mut records);
    }
    Ok(RunOutput { state, records })
}

/// Checks the per-particle mass invariants at every observation.
///
/// Standard mode: `mass == m0 exp(-zeta_integral)` to `1e-10 (1 + zeta_integral)`,
/// where `m0` is the initial mass of the lineage's root, and mass never increases
/// along a lineage. Logistic variant: `mass <= 1 + 1e-6`.
#[derive(Debug, Default)]
pub struct InvariantMonitor {
    pub mode: DynamicsMode,
    /// Mass at the previous check and root mass, indexed by particle id (NaN if unseen).
    previous: Vec<f64>,
    root_mass: Vec<f64>,
    started: bool,
    pub checks: u64,
    pub violations: u64,
    pub first_violation: Option<String>,
}

impl InvariantMonitor {
    pub fn new(mode: DynamicsMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    fn flag(&mut self, msg: impl FnOnce() -> String) {
        self.violations += 1;
        if self.first_violation.is_none() {
            self.first_violation = Some(msg());
        }
    }

    /// `(root mass, previous mass)` of a particle or, for a newborn, of its parent.
    /// A parent already visited in this pass reports its new mass, which the
    /// child shares. On the first pass nothing is a newborn: a state picked up
    /// mid-run has children whose masses left their parent's long ago.
    fn lookup(&self, id: u64, parent: u64) -> Option<(f64, f64)> {
        let get = |k: u64| {
            let k = usize::try_from(k).ok()?;
            let prev = *self.previous.get(k)?;
            (!prev.is_nan()).then(|| (self.root_mass[k], prev))
        };
        get(id).or_else(|| if parent == NO_PARENT || !self.started { None } else { get(parent) })
    }

    pub fn check(&mut self, state: &PopulationState) {
        // Ids are handed out sequentially, so dense tables stay compact.
        if let Some(&max_id) = state.ids.iter().max() {
            let need = max_id as usize + 1;
            if self.previous.len() < need {
                self.previous.resize(need, f64::NAN);
                self.root_mass.resize(need, f64::NAN);
            }
        }
        for i in 0..state.len() {
            let (id, m, zi) = (state.ids[i], state.masses[i], state.zeta_integrals[i]);
            self.checks += 1;
            match self.mode {
                DynamicsMode::Standard => {
                    let (m0, before) = match self.lookup(id, state.parents[i]) {
                        Some(v) => v,
                        None => {
                            if self.started {
                                self.flag(|| format!("particle {id} at step {} has no known ancestor", state.step_count));
                            }
                            // Monitoring starts here; take the current state as reference.
                            (m * zi.exp(), f64::NAN)
                        }
                    };
                    if (m - m0 * (-zi).exp()).abs() > 1e-10 * (1.0 + zi) {
                        self.flag(|| format!("particle {id} at step {}: mass {m} vs exp(-{zi})", state.step_count));
                    }
                    if m > before {
                        self.flag(|| format!("particle {id} at step {}: mass rose {before} -> {m}", state.step_count));
                    }
                    self.root_mass[id as usize] = m0;
                }
                DynamicsMode::LogisticVariant => {
                    if !(m > 0.0) || m > 1.0 + 1e-6 {
                        self.flag(|| format!("particle {id} at step {}: mass {m} outside (0, 1]", state.step_count));
                    }
                }
            }
            self.previous[id as usize] = m;
        }
        self.started = true;
    }
}

impl Observer for InvariantMonitor {
    fn observe(&mut self, state: &PopulationState) -> Option<Vec<f64>> {
        self.check(state);
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(initial: Vec<(f64, f64)>) -> SimConfig {
        SimConfig {
            initial,
            ..SimConfig::default()
        }
    }

    #[test]
    fn default_initial_condition() {
        let s = init_population(&SimConfig::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.positions(), &[0.0]);
        assert_eq!(s.masses(), &[1.0]);
        assert_eq!(s.time(), 0.0);
    }

    #[test]
    fn initial_sorted() {
        let s = init_population(&cfg(vec![(2.0, 1.0), (-1.0, 0.5)])).unwrap();
        assert_eq!(s.positions(), &[-1.0, 2.0]);
        assert_eq!(s.masses(), &[0.5, 1.0]);
    }

    #[test]
    fn config_errors() {
        assert_eq!(
            init_population(&cfg(vec![(0.0, 1.5)])).unwrap_err(),
            ConfigError::InvalidMass { index: 0, mass: 1.5 }
        );
        assert_eq!(init_population(&cfg(vec![])).unwrap_err(), ConfigError::EmptyInitial);
        let bad = SimConfig { dt: 0.0, ..SimConfig::default() };
        assert!(matches!(bad.validate(), Err(ConfigError::InvalidDt(_))));
    }

    #[test]
    fn zero_horizon_is_a_no_op() {
        let c = SimConfig { horizon: 0.0, ..SimConfig::default() };
        let s = init_population(&c).unwrap();
        let out = run(s.clone(), &c, &mut []).unwrap();
        assert_eq!(out.state, s);
        let mut s2 = s.clone();
        assert!(matches!(step(&mut s2, &c), Err(EngineError::PastHorizon { .. })));
    }

    #[test]
    fn isolated_particle_keeps_mass() {
        let c = SimConfig {
            branching_disabled: true,
            horizon: 0.5,
            ..SimConfig::default()
        };
        let out = run(init_population(&c).unwrap(), &c, &mut []).unwrap();
        assert_eq!(out.state.masses(), &[1.0]);
    }

    #[test]
    fn frozen_pair_decays_exactly() {
        let c = SimConfig {
            dt: 0.1,
            horizon: 0.1,
            motion_frozen: true,
            branching_disabled: true,
            initial: vec![(0.0, 1.0), (0.5, 1.0)],
            ..SimConfig::default()
        };
        let mut s = init_population(&c).unwrap();
        step(&mut s, &c).unwrap();
        for &m in s.masses() {
            assert!((m - 0.904_837_418_035_959_6).abs() < 1e-15);
        }
    }

    #[test]
    fn capacity_error_leaves_state_intact() {
        let c = SimConfig {
            dt: 0.5,
            horizon: 50.0,
            max_particles: 3,
            ..SimConfig::default()
        };
        let s = init_population(&c).unwrap();
        let fail = run(s, &c, &mut []).unwrap_err();
        assert!(matches!(fail.error, EngineError::Capacity { .. }));
        assert!(fail.state.len() <= 3);
    }

    #[test]
    fn logistic_children_split_mass() {
        let c = SimConfig {
            dt: 1e-2,
            horizon: 3.0,
            dynamics_mode: DynamicsMode::LogisticVariant,
            seed: 3,
            ..SimConfig::default()
        };
        let mut mon = InvariantMonitor::new(DynamicsMode::LogisticVariant);
        let out = run(init_population(&c).unwrap(), &c, &mut [&mut mon]).unwrap();
        assert!(out.state.len() > 1);
        assert_eq!(mon.violations, 0, "{:?}", mon.first_violation);
    }

    #[test]
    fn standard_invariants_hold() {
        let c = SimConfig {
            dt: 1e-2,
            horizon: 4.0,
            seed: 11,
            ..SimConfig::default()
        };
        let mut mon = InvariantMonitor::new(DynamicsMode::Standard);
        let out = run(init_population(&c).unwrap(), &c, &mut [&mut mon]).unwrap();
        assert!(out.state.len() > 5);
        assert_eq!(mon.violations, 0, "{:?}", mon.first_violation);
        let pos = out.state.positions();
        assert!(pos.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn monitor_can_start_mid_run() {
        let c = SimConfig {
            dt: 1e-2,
            horizon: 3.0,
            seed: 11,
            ..SimConfig::default()
        };
        let mid = run(init_population(&c).unwrap(), &c, &mut []).unwrap().state;
        assert!(mid.parents.iter().any(|&p| p != NO_PARENT));
        let longer = SimConfig { horizon: 5.0, ..c };
        let mut mon = InvariantMonitor::new(DynamicsMode::Standard);
        run(mid, &longer, &mut [&mut mon]).unwrap();
        assert_eq!(mon.violations, 0, "{:?}", mon.first_violation);
    }

    fn assert_lex_sorted(s: &PopulationState) {
        let key: Vec<_> = s.positions().iter().zip(s.ids()).collect();
        assert!(key.windows(2).all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 < w[1].1)));
    }

    #[test]
    fn stepped_sort_orders_by_position_then_id() {
        for frozen in [false, true] {
            let c = SimConfig {
                dt: 1e-2,
                horizon: 3.0,
                seed: 9,
                motion_frozen: frozen,
                initial: vec![(0.5, 1.0), (0.0, 1.0), (0.5, 1.0), (-3.0, 0.2)],
                ..SimConfig::default()
            };
            let mut s = init_population(&c).unwrap();
            while s.step_count() < c.total_steps() {
                step(&mut s, &c).unwrap();
                assert_lex_sorted(&s);
            }
            let mut resorted = s.clone();
            resorted.sort();
            assert_eq!(resorted, s);
        }
    }

    #[test]
    fn parts_round_trip() {
        let c = SimConfig { dt: 1e-2, horizon: 2.0, seed: 5, ..SimConfig::default() };
        let out = run(init_population(&c).unwrap(), &c, &mut []).unwrap();
        let back = PopulationState::from_parts(out.state.to_parts());
        assert_eq!(back, out.state);
        assert_eq!(back.digest(), out.state.digest());
    }
}
