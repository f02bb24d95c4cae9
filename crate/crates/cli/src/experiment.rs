//! Preset runners and ensemble orchestration.
//!
//! Replicates run in parallel on the rayon pool; each one is sequential. The
//! calling thread is the only writer and emits replicates in index order as
//! soon as every earlier one has arrived.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use anyhow::{bail, Context, Result};
use massfront_core::bounds::{
    gauss_fact_check, gb_bound_check, mc_bernstein, mc_weighted_geom, population_size_law, reflection_check,
    PathKind,
};
use massfront_core::curves::CurveSpec;
use massfront_core::density::{front_stats, window_mass, zeta_profile, zmax};
use massfront_core::engine::{EngineError, InvariantMonitor};
use massfront_core::envelope::{check_delta_properties, compute_envelope, default_beta, solve_l, SHIFT_LADDER};
use massfront_core::lineage::{census_surf, cstar_estimate, mass_floor_check, tube_count, MassFloor};
use massfront_core::rng::replicate_seed;
use massfront_core::{init_population, run, CurveHandle, Observer, PopulationState, SimConfig, TailBoundReport};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Preset};
use crate::records::{columns, format_value, write_json, RecordRow, RecordWriter, Sidecar, Table, RECORDS_FILE};
use crate::snapshot::{restore, write_snapshot};
use crate::summary::{summarize, Check, Summary};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Continue one replicate from a snapshot instead of starting the ensemble.
    pub resume: Option<PathBuf>,
    /// Print per-replicate progress on stderr.
    pub progress: bool,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub summary: Summary,
    pub out_dir: PathBuf,
    pub warnings: Vec<String>,
}

pub fn snapshot_path(out_dir: &Path, replicate: usize) -> PathBuf {
    out_dir.join(SNAPSHOT_DIR).join(format!("rep_{replicate:05}.snap"))
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(&opts.out_dir).with_context(|| format!("creating {}", opts.out_dir.display()))?;
    match cfg.preset {
        Preset::BoundsVerify => {
            if opts.resume.is_some() {
                bail!("--resume only applies to simulation presets");
            }
            run_bounds(cfg, &opts.out_dir)
        }
        Preset::Envelope => {
            if opts.resume.is_some() {
                bail!("--resume only applies to simulation presets");
            }
            run_envelope(cfg, &opts.out_dir)
        }
        _ => run_simulation(cfg, opts),
    }
}

/// Rows and outcome of one replicate.
#[derive(Debug)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub rows: Vec<Vec<Option<f64>>>,
    /// Engine error that stopped the replicate early.
    pub truncated: Option<String>,
    pub invariant_violations: u64,
    pub first_violation: Option<String>,
    pub state: PopulationState,
}

/// Fresh initial state of replicate `index` with every curve and tube the preset tracks.
pub fn initial_state(cfg: &ExperimentConfig, index: usize) -> Result<(PopulationState, SimConfig)> {
    let sim = SimConfig {
        seed: replicate_seed(cfg.sim.seed, index as u64),
        ..cfg.sim.clone()
    };
    let mut state = init_population(&sim)?;
    if cfg.preset == Preset::Cstar {
        state.register_curve(CurveSpec::GStar)?;
    }
    for c in &cfg.curves {
        state.register_curve(c.clone())?;
    }
    if cfg.preset == Preset::StripGrowth {
        for &c in &cfg.params.tubes {
            state.register_tube(c)?;
        }
    }
    Ok((state, sim))
}

/// Observer turning states into record rows.
struct Probe<'a> {
    cfg: &'a ExperimentConfig,
    m_list: Vec<f64>,
    replicate: usize,
    total_steps: u64,
    /// Handle of the user curves; for cstar the first handle is `GStar`.
    user_curves: Vec<CurveHandle>,
    gstar: Option<CurveHandle>,
    skip_first: bool,
    last_chat: Option<f64>,
    drops: u64,
    upper_history: Vec<(f64, Option<f64>)>,
    monitor: InvariantMonitor,
    rows: Vec<Vec<Option<f64>>>,
    error: Option<String>,
}

impl<'a> Probe<'a> {
    fn new(cfg: &'a ExperimentConfig, replicate: usize, skip_first: bool) -> Self {
        let offset = (cfg.preset == Preset::Cstar) as usize;
        Self {
            cfg,
            m_list: cfg.m_list(),
            replicate,
            total_steps: cfg.sim.total_steps(),
            user_curves: (0..cfg.curves.len()).map(|j| CurveHandle(j + offset)).collect(),
            gstar: (offset == 1).then_some(CurveHandle(0)),
            skip_first,
            last_chat: None,
            drops: 0,
            upper_history: Vec::new(),
            monitor: InvariantMonitor::new(cfg.sim.dynamics_mode),
            rows: Vec::new(),
            error: None,
        }
    }

    fn row(&mut self, state: &PopulationState, chat: Option<f64>) -> Result<RecordRow> {
        let t = state.time();
        let profile = zeta_profile(state);
        let fronts: Vec<_> = self
            .m_list
            .iter()
            .map(|&m| {
                let f = front_stats(&profile, m);
                (f.d, f.d_at_origin, f.upper)
            })
            .collect();
        let rightmost = state.rightmost().unwrap_or(f64::NAN);
        let sqrt2t = std::f64::consts::SQRT_2 * t;
        let mut extras = Vec::new();
        match self.cfg.preset {
            Preset::FrontLag | Preset::Cstar => {
                extras.extend(fronts.iter().map(|f| f.2.map(|d| sqrt2t - d)));
                extras.push(Some(sqrt2t - rightmost));
                if self.cfg.preset == Preset::Cstar {
                    extras.push(Some(self.drops as f64));
                    self.drops = 0;
                }
            }
            Preset::MaxDensity => {}
            Preset::SurfCensus => {
                for &h in &self.user_curves {
                    let census = census_surf(state, h, 0.0)?;
                    extras.push(census.min);
                    for &c in &self.cfg.params.thresholds {
                        let below = census_surf(state, h, c * t.cbrt())?.count_below;
                        extras.push(Some(below as f64));
                    }
                }
            }
            Preset::SelfCorrection => {
                let [lo, hi] = self.cfg.params.window.expect("validated");
                extras.push(Some(window_mass(state, lo, hi)));
            }
            Preset::MassFloor => {
                let beta = self.cfg.params.beta.expect("validated");
                let tol = self.cfg.params.mass_floor_tol;
                match mass_floor_check(state, self.user_curves[0], beta, &self.upper_history, tol)? {
                    MassFloor::NotApplicable { .. } => extras.extend([Some(0.0), None, None]),
                    MassFloor::Checked { eligible, violations } => {
                        extras.extend([Some(1.0), Some(eligible as f64), Some(violations as f64)])
                    }
                }
            }
            Preset::StripGrowth => {
                for &c in &self.cfg.params.tubes {
                    extras.push(Some(tube_count(state, c)? as f64));
                }
            }
            Preset::BoundsVerify | Preset::Envelope => unreachable!("not a simulation preset"),
        }
        Ok(RecordRow {
            replicate: self.replicate,
            time: t,
            n: state.len(),
            total_mass: state.total_mass(),
            zeta_max: profile.max_value(),
            zmax: zmax(state).1,
            fronts,
            rightmost,
            chat_star: chat,
            extras,
        })
    }

    fn observe_inner(&mut self, state: &PopulationState) -> Result<()> {
        self.monitor.observe(state);
        let chat = match self.gstar {
            Some(h) => {
                let c = cstar_estimate(state, h)?;
                if let (Some(prev), Some(now)) = (self.last_chat, c) {
                    if now < prev {
                        self.drops += 1;
                    }
                }
                self.last_chat = c;
                c
            }
            None => None,
        };
        let k = state.step_count();
        let record = !self.skip_first && (k.is_multiple_of(self.cfg.record_every) || k == self.total_steps);
        if record {
            let row = self.row(state, chat)?;
            self.rows.push(row.values());
        }
        if self.cfg.preset == Preset::MassFloor {
            let beta = self.cfg.params.beta.expect("validated");
            self.upper_history.push((state.time(), zeta_profile(state).upper_front(beta)));
        }
        self.skip_first = false;
        Ok(())
    }
}

impl Observer for Probe<'_> {
    fn observe(&mut self, state: &PopulationState) -> Option<Vec<f64>> {
        if self.error.is_none() {
            if let Err(e) = self.observe_inner(state) {
                self.error = Some(format!("{e:#}"));
            }
        }
        None
    }
}

/// Run one replicate from its initial state, or from `start` when resuming.
pub fn run_replicate(cfg: &ExperimentConfig, index: usize, start: Option<PopulationState>) -> Result<ReplicateOutcome> {
    let resumed = start.is_some();
    let state = match start {
        Some(s) => s,
        None => initial_state(cfg, index)?.0,
    };
    let mut probe = Probe::new(cfg, index, resumed);
    if resumed {
        if cfg.preset == Preset::MassFloor {
            bail!("mass-floor needs the density history of the whole run and cannot be resumed");
        }
        if state.step_count() >= cfg.sim.total_steps() {
            bail!(
                "snapshot is at step {} but the horizon ends at step {}",
                state.step_count(),
                cfg.sim.total_steps()
            );
        }
    }
    let (state, truncated) = match run(state, &cfg.sim, &mut [&mut probe]) {
        Ok(out) => (out.state, None),
        Err(fail) => match fail.error {
            EngineError::Capacity { .. } => {
                let msg = fail.error.to_string();
                (fail.state, Some(msg))
            }
            e => return Err(e.into()),
        },
    };
    if let Some(e) = probe.error {
        bail!("replicate {index}: {e}");
    }
    Ok(ReplicateOutcome {
        index,
        rows: probe.rows,
        truncated,
        invariant_violations: probe.monitor.violations,
        first_violation: probe.monitor.first_violation,
        state,
    })
}

fn run_simulation(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<ExperimentOutput> {
    let out_dir = &opts.out_dir;
    let cols = columns(cfg);
    let mut sidecar = Sidecar::new(cfg, cols.clone());
    sidecar.write(out_dir)?;
    let mut writer = RecordWriter::create(&out_dir.join(RECORDS_FILE), &cols)?;
    let mut table = Table::new(cols);
    let mut warnings = Vec::new();
    if cfg.snapshot_final {
        std::fs::create_dir_all(out_dir.join(SNAPSHOT_DIR))?;
    }

    let mut handle = |o: ReplicateOutcome, table: &mut Table, sidecar: &mut Sidecar| -> Result<()> {
        writer.write_rows(&o.rows)?;
        table.rows.extend(o.rows);
        if let Some(msg) = o.truncated {
            sidecar.truncated.push((o.index, msg));
        }
        if o.invariant_violations > 0 {
            bail!(
                "replicate {}: {} mass invariant violations, first: {}",
                o.index,
                o.invariant_violations,
                o.first_violation.unwrap_or_default()
            );
        }
        if cfg.snapshot_final {
            let sim = SimConfig {
                seed: replicate_seed(cfg.sim.seed, o.index as u64),
                ..cfg.sim.clone()
            };
            write_snapshot(&o.state, &sim, o.index, &snapshot_path(out_dir, o.index))?;
        }
        if opts.progress {
            eprintln!("replicate {} done (n = {})", o.index, o.state.len());
        }
        Ok(())
    };

    if let Some(path) = &opts.resume {
        let restored = restore(path, None)?;
        let index = restored.header.replicate;
        let expected = SimConfig {
            seed: replicate_seed(cfg.sim.seed, index as u64),
            ..cfg.sim.clone()
        };
        let restored = restore(path, Some(&expected))?;
        warnings.extend(restored.warnings);
        let outcome = run_replicate(cfg, index, Some(restored.state))?;
        handle(outcome, &mut table, &mut sidecar)?;
    } else {
        let (tx, rx) = mpsc::channel::<(usize, Result<ReplicateOutcome>)>();
        let n = cfg.replicates;
        let result = std::thread::scope(|s| -> Result<()> {
            s.spawn(move || {
                (0..n).into_par_iter().for_each_with(tx, |tx, r| {
                    let _ = tx.send((r, run_replicate(cfg, r, None)));
                });
            });
            let mut pending = BTreeMap::new();
            let mut next = 0;
            let mut first_err = None;
            for (r, outcome) in rx {
                pending.insert(r, outcome);
                while let Some(o) = pending.remove(&next) {
                    next += 1;
                    if first_err.is_some() {
                        continue;
                    }
                    if let Err(e) = o.and_then(|o| handle(o, &mut table, &mut sidecar)) {
                        first_err = Some(e);
                    }
                }
            }
            first_err.map_or(Ok(()), Err)
        });
        result?;
    }

    sidecar.complete = true;
    sidecar.write(out_dir)?;
    let truncated: Vec<usize> = sidecar.truncated.iter().map(|t| t.0).collect();
    let summary = summarize(cfg, &table, &truncated);
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutput {
        summary,
        out_dir: out_dir.clone(),
        warnings,
    })
}

/// Recompute the summary of a finished simulation run from its files.
pub fn summarize_dir(dir: &Path) -> Result<Summary> {
    let sidecar = Sidecar::read(dir)?;
    let table = Table::read(&dir.join(RECORDS_FILE))?;
    if table.columns != sidecar.columns {
        bail!("{}: columns differ from the sidecar", dir.join(RECORDS_FILE).display());
    }
    let truncated: Vec<usize> = sidecar.truncated.iter().map(|t| t.0).collect();
    Ok(summarize(&sidecar.config, &table, &truncated))
}

/// One line of the bounds suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub name: String,
    #[serde(flatten)]
    pub report: TailBoundReport,
}

pub const BOUNDS_FILE: &str = "bounds.csv";

/// Every tail bound of the suite against its Monte Carlo frequency.
pub fn bounds_suite(replicates: u64, seed: u64, path_steps: usize) -> Result<Vec<BoundRow>> {
    let mut rows = Vec::new();
    let mut push = |name: &str, report: TailBoundReport| {
        rows.push(BoundRow {
            name: name.into(),
            report,
        })
    };
    let key = |k: u64| replicate_seed(seed, k);

    let (tight, loose) = mc_bernstein(50, 0.2, 5.0, replicates, key(0));
    push("bernstein_tight", tight);
    push("bernstein_loose", loose);
    push("weighted_geom_v20", mc_weighted_geom(&[1.0; 20], 0.1, 1.0, 20.0, replicates, key(1))?);
    let uneven: Vec<f64> = (1..=8).map(|i| i as f64).collect();
    push("weighted_geom_uneven", mc_weighted_geom(&uneven, 0.2, 0.5, 4.0, replicates, key(2))?);
    push("weighted_geom_single", mc_weighted_geom(&[1.0], 0.25, 1.5, 1.0, replicates, key(3))?);
    for (name, kind, x, k) in [
        ("fact_a_meander_x4", PathKind::Meander, 4.0, 4),
        ("fact_a_meander_x6", PathKind::Meander, 6.0, 5),
        ("fact_a_excursion_x4", PathKind::Excursion, 4.0, 6),
        ("fact_a_excursion_x6", PathKind::Excursion, 6.0, 7),
    ] {
        push(name, gauss_fact_check(kind, x, replicates, path_steps, key(k)));
    }
    push(
        "gauss_paths_excursion_x8",
        gb_bound_check(&[1.0], &[PathKind::Excursion], 8.0, replicates, path_steps, key(8))?,
    );
    let kinds = [PathKind::Meander, PathKind::Excursion, PathKind::Meander, PathKind::Excursion];
    push(
        "gauss_paths_mixed_x8",
        gb_bound_check(&[0.25; 4], &kinds, 8.0, replicates, path_steps / 4, key(9))?,
    );
    for (name, a, k) in [("reflection_a1", 1.0, 10), ("reflection_a2", 2.0, 11)] {
        let r = reflection_check(a, replicates, 64, key(k));
        let ci = 1.96 * r.standard_error;
        push(
            name,
            TailBoundReport {
                bound: r.target,
                empirical: r.empirical,
                replicates: r.replicates,
                ci_halfwidth: ci,
                pass: r.empirical <= r.target + ci,
            },
        );
    }
    let s = std::f64::consts::LN_2;
    let law = population_size_law(s, 1e-3, replicates, key(12), true);
    let p = (-s).exp();
    for k in 2..=5usize {
        let hits: u64 = law.counts.iter().skip(k).sum();
        push(&format!("descendants_tail_ge{k}"), TailBoundReport::from_hits((1.0 - p).powi(k as i32 - 1), hits, replicates));
    }
    Ok(rows)
}

fn run_bounds(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let rows = bounds_suite(cfg.replicates as u64, cfg.sim.seed, cfg.params.path_steps)?;
    let mut w = csv::Writer::from_path(out_dir.join(BOUNDS_FILE))?;
    w.write_record(["name", "bound", "empirical", "replicates", "ci_halfwidth", "pass"])?;
    for r in &rows {
        let b = &r.report;
        w.write_record([
            r.name.clone(),
            format_value(Some(b.bound)),
            format_value(Some(b.empirical)),
            b.replicates.to_string(),
            format_value(Some(b.ci_halfwidth)),
            b.pass.to_string(),
        ])?;
    }
    w.flush()?;
    let summary = Summary {
        schema_version: crate::records::SCHEMA_VERSION,
        preset: cfg.preset,
        replicates: cfg.replicates,
        truncated: Vec::new(),
        per_time: Vec::new(),
        checks: rows
            .iter()
            .map(|r| Check::new(r.name.clone(), Some(r.report.empirical), Some(r.report.pass)))
            .collect(),
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutput {
        summary,
        out_dir: out_dir.to_path_buf(),
        warnings: Vec::new(),
    })
}

/// One `(c, t)` line of the envelope table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub c: f64,
    pub alpha: f64,
    pub residual: f64,
    pub l_at_one: f64,
    pub brackets: usize,
    pub t: f64,
    pub beta: Option<f64>,
    pub u_t: Option<f64>,
    pub big_l_min: Option<f64>,
    pub big_l_max: Option<f64>,
    pub max_abs_slope: Option<f64>,
    pub big_l_lower_ok: Option<bool>,
    pub big_l_upper_ok: Option<bool>,
    pub smallest_k: Option<f64>,
    pub error: Option<String>,
}

pub const ENVELOPE_FILE: &str = "envelope.csv";
const PINNED_POINTS: usize = 401;

fn run_envelope(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ExperimentOutput> {
    let p = &cfg.params;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (i, &c) in p.c_values.iter().enumerate() {
        let lsol = solve_l(c, p.tol)?;
        checks.push(Check::new(format!("c{i}_residual"), Some(lsol.residual), Some(lsol.residual < 1e-6)));
        checks.push(Check::new(format!("c{i}_l_at_one"), Some(lsol.l_at_one), Some(lsol.l_at_one.abs() < 1e-4)));
        let mut w = csv::Writer::from_path(out_dir.join(format!("l_c{i}.csv")))?;
        w.write_record(["s", "l"])?;
        for (s, l) in lsol.grid(PINNED_POINTS) {
            w.write_record([format!("{s:?}"), format!("{l:?}")])?;
        }
        w.flush()?;
        for (j, &t) in p.t_values.iter().enumerate() {
            let mut row = EnvelopeRow {
                c,
                alpha: lsol.alpha,
                residual: lsol.residual,
                l_at_one: lsol.l_at_one,
                brackets: lsol.brackets.len(),
                t,
                beta: None,
                u_t: None,
                big_l_min: None,
                big_l_max: None,
                max_abs_slope: None,
                big_l_lower_ok: None,
                big_l_upper_ok: None,
                smallest_k: None,
                error: None,
            };
            let beta = default_beta(lsol.alpha, c);
            match compute_envelope(&lsol, t, beta, SHIFT_LADDER[0]) {
                Ok(env) => {
                    let rep = check_delta_properties(&env);
                    row.beta = Some(beta);
                    row.u_t = Some(env.u_t);
                    row.big_l_min = Some(rep.big_l_min);
                    row.big_l_max = Some(rep.big_l_max);
                    row.max_abs_slope = Some(rep.max_abs_slope);
                    row.big_l_lower_ok = Some(rep.big_l_lower_ok);
                    row.big_l_upper_ok = Some(rep.big_l_upper_ok);
                    row.smallest_k = rep.smallest_passing_k;
                    if rep.smallest_passing_k.is_none() {
                        let largest = rep.checks.last().expect("ladder is non-empty");
                        row.error = Some(format!(
                            "no shift passes; at K = {} first violated: {}",
                            largest.shift_k,
                            largest.first_violation().unwrap_or("none")
                        ));
                    } else if !rep.big_l_lower_ok {
                        row.error = Some("L >= 2 t^(1/4) violated".into());
                    } else if !rep.big_l_upper_ok {
                        row.error = Some("L <= 2 (c + alpha) t^(1/3) violated".into());
                    }
                    let env = env.with_shift(rep.smallest_passing_k.unwrap_or(SHIFT_LADDER[0]));
                    let mut w = csv::Writer::from_path(out_dir.join(format!("envelope_c{i}_t{j}.csv")))?;
                    w.write_record(["s", "L", "Delta"])?;
                    let stride = (env.s_grid.len() - 1) / (PINNED_POINTS - 1);
                    for k in (0..env.s_grid.len()).step_by(stride.max(1)) {
                        w.write_record([env.s_grid[k], env.big_l[k], env.delta[k]].map(|v| format!("{v:?}")))?;
                    }
                    w.flush()?;
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            let ok = row.big_l_lower_ok == Some(true) && row.big_l_upper_ok == Some(true) && row.smallest_k.is_some();
            checks.push(Check::new(format!("c{i}_t{j}_delta_properties"), row.smallest_k, Some(ok)));
            rows.push(row);
        }
    }
    let mut w = csv::Writer::from_path(out_dir.join(ENVELOPE_FILE))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let summary = Summary {
        schema_version: crate::records::SCHEMA_VERSION,
        preset: cfg.preset,
        replicates: 1,
        truncated: Vec::new(),
        per_time: Vec::new(),
        checks,
    };
    write_json(&out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(ExperimentOutput {
        summary,
        out_dir: out_dir.to_path_buf(),
        warnings: Vec::new(),
    })
}
