//! Ensemble summaries. Everything here is a pure function of the record table,
//! so `report` on a finished run reproduces the in-run summary exactly.

use std::collections::BTreeMap;

use massfront_core::density::tau_schedule;
use massfront_core::density::self_correction_rate;
use massfront_core::stats::{linear_fit, mean, quantile};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Preset};
use crate::records::{m_label, Table, SCHEMA_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub count: usize,
    pub mean: f64,
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let q = |p| quantile(values, p);
        Some(Self {
            count: values.len(),
            mean: mean(values)?,
            q05: q(0.05)?,
            q25: q(0.25)?,
            q50: q(0.5)?,
            q75: q(0.75)?,
            q95: q(0.95)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSummary {
    pub time: f64,
    pub columns: BTreeMap<String, Quantiles>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub pass: Option<bool>,
}

impl Check {
    pub fn new(name: impl Into<String>, value: Option<f64>, pass: Option<bool>) -> Self {
        Self {
            name: name.into(),
            value,
            pass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub preset: Preset,
    pub replicates: usize,
    pub truncated: Vec<usize>,
    pub per_time: Vec<TimeSummary>,
    pub checks: Vec<Check>,
}

impl Summary {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Quantiles of `column` at the recorded time closest to `t`.
    pub fn at(&self, t: f64, column: &str) -> Option<&Quantiles> {
        let ts = self
            .per_time
            .iter()
            .min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))?;
        ts.columns.get(column)
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass != Some(false))
    }
}

type Row = Vec<Option<f64>>;

/// Per-time quantiles of every column across replicates.
pub fn per_time(table: &Table) -> Vec<TimeSummary> {
    let mut by_time: BTreeMap<u64, (f64, Vec<&Row>)> = BTreeMap::new();
    for row in &table.rows {
        let Some(t) = row[1] else { continue };
        // Non-negative times order like their bit patterns.
        by_time.entry(t.to_bits()).or_insert_with(|| (t, Vec::new())).1.push(row);
    }
    by_time
        .into_values()
        .map(|(time, rows)| {
            let mut columns = BTreeMap::new();
            for (j, name) in table.columns.iter().enumerate().skip(2) {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).filter(|v| !v.is_nan()).collect();
                if let Some(q) = Quantiles::of(&vals) {
                    columns.insert(name.clone(), q);
                }
            }
            TimeSummary { time, columns }
        })
        .collect()
}

/// Per replicate, the `(time, value)` pairs of a column where the value is present.
fn series(table: &Table, col: usize) -> Vec<(usize, Vec<(f64, f64)>)> {
    table
        .replicates()
        .into_iter()
        .map(|r| {
            let s = table
                .series(r, col)
                .into_iter()
                .filter_map(|(t, v)| v.map(|v| (t, v)))
                .collect();
            (r, s)
        })
        .collect()
}

/// Values of a column at the last recorded row of each replicate.
fn finals(table: &Table, col: usize) -> Vec<(f64, Option<f64>)> {
    table
        .replicates()
        .into_iter()
        .filter_map(|r| table.series(r, col).last().copied())
        .collect()
}

fn fraction(hits: usize, total: usize) -> Option<f64> {
    (total > 0).then(|| hits as f64 / total as f64)
}

fn sse(x: &[f64], y: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    x.iter().zip(y).map(|(x, y)| (y - f(*x)).powi(2)).sum()
}

/// Whether `a log t + b` fits a series better than `a t + b`, by residual sum of squares.
/// A constant series is fitted exactly by both, so neither wins.
pub fn log_fit_beats_linear(points: &[(f64, f64)]) -> Option<bool> {
    let t: Vec<f64> = points.iter().map(|p| p.0).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1).collect();
    if points.len() >= 2 && y.iter().all(|&v| v == y[0]) {
        return Some(false);
    }
    let lt: Vec<f64> = t.iter().map(|v| v.ln()).collect();
    let (a_lin, b_lin) = linear_fit(&t, &y)?;
    let (a_log, b_log) = linear_fit(&lt, &y)?;
    let lin = sse(&t, &y, |x| a_lin + b_lin * x);
    let log = sse(&lt, &y, |x| a_log + b_log * x);
    Some(log < lin)
}

/// Running maximum of the part of a series with `t0 <= t <= t1` and `t > 0`.
pub fn window_running_max(points: &[(f64, f64)], t0: f64, t1: f64) -> Vec<(f64, f64)> {
    let inside: Vec<(f64, f64)> = points.iter().copied().filter(|&(t, _)| t >= t0 && t <= t1 && t > 0.0).collect();
    running_max(&inside)
}

/// Running maximum of a series.
pub fn running_max(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut best = f64::NEG_INFINITY;
    points
        .iter()
        .map(|&(t, v)| {
            best = best.max(v);
            (t, best)
        })
        .collect()
}

pub fn summarize(cfg: &ExperimentConfig, table: &Table, truncated: &[usize]) -> Summary {
    Summary {
        schema_version: SCHEMA_VERSION,
        preset: cfg.preset,
        replicates: table.replicates().len(),
        truncated: truncated.to_vec(),
        per_time: per_time(table),
        checks: preset_checks(cfg, table),
    }
}

fn preset_checks(cfg: &ExperimentConfig, table: &Table) -> Vec<Check> {
    let col = |name: &str| table.column(name);
    let mut checks = Vec::new();
    match cfg.preset {
        Preset::FrontLag | Preset::Cstar => {
            for m in cfg.m_list() {
                let name = format!("lag_D_{}", m_label(m));
                if let Some(j) = col(&name) {
                    let vals: Vec<f64> = finals(table, j).into_iter().filter_map(|(_, v)| v).collect();
                    let med = quantile(&vals, 0.5);
                    checks.push(Check::new(format!("final_median_{name}_positive"), med, med.map(|v| v > 0.0)));
                }
            }
            if cfg.preset == Preset::Cstar {
                let (Some(jc), Some(jd)) = (col("chat_star"), col("chat_star_drops")) else {
                    return checks;
                };
                let drops = series(table, jd);
                let bad = series(table, jc)
                    .iter()
                    .zip(&drops)
                    .filter(|((_, c), (_, d))| {
                        c.windows(2).any(|w| w[1].1 < w[0].1) || d.iter().any(|&(_, v)| v > 0.0)
                    })
                    .count();
                checks.push(Check::new("chat_star_non_monotone_replicates", Some(bad as f64), Some(bad == 0)));
            }
        }
        Preset::MaxDensity => {
            let (t0, t1) = cfg.fit_window();
            if let Some(j) = col("zeta_max") {
                let mut wins = 0;
                let mut fitted = 0;
                for (_, s) in series(table, j) {
                    if let Some(w) = log_fit_beats_linear(&window_running_max(&s, t0, t1)) {
                        fitted += 1;
                        wins += w as usize;
                    }
                }
                let frac = fraction(wins, fitted);
                checks.push(Check::new("log_fit_wins_fraction", frac, frac.map(|f| f >= 0.9)));
            }
            if let Some(j) = col("zmax") {
                let counts: Vec<f64> = series(table, j)
                    .iter()
                    .map(|(_, s)| tau_schedule(s, cfg.params.tau_level, cfg.params.tau_gap).len() as f64)
                    .collect();
                checks.push(Check::new("tau_count_mean", mean(&counts), None));
            }
        }
        Preset::SelfCorrection => {
            if let Some(j) = col("window_mass") {
                let (t0, t1) = cfg.fit_window();
                let s: Vec<Vec<(f64, f64)>> = series(table, j).into_iter().map(|(_, s)| s).collect();
                let rate = self_correction_rate(&s, t0, t1);
                checks.push(Check::new("growth_rate", rate.rate.is_finite().then_some(rate.rate), None));
                checks.push(Check::new("replicates_kept", Some(rate.kept as f64), None));
                checks.push(Check::new("replicates_dropped", Some(rate.dropped as f64), None));
            }
        }
        Preset::MassFloor => {
            let (Some(ja), Some(jv)) = (col("mf_applicable"), col("mf_violations")) else {
                return checks;
            };
            let applicable = finals(table, ja).iter().filter(|(_, v)| *v == Some(1.0)).count();
            let violations: f64 = table.rows.iter().filter_map(|r| r[jv]).sum();
            checks.push(Check::new("applicable_replicates", Some(applicable as f64), None));
            checks.push(Check::new("mass_floor_violations", Some(violations), Some(violations == 0.0)));
        }
        Preset::StripGrowth => {
            let base = std::f64::consts::E - cfg.params.tube_eps;
            for (k, c) in cfg.params.tubes.iter().enumerate() {
                let Some(j) = col(&format!("tube_count_{k}")) else { continue };
                let f = finals(table, j);
                let hits = f.iter().filter(|(t, v)| v.is_some_and(|v| v >= base.powf(*t))).count();
                checks.push(Check::new(
                    format!("tube_{c:?}_fraction_above_growth"),
                    fraction(hits, f.len()),
                    None,
                ));
            }
        }
        Preset::SurfCensus => {
            for h in 0..cfg.curves.len() {
                for (k, c) in cfg.params.thresholds.iter().enumerate() {
                    let Some(j) = col(&format!("count_below_{h}_{k}")) else { continue };
                    let f = finals(table, j);
                    let hits = f.iter().filter(|(_, v)| v.is_some_and(|v| v > 0.0)).count();
                    checks.push(Check::new(
                        format!("curve_{h}_fraction_surfing_C{c:?}"),
                        fraction(hits, f.len()),
                        None,
                    ));
                }
            }
        }
        Preset::BoundsVerify | Preset::Envelope => {}
    }
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_vs_linear() {
        let log: Vec<(f64, f64)> = (1..50).map(|i| (i as f64 * 0.25, (i as f64 * 0.25).ln())).collect();
        assert_eq!(log_fit_beats_linear(&log), Some(true));
        let lin: Vec<(f64, f64)> = (1..50).map(|i| (i as f64 * 0.25, i as f64)).collect();
        assert_eq!(log_fit_beats_linear(&lin), Some(false));
        assert_eq!(log_fit_beats_linear(&[(1.0, 1.0)]), None);
        assert_eq!(log_fit_beats_linear(&[(2.0, 1.5), (3.0, 1.5), (4.0, 1.5)]), Some(false));
    }

    #[test]
    fn running_max_is_monotone() {
        let r = running_max(&[(0.0, 1.0), (1.0, 0.5), (2.0, 3.0)]);
        assert_eq!(r, vec![(0.0, 1.0), (1.0, 1.0), (2.0, 3.0)]);
        // The maximum restarts at the window's left end.
        let w = window_running_max(&[(0.0, 5.0), (1.0, 0.5), (2.0, 0.7), (3.0, 0.6)], 1.0, 3.0);
        assert_eq!(w, vec![(1.0, 0.5), (2.0, 0.7), (3.0, 0.7)]);
    }

    #[test]
    fn per_time_groups_rows() {
        let mut t = Table::new(vec!["replicate".into(), "time".into(), "x".into()]);
        t.rows = vec![
            vec![Some(0.0), Some(0.0), Some(1.0)],
            vec![Some(0.0), Some(1.0), Some(2.0)],
            vec![Some(1.0), Some(0.0), Some(3.0)],
            vec![Some(1.0), Some(1.0), None],
        ];
        let s = per_time(&t);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].columns["x"].q50, 2.0);
        assert_eq!(s[1].columns["x"].count, 1);
    }
}
