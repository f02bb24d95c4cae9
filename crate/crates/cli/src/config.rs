//! Experiment configuration: strict TOML with per-preset validation.

use std::fmt;
use std::path::PathBuf;

use massfront_core::curves::{cstar, CurveSpec};
use massfront_core::lineage::MAX_TUBES;
use massfront_core::SimConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    FrontLag,
    MaxDensity,
    Cstar,
    SurfCensus,
    SelfCorrection,
    MassFloor,
    BoundsVerify,
    Envelope,
    StripGrowth,
}

impl Preset {
    pub const ALL: [Preset; 9] = [
        Preset::FrontLag,
        Preset::MaxDensity,
        Preset::Cstar,
        Preset::SurfCensus,
        Preset::SelfCorrection,
        Preset::MassFloor,
        Preset::BoundsVerify,
        Preset::Envelope,
        Preset::StripGrowth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::FrontLag => "front-lag",
            Preset::MaxDensity => "max-density",
            Preset::Cstar => "cstar",
            Preset::SurfCensus => "surf-census",
            Preset::SelfCorrection => "self-correction",
            Preset::MassFloor => "mass-floor",
            Preset::BoundsVerify => "bounds-verify",
            Preset::Envelope => "envelope",
            Preset::StripGrowth => "strip-growth",
        }
    }

    /// Presets that run the particle system and write `records.csv`.
    pub fn simulates(self) -> bool {
        !matches!(self, Preset::BoundsVerify | Preset::Envelope)
    }

    pub fn default_m_list(self) -> Vec<f64> {
        match self {
            Preset::FrontLag => vec![0.5],
            _ => vec![0.25, 0.5, 0.75],
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Preset-specific knobs. Only the fields a preset reads are validated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// surf-census: constants `C`; particles with occupation time below `C t^{1/3}` are counted.
    pub thresholds: Vec<f64>,
    /// mass-floor: density level `beta`.
    pub beta: Option<f64>,
    pub mass_floor_tol: f64,
    /// strip-growth: tube half-widths.
    pub tubes: Vec<f64>,
    /// strip-growth: counts are compared with `(e - tube_eps)^t`.
    pub tube_eps: f64,
    /// self-correction: the window `[lo, hi]` whose mass is tracked.
    pub window: Option<[f64; 2]>,
    /// Fitting interval for self-correction and max-density. `fit_end` defaults to the horizon.
    pub fit_start: Option<f64>,
    pub fit_end: Option<f64>,
    /// max-density: stopping-time level `N` and gap.
    pub tau_level: f64,
    pub tau_gap: f64,
    /// envelope: drift constants and horizons.
    pub c_values: Vec<f64>,
    pub t_values: Vec<f64>,
    pub tol: f64,
    /// bounds-verify: grid steps per sampled path.
    pub path_steps: usize,
}

impl Default for Params {
    fn default() -> Self {
        let c = cstar();
        Self {
            thresholds: vec![0.5, 1.0, 2.0],
            beta: None,
            mass_floor_tol: 1e-6,
            tubes: Vec::new(),
            tube_eps: 0.5,
            window: None,
            fit_start: None,
            fit_end: None,
            tau_level: 5.0,
            tau_gap: 1.0,
            c_values: vec![c / 4.0, c / 2.0, 0.75 * c],
            t_values: vec![1e4, 1e6],
            tol: 1e-4,
            path_steps: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub preset: Preset,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default = "one")]
    pub replicates: usize,
    /// Thresholds for `d(t, m)` and `D(t, m)`; filled from the preset default when absent.
    #[serde(default)]
    pub m_list: Option<Vec<f64>>,
    #[serde(default)]
    pub curves: Vec<CurveSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_record_every")]
    pub record_every: u64,
    /// Write the final state of every replicate as a snapshot.
    #[serde(default)]
    pub snapshot_final: bool,
    #[serde(default)]
    pub params: Params,
}

fn one() -> usize {
    1
}

fn default_record_every() -> u64 {
    100
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("replicates must be at least 1")]
    ZeroReplicates,
    #[error("record_every must be at least 1")]
    ZeroRecordEvery,
    #[error("preset {preset} requires `{field}`")]
    MissingField { preset: Preset, field: &'static str },
    #[error("invalid `{field}`: {reason}")]
    InvalidField { field: &'static str, reason: String },
    #[error("invalid `sim`: {0}")]
    Sim(#[from] massfront_core::engine::ConfigError),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidField {
        field,
        reason: reason.into(),
    }
}

/// Parse and validate. Unknown keys, type mismatches and missing fields are
/// reported with their key and position.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    if cfg.m_list.is_none() {
        cfg.m_list = Some(cfg.preset.default_m_list());
    }
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            sim: SimConfig::default(),
            replicates: 1,
            m_list: Some(preset.default_m_list()),
            curves: Vec::new(),
            output_dir: None,
            record_every: default_record_every(),
            snapshot_final: false,
            params: Params::default(),
        }
    }

    pub fn m_list(&self) -> Vec<f64> {
        self.m_list.clone().unwrap_or_else(|| self.preset.default_m_list())
    }

    pub fn fit_window(&self) -> (f64, f64) {
        let start = self.params.fit_start.unwrap_or(match self.preset {
            Preset::MaxDensity => 2.0,
            _ => 0.0,
        });
        (start, self.params.fit_end.unwrap_or(self.sim.horizon))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.replicates == 0 {
            return Err(ConfigError::ZeroReplicates);
        }
        if self.record_every == 0 {
            return Err(ConfigError::ZeroRecordEvery);
        }
        self.sim.validate()?;
        let m_list = self.m_list();
        if m_list.is_empty() || m_list.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(invalid("m_list", "needs at least one finite positive threshold"));
        }
        for c in &self.curves {
            c.validate().map_err(|e| invalid("curves", e.to_string()))?;
        }
        let p = &self.params;
        let missing = |field| ConfigError::MissingField {
            preset: self.preset,
            field,
        };
        match self.preset {
            Preset::SurfCensus => {
                if self.curves.is_empty() {
                    return Err(missing("curves"));
                }
                if p.thresholds.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
                    return Err(invalid("params.thresholds", "must be finite and non-negative"));
                }
            }
            Preset::MassFloor => {
                if self.curves.is_empty() {
                    return Err(missing("curves"));
                }
                match p.beta {
                    None => return Err(missing("params.beta")),
                    Some(b) if !(b.is_finite() && b > 0.0) => return Err(invalid("params.beta", "must be positive")),
                    _ => {}
                }
                if !(p.mass_floor_tol >= 0.0 && p.mass_floor_tol < 1.0) {
                    return Err(invalid("params.mass_floor_tol", "must lie in [0, 1)"));
                }
            }
            Preset::StripGrowth => {
                if p.tubes.is_empty() {
                    return Err(missing("params.tubes"));
                }
                if p.tubes.len() > MAX_TUBES || p.tubes.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
                    return Err(invalid("params.tubes", format!("need 1 to {MAX_TUBES} positive half-widths")));
                }
                if !(p.tube_eps > 0.0 && p.tube_eps < std::f64::consts::E - 1.0) {
                    return Err(invalid("params.tube_eps", "must lie in (0, e - 1)"));
                }
            }
            Preset::SelfCorrection => match p.window {
                None => return Err(missing("params.window")),
                Some([lo, hi]) if !(lo < hi) => return Err(invalid("params.window", "needs lo < hi")),
                _ => {
                    let (t0, t1) = self.fit_window();
                    if !(t0 < t1) {
                        return Err(invalid("params.fit_start", "fit interval is empty"));
                    }
                }
            },
            Preset::MaxDensity => {
                if !(p.tau_level > 1.0 && p.tau_gap > 0.0) {
                    return Err(invalid("params.tau_level", "need tau_level > 1 and tau_gap > 0"));
                }
            }
            Preset::Envelope => {
                let c = cstar();
                if p.c_values.is_empty() || p.c_values.iter().any(|v| !(*v > 0.0 && *v < c)) {
                    return Err(invalid("params.c_values", format!("each c must lie in (0, {c})")));
                }
                if p.t_values.is_empty() || p.t_values.iter().any(|t| !(t.is_finite() && *t > 1.0)) {
                    return Err(invalid("params.t_values", "each t must exceed 1"));
                }
                if !(p.tol > 0.0) {
                    return Err(invalid("params.tol", "must be positive"));
                }
            }
            Preset::BoundsVerify => {
                if p.path_steps < 2 {
                    return Err(invalid("params.path_steps", "must be at least 2"));
                }
            }
            Preset::FrontLag | Preset::Cstar => {}
        }
        Ok(())
    }
}
