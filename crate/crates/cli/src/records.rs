//! Record rows, CSV output with a JSON sidecar, and reading them back.
//!
//! Reals are written in Rust's shortest round-trip decimal form, so parsing a
//! field recovers the exact `f64` that was written. A missing value is an empty
//! field.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Preset};

pub const SCHEMA_VERSION: u32 = 1;
pub const RECORDS_FILE: &str = "records.csv";
pub const SIDECAR_FILE: &str = "records.json";

/// One observation of one replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct RecordRow {
    pub replicate: usize,
    pub time: f64,
    pub n: usize,
    pub total_mass: f64,
    pub zeta_max: f64,
    pub zmax: f64,
    /// Per threshold in `m_list`: `(d, d_at_origin, D)`.
    pub fronts: Vec<(Option<f64>, bool, Option<f64>)>,
    pub rightmost: f64,
    pub chat_star: Option<f64>,
    pub extras: Vec<Option<f64>>,
}

impl RecordRow {
    /// Values in column order.
    pub fn values(&self) -> Vec<Option<f64>> {
        let mut v = vec![
            Some(self.replicate as f64),
            Some(self.time),
            Some(self.n as f64),
            Some(self.total_mass),
            Some(self.zeta_max),
            Some(self.zmax),
        ];
        for &(d, origin, upper) in &self.fronts {
            v.push(d);
            v.push(Some(origin as u8 as f64));
            v.push(upper);
        }
        v.push(Some(self.rightmost));
        v.push(self.chat_star);
        v.extend(self.extras.iter().copied());
        v
    }
}

/// Label used for a threshold in column names.
pub fn m_label(m: f64) -> String {
    format!("{m:?}")
}

/// Preset-specific columns appended after the common ones.
pub fn extra_columns(cfg: &ExperimentConfig) -> Vec<String> {
    let m_list = cfg.m_list();
    match cfg.preset {
        Preset::FrontLag | Preset::Cstar => {
            let mut cols: Vec<String> = m_list.iter().map(|m| format!("lag_D_{}", m_label(*m))).collect();
            cols.push("lag_rightmost".into());
            if cfg.preset == Preset::Cstar {
                cols.push("chat_star_drops".into());
            }
            cols
        }
        Preset::MaxDensity => Vec::new(),
        Preset::SurfCensus => {
            let mut cols = Vec::new();
            for j in 0..cfg.curves.len() {
                cols.push(format!("time_below_min_{j}"));
                for k in 0..cfg.params.thresholds.len() {
                    cols.push(format!("count_below_{j}_{k}"));
                }
            }
            cols
        }
        Preset::SelfCorrection => vec!["window_mass".into()],
        Preset::MassFloor => vec!["mf_applicable".into(), "mf_eligible".into(), "mf_violations".into()],
        Preset::StripGrowth => (0..cfg.params.tubes.len()).map(|j| format!("tube_count_{j}")).collect(),
        Preset::BoundsVerify | Preset::Envelope => Vec::new(),
    }
}

pub fn columns(cfg: &ExperimentConfig) -> Vec<String> {
    let mut cols: Vec<String> = ["replicate", "time", "n", "total_mass", "zeta_max", "zmax"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in cfg.m_list() {
        let l = m_label(m);
        cols.push(format!("d_{l}"));
        cols.push(format!("d_origin_{l}"));
        cols.push(format!("D_{l}"));
    }
    cols.push("rightmost".into());
    cols.push("chat_star".into());
    cols.extend(extra_columns(cfg));
    cols
}

pub fn format_value(v: Option<f64>) -> String {
    match v {
        None => String::new(),
        Some(x) if x.fract() == 0.0 && x.abs() < 9.0e15 && !(x == 0.0 && x.is_sign_negative()) => format!("{}", x as i64),
        Some(x) => format!("{x:?}"),
    }
}

pub fn parse_value(field: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .with_context(|| format!("bad numeric field {field:?}"))
}

/// Header sidecar: schema, config echo and seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema_version: u32,
    pub preset: Preset,
    pub columns: Vec<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Set once every replicate has been written.
    pub complete: bool,
    /// Replicates stopped early by an engine error, with the message.
    pub truncated: Vec<(usize, String)>,
}

impl Sidecar {
    pub fn new(cfg: &ExperimentConfig, columns: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            preset: cfg.preset,
            columns,
            seed: cfg.sim.seed,
            config: cfg.clone(),
            complete: false,
            truncated: Vec::new(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(SIDECAR_FILE), self)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(SIDECAR_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let s: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if s.schema_version != SCHEMA_VERSION {
            bail!("{}: schema version {} (expected {SCHEMA_VERSION})", path.display(), s.schema_version);
        }
        Ok(s)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Row writer. Every batch is flushed before `write_rows` returns, so a killed
/// run leaves only whole rows behind.
pub struct RecordWriter {
    out: csv::Writer<BufWriter<File>>,
    width: usize,
    pub path: PathBuf,
}

impl RecordWriter {
    pub fn create(path: &Path, columns: &[String]) -> Result<Self> {
        let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        let mut out = csv::Writer::from_writer(BufWriter::new(file));
        out.write_record(columns)?;
        out.flush()?;
        Ok(Self {
            out,
            width: columns.len(),
            path: path.to_path_buf(),
        })
    }

    pub fn write_rows(&mut self, rows: &[Vec<Option<f64>>]) -> Result<()> {
        for row in rows {
            if row.len() != self.width {
                bail!("row has {} values for {} columns", row.len(), self.width);
            }
            self.out.write_record(row.iter().map(|v| format_value(*v)))?;
        }
        self.out.flush()?;
        Ok(())
    }
}

/// A parsed record file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
        let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            let rec = rec.with_context(|| format!("{}: row {}", path.display(), k + 2))?;
            let row = rec
                .iter()
                .map(parse_value)
                .collect::<Result<Vec<_>>>()
                .with_context(|| format!("{}: row {}", path.display(), k + 2))?;
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// `(time, value)` series of one replicate, in file order.
    pub fn series(&self, replicate: usize, col: usize) -> Vec<(f64, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r[0] == Some(replicate as f64))
            .map(|r| (r[1].unwrap_or(f64::NAN), r[col]))
            .collect()
    }

    /// Distinct replicate indices in order of first appearance.
    pub fn replicates(&self) -> Vec<usize> {
        let mut seen: Vec<usize> = Vec::new();
        for r in &self.rows {
            if let Some(i) = r[0] {
                let i = i as usize;
                if seen.last() != Some(&i) && !seen.contains(&i) {
                    seen.push(i);
                }
            }
        }
        seen
    }
}
