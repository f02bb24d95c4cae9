//! Bit-exact population snapshots.
//!
//! Line 1 is a JSON header: schema, config hash, replicate, time, step count,
//! RNG state, particle count and the lineage registry. Each following line is
//! one particle, whitespace separated:
//!
//! ```text
//! id parent position mass zeta_integral min_position tube_bits [time_below sup_deficit]...
//! ```
//!
//! `parent` is `-` for an initial particle and every real is a hexadecimal float.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use massfront_core::engine::StateParts;
use massfront_core::lineage::LineageRegistry;
use massfront_core::rng::RngState;
use massfront_core::{CurveSpec, LineageAccumulators, Particle, PopulationState, SimConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::hexfloat;

pub const SNAPSHOT_SCHEMA: &str = "massfront-snapshot/1";

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line 1: schema {found:?} is not {SNAPSHOT_SCHEMA:?}")]
    Schema { found: String },
    #[error("line {line}: file ends after {got} of {expected} particles")]
    Truncated { line: usize, got: usize, expected: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub schema: String,
    pub config_hash: String,
    pub replicate: usize,
    pub time: String,
    pub step_count: u64,
    pub rng_seed: u64,
    pub next_id: u64,
    pub particles: usize,
    pub curves: Vec<CurveSpec>,
    pub tubes: Vec<String>,
}

/// SHA-256 over the fields that determine the dynamics. The horizon is left
/// out so that a run can be resumed with a longer one.
pub fn config_hash(sim: &SimConfig) -> String {
    let mut key = sim.clone();
    key.horizon = 0.0;
    let text = serde_json::to_string(&key).expect("config serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SnapshotError + '_ {
    move |source| SnapshotError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_snapshot(state: &PopulationState, sim: &SimConfig, replicate: usize, path: &Path) -> Result<(), SnapshotError> {
    let parts = state.to_parts();
    let header = Header {
        schema: SNAPSHOT_SCHEMA.into(),
        config_hash: config_hash(sim),
        replicate,
        time: hexfloat::format(parts.time),
        step_count: parts.step_count,
        rng_seed: parts.rng.seed,
        next_id: parts.rng.next_id,
        particles: parts.particles.len(),
        curves: parts.registry.curves.clone(),
        tubes: parts.registry.tubes.iter().map(|&c| hexfloat::format(c)).collect(),
    };
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    let mut line = serde_json::to_string(&header).expect("header serializes");
    line.push('\n');
    for p in &parts.particles {
        write_particle(&mut line, p);
        out.write_all(line.as_bytes()).map_err(io_err(path))?;
        line.clear();
    }
    out.write_all(line.as_bytes()).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn write_particle(line: &mut String, p: &Particle) {
    write!(line, "{} ", p.id).unwrap();
    match p.parent_id {
        Some(id) => write!(line, "{id}").unwrap(),
        None => line.push('-'),
    }
    for x in [p.position, p.mass, p.zeta_integral, p.lineage.min_position] {
        write!(line, " {}", hexfloat::format(x)).unwrap();
    }
    let bits = p
        .lineage
        .tube_ok
        .iter()
        .enumerate()
        .fold(0u64, |b, (j, ok)| b | (*ok as u64) << j);
    write!(line, " {bits}").unwrap();
    for (tb, sd) in p.lineage.time_below.iter().zip(&p.lineage.sup_deficit) {
        write!(line, " {} {}", hexfloat::format(*tb), hexfloat::format(*sd)).unwrap();
    }
    line.push('\n');
}

/// A restored state and anything worth warning about.
#[derive(Debug)]
pub struct Restored {
    pub state: PopulationState,
    pub header: Header,
    pub warnings: Vec<String>,
}

/// Read a snapshot. When `sim` is given, a differing config hash produces a warning.
pub fn restore(path: &Path, sim: Option<&SimConfig>) -> Result<Restored, SnapshotError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(file).lines();
    let first = match lines.next() {
        Some(l) => l.map_err(io_err(path))?,
        None => {
            return Err(SnapshotError::Malformed {
                line: 1,
                reason: "empty file, expected a header".into(),
            })
        }
    };
    let header = parse_header(&first)?;
    let time = hexfloat::parse(&header.time).map_err(|e| SnapshotError::Malformed {
        line: 1,
        reason: e.to_string(),
    })?;
    let tubes = header
        .tubes
        .iter()
        .map(|t| hexfloat::parse(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| SnapshotError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?;
    let mut particles = Vec::with_capacity(header.particles);
    for k in 0..header.particles {
        let line_no = k + 2;
        let text = match lines.next() {
            Some(l) => l.map_err(io_err(path))?,
            None => {
                return Err(SnapshotError::Truncated {
                    line: line_no,
                    got: k,
                    expected: header.particles,
                })
            }
        };
        particles.push(parse_particle(&text, header.curves.len(), tubes.len(), line_no)?);
    }
    if let Some(extra) = lines.next() {
        let extra = extra.map_err(io_err(path))?;
        if !extra.trim().is_empty() {
            return Err(SnapshotError::Malformed {
                line: header.particles + 2,
                reason: format!("header declares {} particles but more follow", header.particles),
            });
        }
    }
    let mut warnings = Vec::new();
    if let Some(sim) = sim {
        let expected = config_hash(sim);
        if expected != header.config_hash {
            warnings.push(format!(
                "snapshot config hash {} differs from the current config ({expected})",
                header.config_hash
            ));
        }
    }
    let state = PopulationState::from_parts(StateParts {
        time,
        step_count: header.step_count,
        rng: RngState {
            seed: header.rng_seed,
            next_id: header.next_id,
        },
        registry: LineageRegistry {
            curves: header.curves.clone(),
            tubes,
        },
        particles,
    });
    Ok(Restored {
        state,
        header,
        warnings,
    })
}

fn parse_header(text: &str) -> Result<Header, SnapshotError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| SnapshotError::Malformed {
        line: 1,
        reason: format!("header is not JSON: {e}"),
    })?;
    let schema = value.get("schema").and_then(|s| s.as_str()).unwrap_or_default();
    if schema != SNAPSHOT_SCHEMA {
        return Err(SnapshotError::Schema {
            found: schema.to_string(),
        });
    }
    serde_json::from_value(value).map_err(|e| SnapshotError::Malformed {
        line: 1,
        reason: e.to_string(),
    })
}

fn parse_particle(text: &str, n_curves: usize, n_tubes: usize, line: usize) -> Result<Particle, SnapshotError> {
    let bad = |reason: String| SnapshotError::Malformed { line, reason };
    let fields: Vec<&str> = text.split_ascii_whitespace().collect();
    let expected = 7 + 2 * n_curves;
    if fields.len() != expected {
        return Err(bad(format!("expected {expected} fields, found {}", fields.len())));
    }
    let int = |s: &str| s.parse::<u64>().map_err(|_| bad(format!("bad integer {s:?}")));
    let real = |s: &str| hexfloat::parse(s).map_err(|e| bad(e.to_string()));
    let id = int(fields[0])?;
    let parent_id = match fields[1] {
        "-" => None,
        s => Some(int(s)?),
    };
    let bits = int(fields[6])?;
    if n_tubes < 64 && bits >> n_tubes != 0 {
        return Err(bad(format!("tube bits {bits} exceed {n_tubes} tubes")));
    }
    let mut time_below = Vec::with_capacity(n_curves);
    let mut sup_deficit = Vec::with_capacity(n_curves);
    for h in 0..n_curves {
        time_below.push(real(fields[7 + 2 * h])?);
        sup_deficit.push(real(fields[8 + 2 * h])?);
    }
    Ok(Particle {
        id,
        parent_id,
        position: real(fields[2])?,
        mass: real(fields[3])?,
        zeta_integral: real(fields[4])?,
        lineage: LineageAccumulators {
            time_below,
            sup_deficit,
            tube_ok: (0..n_tubes).map(|j| bits >> j & 1 == 1).collect(),
            min_position: real(fields[5])?,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use massfront_core::{init_population, run};

    fn sample_state() -> (PopulationState, SimConfig) {
        let sim = SimConfig {
            dt: 1e-2,
            horizon: 2.0,
            seed: 3,
            ..SimConfig::default()
        };
        let mut s = init_population(&sim).unwrap();
        s.register_curve(CurveSpec::GStar).unwrap();
        s.register_curve(CurveSpec::G { c: 1.0 }.shifted(-0.5)).unwrap();
        s.register_tube(2.0).unwrap();
        (run(s, &sim, &mut []).unwrap().state, sim)
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let (state, sim) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.snap");
        write_snapshot(&state, &sim, 4, &path).unwrap();
        let back = restore(&path, Some(&sim)).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.header.replicate, 4);
        assert_eq!(back.state, state);
        assert_eq!(back.state.digest(), state.digest());
    }

    #[test]
    fn hash_mismatch_only_warns() {
        let (state, sim) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.snap");
        write_snapshot(&state, &sim, 0, &path).unwrap();
        let other = SimConfig { seed: 4, ..sim.clone() };
        let back = restore(&path, Some(&other)).unwrap();
        assert_eq!(back.warnings.len(), 1);
        let longer = SimConfig { horizon: 9.0, ..sim };
        assert!(restore(&path, Some(&longer)).unwrap().warnings.is_empty());
    }

    #[test]
    fn truncation_names_the_line() {
        let (state, sim) = sample_state();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.snap");
        write_snapshot(&state, &sim, 0, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let keep: Vec<&str> = text.lines().take(3).collect();
        std::fs::write(&path, keep.join("\n") + "\n").unwrap();
        let err = restore(&path, None).unwrap_err();
        assert!(matches!(err, SnapshotError::Truncated { line: 4, got: 2, .. }), "{err}");
        assert!(err.to_string().starts_with("line 4:"));
    }

    #[test]
    fn malformed_and_schema_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.snap");
        std::fs::write(&path, "{\"schema\":\"other/9\"}\n").unwrap();
        assert!(matches!(restore(&path, None).unwrap_err(), SnapshotError::Schema { .. }));
        let (state, sim) = sample_state();
        write_snapshot(&state, &sim, 0, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[1] = lines[1].replacen("0x", "0y", 1);
        std::fs::write(&path, lines.join("\n") + "\n").unwrap();
        let err = restore(&path, None).unwrap_err();
        assert!(matches!(err, SnapshotError::Malformed { line: 2, .. }), "{err}");
    }
}
