//! Command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use massfront_core::density::zeta_profile;

use crate::config::{parse_config, ExperimentConfig, Preset};
use crate::experiment::{run_experiment, summarize_dir, RunOptions, SUMMARY_FILE};
use crate::hexfloat;
use crate::plot::{emit_plot, PlotInput};
use crate::records::{format_value, Table, RECORDS_FILE, SIDECAR_FILE};
use crate::snapshot::{restore, write_snapshot};
use crate::summary::Summary;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "MASSFRONT_OUT";
const DEFAULT_OUT: &str = "massfront-out";

#[derive(Debug, Parser)]
#[command(name = "massfront", version, about = "Branching Brownian motion with mass decay: simulation and checks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a simulation preset from a config file.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        /// Continue the replicate stored in this snapshot up to the config horizon.
        #[arg(long, value_name = "SNAPSHOT")]
        resume: Option<PathBuf>,
    },
    /// Solve the envelope ODE and check the envelope properties.
    Envelope {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Monte Carlo verification of the tail bounds.
    Bounds {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Recompute the summary of a finished run, optionally emitting a plot script.
    Report {
        dir: PathBuf,
        /// front-lag, zeta-max or cstar.
        #[arg(long)]
        plot: Option<String>,
        /// Where to write the plot script (stdout if absent).
        #[arg(long, value_name = "FILE")]
        plot_out: Option<PathBuf>,
    },
    /// Inspect snapshot files.
    #[command(name = "snapshot-tools", subcommand)]
    SnapshotTools(SnapshotCommand),
}

#[derive(Debug, Subcommand)]
pub enum SnapshotCommand {
    /// Print the header.
    Info { snapshot: PathBuf },
    /// Restore, rewrite and compare byte for byte; with a config, also check its hash.
    Verify {
        snapshot: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Density profile of the stored state, as a table or a plot script.
    Profile {
        snapshot: PathBuf,
        #[arg(long)]
        plot: bool,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Output directory; overrides the config and the environment.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Per-replicate progress on stderr.
    #[arg(long)]
    pub progress: bool,
}

/// Output directory: flag, then config, then environment, then a default under
/// the working directory named after the preset.
pub fn resolve_out_dir(flag: Option<&Path>, cfg: &ExperimentConfig, env: Option<OsString>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    match env {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => Path::new(DEFAULT_OUT).join(cfg.preset.name()),
    }
}

fn load_config(path: Option<&Path>, fallback: Option<Preset>) -> Result<ExperimentConfig> {
    match (path, fallback) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))
        }
        (None, Some(preset)) => Ok(ExperimentConfig::new(preset)),
        (None, None) => bail!("--config is required"),
    }
}

fn execute(run: &RunArgs, resume: Option<PathBuf>, preset: Option<Preset>) -> Result<String> {
    let mut cfg = load_config(run.config.as_deref(), preset)?;
    if let Some(p) = preset {
        if cfg.preset != p {
            bail!("config preset is {}, this subcommand runs {p}", cfg.preset);
        }
    }
    if let Some(seed) = run.seed {
        cfg.sim.seed = seed;
    }
    if let Some(n) = run.replicates {
        cfg.replicates = n;
    }
    let out_dir = resolve_out_dir(run.out.as_deref(), &cfg, std::env::var_os(OUT_ENV));
    let opts = RunOptions {
        out_dir,
        resume,
        progress: run.progress,
    };
    let output = run_experiment(&cfg, &opts)?;
    for w in &output.warnings {
        eprintln!("warning: {w}");
    }
    let mut text = format!("wrote {}\n", output.out_dir.display());
    text.push_str(&render_checks(&output.summary));
    Ok(text)
}

/// One line per check, then a tally.
pub fn render_checks(summary: &Summary) -> String {
    let mut s = String::new();
    if !summary.truncated.is_empty() {
        writeln!(s, "truncated replicates: {:?}", summary.truncated).unwrap();
    }
    let mut failed = 0;
    for c in &summary.checks {
        let verdict = match c.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "info",
        };
        let value = c.value.map_or_else(|| "-".to_string(), |v| format_value(Some(v)));
        writeln!(s, "{verdict:4} {} = {value}", c.name).unwrap();
    }
    if failed == 0 {
        writeln!(s, "all checks pass").unwrap();
    } else {
        writeln!(s, "{failed} check(s) failed").unwrap();
    }
    s
}

fn report(dir: &Path, plot: Option<&str>, plot_out: Option<&Path>) -> Result<String> {
    if !dir.join(SIDECAR_FILE).exists() {
        // Bounds and envelope runs have no record table; show what they stored.
        let stored = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&stored).with_context(|| format!("reading {}", stored.display()))?;
        let summary: Summary = serde_json::from_str(&text).with_context(|| format!("parsing {}", stored.display()))?;
        if plot.is_some() {
            bail!("{}: no records to plot", dir.display());
        }
        return Ok(render_checks(&summary));
    }
    let summary = summarize_dir(dir)?;
    let mut text = render_checks(&summary);
    let stored = dir.join(SUMMARY_FILE);
    if stored.exists() {
        let old: Summary = serde_json::from_str(&std::fs::read_to_string(&stored)?)
            .with_context(|| format!("parsing {}", stored.display()))?;
        if old == summary {
            writeln!(text, "summary matches {}", stored.display()).unwrap();
        } else {
            bail!("recomputed summary differs from {}", stored.display());
        }
    }
    if let Some(kind) = plot {
        let table = Table::read(&dir.join(RECORDS_FILE))?;
        let script = emit_plot(PlotInput::Records(&table), kind)?;
        match plot_out {
            Some(p) => {
                std::fs::write(p, script).with_context(|| format!("writing {}", p.display()))?;
                writeln!(text, "wrote {}", p.display()).unwrap();
            }
            None => text.push_str(&script),
        }
    }
    Ok(text)
}

fn snapshot_tool(cmd: SnapshotCommand) -> Result<String> {
    let mut s = String::new();
    match cmd {
        SnapshotCommand::Info { snapshot } => {
            let r = restore(&snapshot, None)?;
            let h = &r.header;
            writeln!(s, "schema      {}", h.schema).unwrap();
            writeln!(s, "config_hash {}", h.config_hash).unwrap();
            writeln!(s, "replicate   {}", h.replicate).unwrap();
            writeln!(s, "time        {} ({})", hexfloat::parse(&h.time)?, h.time).unwrap();
            writeln!(s, "step_count  {}", h.step_count).unwrap();
            writeln!(s, "rng_seed    {}", h.rng_seed).unwrap();
            writeln!(s, "next_id     {}", h.next_id).unwrap();
            writeln!(s, "particles   {}", h.particles).unwrap();
            writeln!(s, "curves      {}", h.curves.len()).unwrap();
            writeln!(s, "tubes       {}", h.tubes.len()).unwrap();
        }
        SnapshotCommand::Verify { snapshot, config } => {
            let expected = match config {
                Some(p) => {
                    let cfg = load_config(Some(&p), None)?;
                    let r = restore(&snapshot, None)?;
                    Some(massfront_core::SimConfig {
                        seed: massfront_core::rng::replicate_seed(cfg.sim.seed, r.header.replicate as u64),
                        ..cfg.sim
                    })
                }
                None => None,
            };
            let r = restore(&snapshot, expected.as_ref())?;
            for w in &r.warnings {
                writeln!(s, "warning: {w}").unwrap();
            }
            // The header carries a hash of the caller's config, so only particle lines are compared.
            let copy = std::env::temp_dir().join(format!("massfront-verify-{}.snap", std::process::id()));
            write_snapshot(&r.state, &massfront_core::SimConfig::default(), r.header.replicate, &copy)?;
            let a = std::fs::read_to_string(&snapshot)?;
            let b = std::fs::read_to_string(&copy)?;
            std::fs::remove_file(&copy).ok();
            let body = |t: &str| t.split_once('\n').map(|x| x.1.to_string()).unwrap_or_default();
            if body(&a) != body(&b) {
                bail!("{}: particle lines do not round-trip", snapshot.display());
            }
            writeln!(s, "ok: {} particles round-trip exactly", r.header.particles).unwrap();
        }
        SnapshotCommand::Profile { snapshot, plot } => {
            let r = restore(&snapshot, None)?;
            let profile = zeta_profile(&r.state);
            if plot {
                s = emit_plot(
                    PlotInput::Profile {
                        profile: &profile,
                        time: r.state.time(),
                    },
                    "zeta-profile",
                )?;
            } else {
                writeln!(s, "left,right,zeta").unwrap();
                for j in 0..profile.len() {
                    let (a, b, v) = profile.interval(j);
                    writeln!(s, "{a:?},{b:?},{v:?}").unwrap();
                }
            }
        }
    }
    Ok(s)
}

/// Run one parsed command and return what it prints on stdout.
pub fn dispatch(cli: Cli) -> Result<String> {
    match cli.command {
        Command::Simulate { run, resume } => execute(&run, resume, None),
        Command::Envelope { run } => execute(&run, None, Some(Preset::Envelope)),
        Command::Bounds { run } => execute(&run, None, Some(Preset::BoundsVerify)),
        Command::Report { dir, plot, plot_out } => report(&dir, plot.as_deref(), plot_out.as_deref()),
        Command::SnapshotTools(cmd) => snapshot_tool(cmd),
    }
}
