//! Self-contained gnuplot scripts. Data is embedded as a datablock so the
//! script runs on its own; record columns are referenced by name.

use std::fmt::Write;
use std::str::FromStr;

use massfront_core::curves::cstar;
use massfront_core::DensityProfile;
use thiserror::Error;

use crate::records::{format_value, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    FrontLag,
    ZetaProfile,
    ZetaMax,
    Cstar,
}

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("unknown plot kind {0:?} (expected front-lag, zeta-profile, zeta-max or cstar)")]
    UnknownKind(String),
    #[error("plot kind {kind} needs {needs}")]
    WrongInput { kind: &'static str, needs: &'static str },
    #[error("records have no column {0:?}")]
    MissingColumn(String),
}

impl FromStr for PlotKind {
    type Err = PlotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "front-lag" => Ok(PlotKind::FrontLag),
            "zeta-profile" => Ok(PlotKind::ZetaProfile),
            "zeta-max" => Ok(PlotKind::ZetaMax),
            "cstar" => Ok(PlotKind::Cstar),
            other => Err(PlotError::UnknownKind(other.to_string())),
        }
    }
}

pub enum PlotInput<'a> {
    Records(&'a Table),
    Profile { profile: &'a DensityProfile, time: f64 },
}

pub fn emit_plot(input: PlotInput<'_>, kind: &str) -> Result<String, PlotError> {
    let kind: PlotKind = kind.parse()?;
    match (kind, input) {
        (PlotKind::ZetaProfile, PlotInput::Profile { profile, time }) => Ok(profile_script(profile, time)),
        (PlotKind::ZetaProfile, PlotInput::Records(_)) => Err(PlotError::WrongInput {
            kind: "zeta-profile",
            needs: "a density profile (from a snapshot)",
        }),
        (_, PlotInput::Profile { .. }) => Err(PlotError::WrongInput {
            kind: "record plots",
            needs: "a record table",
        }),
        (kind, PlotInput::Records(table)) => records_script(kind, table),
    }
}

fn datablock(out: &mut String, name: &str, table: &Table) {
    writeln!(out, "${name} << EOD").unwrap();
    writeln!(out, "{}", table.columns.join(",")).unwrap();
    for row in &table.rows {
        let fields: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
        writeln!(out, "{}", fields.join(",")).unwrap();
    }
    writeln!(out, "EOD").unwrap();
}

fn col(name: &str) -> String {
    format!("(column(\"{name}\"))")
}

fn records_script(kind: PlotKind, table: &Table) -> Result<String, PlotError> {
    let need = |name: &str| {
        table
            .column(name)
            .map(|_| ())
            .ok_or_else(|| PlotError::MissingColumn(name.to_string()))
    };
    let mut s = String::new();
    writeln!(s, "# massfront plot").unwrap();
    writeln!(s, "set datafile separator \",\"").unwrap();
    writeln!(s, "set key autotitle columnhead").unwrap();
    datablock(&mut s, "records", table);
    writeln!(s, "set xlabel \"t\"").unwrap();
    match kind {
        PlotKind::FrontLag => {
            let lags: Vec<&String> = table.columns.iter().filter(|c| c.starts_with("lag_")).collect();
            if lags.is_empty() {
                return Err(PlotError::MissingColumn("lag_D_*".into()));
            }
            writeln!(s, "cstar = {:?}", cstar()).unwrap();
            writeln!(s, "set ylabel \"sqrt(2) t - front\"").unwrap();
            let mut parts: Vec<String> = lags
                .iter()
                .map(|c| format!("$records using {}:{} with points pt 7 ps 0.3 title \"{c}\"", col("time"), col(c)))
                .collect();
            parts.push("cstar * x**(1.0/3) with lines lw 2 title \"c* t^{1/3}\"".into());
            writeln!(s, "plot {}", parts.join(", \\\n     ")).unwrap();
        }
        PlotKind::ZetaMax => {
            need("zeta_max")?;
            need("zmax")?;
            writeln!(s, "set xlabel \"log t\"").unwrap();
            writeln!(s, "set ylabel \"density maximum\"").unwrap();
            writeln!(
                s,
                "plot $records using (log({t})):{z} with points pt 7 ps 0.3 title \"zeta max\", \\\n     \
                 $records using (log({t})):{zz} with points pt 6 ps 0.3 title \"z max\"",
                t = col("time"),
                z = col("zeta_max"),
                zz = col("zmax"),
            )
            .unwrap();
        }
        PlotKind::Cstar => {
            need("chat_star")?;
            writeln!(s, "set ylabel \"estimated C*\"").unwrap();
            writeln!(
                s,
                "plot $records using {}:{}:{} with points pt 7 ps 0.3 lc variable notitle",
                col("time"),
                col("chat_star"),
                col("replicate")
            )
            .unwrap();
        }
        PlotKind::ZetaProfile => unreachable!("handled by profile_script"),
    }
    Ok(s)
}

fn profile_script(profile: &DensityProfile, time: f64) -> String {
    let mut s = String::new();
    writeln!(s, "# massfront plot").unwrap();
    writeln!(s, "$profile << EOD").unwrap();
    let n = profile.len();
    if n > 1 {
        let first = profile.interval(1).0;
        let last = profile.interval(n - 2).1;
        for j in 0..n {
            let (a, b, v) = profile.interval(j);
            let a = if a.is_finite() { a } else { first - 1.0 };
            let b = if b.is_finite() { b } else { last + 1.0 };
            writeln!(s, "{a:?} {v:?}\n{b:?} {v:?}\n").unwrap();
        }
    }
    writeln!(s, "EOD").unwrap();
    writeln!(s, "set title \"density profile at t = {time:?}\"").unwrap();
    writeln!(s, "set xlabel \"x\"").unwrap();
    writeln!(s, "set ylabel \"zeta(t, x)\"").unwrap();
    writeln!(s, "plot $profile using 1:2 with lines notitle").unwrap();
    s
}
