use std::path::Path;
use std::process::{Command, Output};

fn massfront(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_massfront"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MASSFRONT_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn unknown_config_key_fails_with_its_name() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", "preset = \"front-lag\"\n[sim]\ndtt = 0.1\n");
    let o = massfront(&["simulate", "--config", &cfg], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dtt"), "{}", stderr(&o));
    let o = massfront(&["simulate"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("--config"));
}

#[test]
fn simulate_report_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"front-lag\"\nreplicates = 2\nrecord_every = 100\n[sim]\nhorizon = 2.0\n",
    );
    let o = massfront(&["simulate", "--config", &cfg, "--seed", "4", "--replicates", "3", "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("final_median_lag_D_0.5_positive"));
    let side = std::fs::read_to_string(dir.path().join("run/records.json")).unwrap();
    assert!(side.contains("\"seed\": 4"));
    let csv = std::fs::read_to_string(dir.path().join("run/records.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 21);

    let o = massfront(&["report", "run", "--plot", "front-lag"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("summary matches"));
    assert!(out.contains("$records << EOD"));
    assert!(out.contains("column(\"lag_D_0.5\")"));

    let o = massfront(&["report", "run", "--plot", "violin"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("unknown plot kind"));
}

#[test]
fn out_dir_from_config_then_environment_then_default() {
    let dir = tempfile::tempdir().unwrap();
    let base = "preset = \"front-lag\"\n[sim]\nhorizon = 0.01\n";
    let cfg = write(dir.path(), "a.toml", &format!("output_dir = \"from-config\"\n{base}"));
    assert!(massfront(&["simulate", "--config", &cfg], dir.path()).status.success());
    assert!(dir.path().join("from-config/records.csv").exists());

    let cfg = write(dir.path(), "b.toml", base);
    let o = Command::new(env!("CARGO_BIN_EXE_massfront"))
        .args(["simulate", "--config", &cfg])
        .current_dir(dir.path())
        .env("MASSFRONT_OUT", "from-env")
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("from-env/records.csv").exists());

    assert!(massfront(&["simulate", "--config", &cfg], dir.path()).status.success());
    assert!(dir.path().join("massfront-out/front-lag/records.csv").exists());
}

#[test]
fn snapshot_tools_inspect_and_reject_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "preset = \"front-lag\"\nsnapshot_final = true\n[sim]\nhorizon = 3.0\nseed = 2\ninitial = [[0.0, 1.0], [0.5, 1.0], [1.0, 1.0], [3.0, 0.5]]\n",
    );
    assert!(massfront(&["simulate", "--config", &cfg, "--out", "run"], dir.path()).status.success());
    let snap = "run/snapshots/rep_00000.snap";

    let o = massfront(&["snapshot-tools", "info", snap], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("step_count  3000"), "{}", stdout(&o));

    let o = massfront(&["snapshot-tools", "verify", snap, "--config", &cfg], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("ok:"));
    assert!(!stdout(&o).contains("warning"));

    let o = massfront(&["snapshot-tools", "profile", snap, "--plot"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("$profile << EOD"));

    let text = std::fs::read_to_string(dir.path().join(snap)).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.len() > 3);
    let cut = lines[..3].join("\n") + "\n";
    std::fs::write(dir.path().join("cut.snap"), cut).unwrap();
    let o = massfront(&["snapshot-tools", "verify", "cut.snap"], dir.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn envelope_and_bounds_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let o = massfront(&["bounds", "--replicates", "2000", "--out", "b"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("all checks pass"));
    let o = massfront(&["report", "b"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("descendants_tail_ge5"));

    let o = massfront(&["envelope", "--out", "e"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("PASS c0_t0_delta_properties"));

    let cfg = write(dir.path(), "c.toml", "preset = \"front-lag\"\n");
    let o = massfront(&["bounds", "--config", &cfg], dir.path());
    assert!(!o.status.success());
}
