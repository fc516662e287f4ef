use std::path::PathBuf;
use std::process::{Command, Output};

fn meshes() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../meshes")
}

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penalty-nse"))
        .args(args)
        .env("PENALTY_NSE_MESH_DIR", meshes())
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn short_manufactured_run_writes_series_and_echo() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = cli(&[
        "run",
        "--problem",
        "smooth_manufactured",
        "--mesh",
        meshes().join("square_pm1_lc0.1.msh").to_str().unwrap(),
        "--dt",
        "0.1",
        "--final-time",
        "0.2",
        "--out",
        out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("smooth_manufactured: steps=2"), "{stdout}");

    let echo = std::fs::read_to_string(dir.path().join("config.echo")).unwrap();
    assert!(echo.contains("problem = smooth_manufactured"));
    assert!(echo.contains("dt = 0.1"));

    let mut r = csv::Reader::from_path(dir.path().join("smooth_manufactured.csv")).unwrap();
    assert_eq!(r.headers().unwrap().get(0), Some("step"));
    assert_eq!(r.records().count(), 3);
}

#[test]
fn missing_mesh_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = cli(&["run", "--problem", "green_taylor", "--mesh", "/nonexistent.msh", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));
}

#[test]
fn bad_config_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# comment\ndt = -1\n").unwrap();
    let o = cli(&["offset", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    std::fs::write(&cfg, "colour = blue\n").unwrap();
    let o = cli(&["offset", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("colour"));
}

#[test]
fn unknown_problem_and_subcommand() {
    assert_eq!(cli(&["run", "--problem", "lid_cavity"]).status.code(), Some(2));
    assert_eq!(cli(&["simulate"]).status.code(), Some(2));
}
