use std::path::Path;
use std::process::{Command, Output};

fn eccmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_eccmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL: &str = "seed = 3\nscenario = \"full\"\n\n[geometry]\nn_projections = 13\n\n\
[projector]\nsupersampling = 1\n\n[motion]\nnodes = 4\n\n[reconstruction]\nvoxels = 16\nspacing_mm = 0.8\n";

fn simulate_small(dir: &Path) {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = dir.join("data");
    let out = eccmc(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&eccmc(&["--help"])), 0);
    assert_eq!(code(&eccmc(&["--version"])), 0);
    assert_eq!(code(&eccmc(&["compensate", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&eccmc(&[])), 1);
    assert_eq!(code(&eccmc(&["frobnicate"])), 1);
    assert_eq!(code(&eccmc(&["compensate", "x", "--max-iter", "many"])), 1);
}

#[test]
fn default_config_round_trips() {
    let out = eccmc(&["default-config"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = ecc_motion::config::Config::from_toml_str(&text).unwrap();
    assert_eq!(cfg, ecc_motion::config::Config::default());
}

#[test]
fn invalid_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nscenario = \"sideways\"\n").unwrap();
    let out = eccmc(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("d").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("sideways"), "{}", stderr(&out));
}

#[test]
fn missing_artifacts_name_the_step() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let data = dir.path().join("data");
    let out = eccmc(&["reconstruct", data.to_str().unwrap(), "--which", "recovered"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("compensate"), "{}", stderr(&out));
    let out = eccmc(&["evaluate", data.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let out = eccmc(&["compensate", dir.path().join("nothing").to_str().unwrap()]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn scenario_must_match_dataset() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let data = dir.path().join("data");
    let out = eccmc(&["compensate", data.to_str().unwrap(), "--scenario", "oop"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("does not match"), "{}", stderr(&out));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let out = eccmc(&["--threads", "1", "compensate", d, "--max-iter", "8", "--no-elapsed"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("24 parameters"));
    let log = std::fs::read_to_string(data.join("cost_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "iteration,cost,elapsed_ms");
    assert!(lines[1].starts_with("0,") && lines[1].ends_with(','));
    assert_eq!(lines.len(), 2 + 8);
    for which in ["original", "motion", "recovered"] {
        let out = eccmc(&["reconstruct", d, "--which", which, "--png"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(data.join(format!("recon_{which}.raw")).exists());
        assert!(data.join(format!("recon_{which}.png")).exists());
    }
    let out = eccmc(&["evaluate", d]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("ssim") && table.contains("l1_rz"));
    let report = std::fs::read_to_string(data.join("report.csv")).unwrap();
    assert!(report.starts_with("metric,before,after"));
    assert_eq!(report.lines().count(), 9);

    let png = dir.path().join("slice.png");
    let out = eccmc(&[
        "render-slice",
        data.join("recon_motion").to_str().unwrap(),
        "--out",
        png.to_str().unwrap(),
        "--offset",
        "0",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(png.exists());
}
