use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn curveflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curveflow"))
        .args(args)
        .env_remove("CURVEFLOW_THREADS")
        .output()
        .expect("binary runs")
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_outputs_and_converges() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("status converged"));
    assert!(!text.contains("FAIL"), "{text}");
    for f in ["monitors.csv", "final_state.snap", "report.txt"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = fs::read_to_string(dir.path().join("monitors.csv")).unwrap();
    assert!(csv.starts_with("t,dt,max_abs_speed"));
}

#[test]
fn runs_are_bit_identical_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--out", a.path().to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_curveflow"))
        .args(["--resolution", "16x16", "--out", b.path().to_str().unwrap(), "run"])
        .env("CURVEFLOW_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["monitors.csv", "final_state.snap"] {
        let x = fs::read(a.path().join(f)).unwrap();
        let y = fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn timeout_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--tmax", "0.05", "--out", dir.path().to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stdout(&o).contains("status timeout"));
}

#[test]
fn breakdown_exits_with_three_and_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("saddle.toml");
    let o = curveflow(&["--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("flow breakdown") && err.contains("node") && err.contains("spectrum"), "{err}");
}

#[test]
fn config_errors_exit_with_four() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[domain]\nkind = \"disk\"\nradius = 1.0\n\n[grid]\nn_rho = \"many\"\n").unwrap();
    let o = curveflow(&["--config", path.to_str().unwrap(), "run"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(stderr(&o).contains("line 6"), "{}", stderr(&o));

    let o = curveflow(&["--config", "/nonexistent/curveflow.toml", "run"]);
    assert_eq!(o.status.code(), Some(4));

    let o = curveflow(&["--resolution", "16by16", "run"]);
    assert_eq!(o.status.code(), Some(4));

    let o = Command::new(env!("CARGO_BIN_EXE_curveflow"))
        .args(["props"])
        .env("CURVEFLOW_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn shipped_configs_parse_and_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = config("ellipse.toml");
    let o = curveflow(&["--config", cfg.to_str().unwrap(), "--resolution", "12x16", "--tol", "1e-5", "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("domain ellipse"));
    let cfg = config("sphere_cap.toml");
    let o = curveflow(&["--config", cfg.to_str().unwrap(), "--resolution", "16x16", "--out", out, "run"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn stationary_reports_agreement_and_cap_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--tol", "1e-7", "--out", dir.path().to_str().unwrap(), "stationary"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("PASS agreement with the flow limit"), "{text}");
    assert!(text.contains("sup error against the analytic cap"));
    assert!(dir.path().join("final_state.snap").exists());
}

#[test]
fn oracle_writes_three_resolutions() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--out", dir.path().to_str().unwrap(), "oracle"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("oracle.csv")).unwrap();
    let sizes: std::collections::BTreeSet<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(sizes.len(), 3, "{csv}");
}

#[test]
fn verify_passes_on_the_default_window() {
    let dir = tempfile::tempdir().unwrap();
    let o = curveflow(&["--resolution", "32x32", "--out", dir.path().to_str().unwrap(), "verify"]);
    let text = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{text}{}", stderr(&o));
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 8, "{text}");
}

#[test]
fn verify_reads_a_saved_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = curveflow(&["--resolution", "16x16", "--out", out, "run", "--save-every", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let traj = dir.path().join("trajectory");
    assert!(fs::read_dir(&traj).unwrap().count() >= 3);
    let o = curveflow(&["--resolution", "16x16", "--out", out, "verify", "--trajectory", traj.to_str().unwrap()]);
    // identities on an adaptive trajectory may legitimately fail; the
    // command must still run and report every check
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().count(), 8);

    let empty = tempfile::tempdir().unwrap();
    let o = curveflow(&["verify", "--trajectory", empty.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn props_reports_growth_failure_for_the_quotient() {
    let o = curveflow(&["props", "--family", "quotient", "--n", "2", "--order", "1", "--samples", "200"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.lines().any(|l| l.starts_with("FAIL unbounded growth")), "{text}");
    let o = curveflow(&["props", "--samples", "200", "--seed", "3"]);
    assert!(!stdout(&o).contains("FAIL"));
    let o = curveflow(&["props", "--family", "elliptic"]);
    assert_eq!(o.status.code(), Some(4));
}
