use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const MINIMAL: &str = r#"
[grid]
points = 32

[physics]
gamma = 2.0
nu = 0.1
eps = 0.05

[run]
T = 0.02
dt = 1e-3
cadence = 5

[initial]
profile = "cosine_bump"
mean = 2.0
amplitude = 0.5
velocity_amplitude = 0.3

[output]
directory = "out"
formats = ["csv", "json"]
"#;

fn qns(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qns"))
        .args(args)
        .current_dir(dir)
        .env_remove("QNS_THREADS")
        .output()
        .expect("spawn qns")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn run_writes_documented_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let o = qns(tmp.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(tmp.path().join("out/diagnostics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# qns diagnostics v1"));
    let header = lines.next().unwrap();
    assert!(header.starts_with("t,mass,energy,energy_dissipation,energy_residual,bd_entropy,bd_dissipation,bd_residual,min_n,max_n,sqrt_n_u_L2,"));
    assert_eq!(header.split(',').count(), 28);
    // 20 steps at cadence 5, plus the initial state.
    assert_eq!(lines.count(), 5);
    for f in ["diagnostics.json", "events.json", "summary.json", "final.csv", "snapshots/snap_000004.csv"] {
        assert!(tmp.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn identical_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL
        .replace("profile = \"cosine_bump\"", "profile = \"random_bandlimited\"\nmax_mode = 3")
        .replace("cadence = 5", "cadence = 5\nseed = 42");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    assert_eq!(qns(tmp.path(), &["run", &cfg, "--out", "a"]).status.code(), Some(0));
    assert_eq!(qns(tmp.path(), &["run", &cfg, "--out", "b", "--sequential"]).status.code(), Some(0));
    let a = fs::read(tmp.path().join("a/diagnostics.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/diagnostics.csv")).unwrap();
    assert_eq!(a, b);
    let other = write_config(tmp.path(), "d.toml", &text.replace("seed = 42", "seed = 43"));
    assert_eq!(qns(tmp.path(), &["run", &other, "--out", "c"]).status.code(), Some(0));
    assert_ne!(a, fs::read(tmp.path().join("c/diagnostics.csv")).unwrap());
}

#[test]
fn bad_gamma_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("gamma = 2.0", "gamma = 0.5"));
    let o = qns(tmp.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn unknown_key_and_missing_file_are_validation_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("nu = 0.1", "nu = 0.1\nviscosity = 2"));
    let o = qns(tmp.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("viscosity"), "{}", stderr(&o));
    assert_eq!(qns(tmp.path(), &["norms", "missing.toml"]).status.code(), Some(1));
    assert_eq!(qns(tmp.path(), &["frobnicate"]).status.code(), Some(1));
}

#[test]
fn runtime_failure_names_the_time() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MINIMAL
        .replace("mean = 2.0", "mean = 1.0")
        .replace("amplitude = 0.5", "amplitude = 0.9")
        .replace("dt = 1e-3", "dt = 1e-2");
    let cfg = write_config(tmp.path(), "c.toml", &text);
    let o = qns(tmp.path(), &["run", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("t = "), "{}", stderr(&o));
    // Partial output is still written.
    assert!(tmp.path().join("out/diagnostics.csv").exists());
}

#[test]
fn check_passes_at_default_resolution_and_fails_when_coarse() {
    let tmp = tempfile::tempdir().unwrap();
    let o = qns(tmp.path(), &["check"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let o = qns(tmp.path(), &["check", "--resolution", "32"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("bohm identity"));
}

#[test]
fn norms_lists_the_dashboard() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let o = qns(tmp.path(), &["norms", &cfg]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 7 + 18);
    let mass: f64 = text.lines().next().unwrap().split(' ').nth(1).unwrap().parse().unwrap();
    assert!((mass - 2.0).abs() < 1e-12);
}

#[test]
fn sweeps_write_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &MINIMAL.replace("nu = 0.1", "nu = 0.2"));
    let o = qns(tmp.path(), &["sweep", &cfg, "--eps", "0.05,0.02,0.01", "--out", "eps"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("eps/report.json")).unwrap()).unwrap();
    assert_eq!(report["members"].as_array().unwrap().len(), 3);
    let table = fs::read_to_string(tmp.path().join("eps/table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2 + 3);

    let o = qns(tmp.path(), &["sweep", &cfg, "--galerkin", "4,8", "--out", "gal"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(tmp.path().join("gal/table.csv").exists());

    // The damping study needs the effective-velocity system.
    let o = qns(tmp.path(), &["sweep", &cfg, "--delta", "0.01,0.001"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("run.formulation"));

    let o = qns(tmp.path(), &["sweep", &cfg, "--eps", "0.1", "--delta", "0.1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thread_variable_is_validated() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", MINIMAL);
    let o = Command::new(env!("CARGO_BIN_EXE_qns"))
        .args(["norms", &cfg])
        .current_dir(tmp.path())
        .env("QNS_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("QNS_THREADS"));
    let o = Command::new(env!("CARGO_BIN_EXE_qns"))
        .args(["norms", &cfg])
        .current_dir(tmp.path())
        .env("QNS_THREADS", "2")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn bundled_config_is_valid() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smooth_1d.toml");
    let tmp = tempfile::tempdir().unwrap();
    let o = qns(tmp.path(), &["norms", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
