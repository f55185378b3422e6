use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
[grid]
nx = 8
ny = 8

[fluid]
rho1 = 1.0
rho2 = 2.0
mu1 = 0.1
mu2 = 0.2
alpha1 = 0.2
alpha2 = 0.4

[scheme]
dt = 0.01
r = 0.5
theta = 0.25
stability_mode = true

[scenario]
name = "cavity"
density = "blob"

[run]
t_end = 0.04
"#;

fn bingham(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bingham"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("case.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out_dir = dir.path().join("out");
    let out = bingham(&[
        "run",
        &cfg,
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--quiet",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
    for f in ["config.toml", "timeseries.csv", "final.vtk"] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }
    let ts = fs::read_to_string(out_dir.join("timeseries.csv")).unwrap();
    assert_eq!(ts.lines().count(), 5);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(
        bingham(&["run", &cfg, "--output-dir", a.to_str().unwrap(), "--quiet"])
            .status
            .success()
    );
    assert!(
        bingham(&["run", &cfg, "--output-dir", b.to_str().unwrap(), "--quiet"])
            .status
            .success()
    );
    assert_eq!(
        fs::read(a.join("timeseries.csv")).unwrap(),
        fs::read(b.join("timeseries.csv")).unwrap()
    );
}

#[test]
fn invalid_config_names_the_inequality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("theta = 0.25", "theta = 0.6"));
    let out = bingham(&["run", &cfg, "--quiet"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("theta ≤ 1/2"));

    let cfg = write_config(dir.path(), &CONFIG.replace("nx = 8", "nx = \"eight\""));
    let out = bingham(&["run", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));
}

#[test]
fn verify_passes() {
    let out = bingham(&["verify", "--seed", "7"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().count() >= 7);
    assert!(text.lines().all(|l| l.starts_with("PASS")), "{text}");
}

#[test]
fn convergence_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &CONFIG.replace(
            "stability_mode = true",
            "fp_tol = 1e-10\nfp_max_iter = 100000",
        ),
    );
    let out_dir = dir.path().join("conv");
    let out = bingham(&[
        "convergence",
        &cfg,
        "--dts",
        "0.01,0.005",
        "--output-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    let mut lines = table.lines();
    assert_eq!(
        lines.next(),
        Some("dt,theta,error_u,error_rho,max_fp_iterations,stalled_steps")
    );
    assert_eq!(lines.count(), 2);
    assert!(String::from_utf8_lossy(&out.stdout).contains("order u"));
}
