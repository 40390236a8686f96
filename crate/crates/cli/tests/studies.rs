use std::process::Command;

use dgsipg_cli::config::{Pairing, RunConfig, KEYS};
use dgsipg_cli::convergence::{run_convergence_study, Mode};
use dgsipg_cli::symmetry::run_symmetry_study;
use dgsipg_core::stdregions::Shape;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dgsipg"))
}

fn small_symmetry(dir: &std::path::Path) -> RunConfig {
    let mut c = RunConfig::parse("shape = quad\nnx = 2\nbasis = lagrange\nrefine = half_domain\nstrategy = p2p_forced\npairs = P3Q4-P5Q6\nk = pi\n").unwrap();
    c.output_dir = dir.display().to_string();
    c
}

#[test]
fn list_keys_prints_every_key() {
    let out = bin().arg("--list-keys").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for (k, _, _) in KEYS {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(k)), "{k}");
    }
}

#[test]
fn binary_runs_symmetry_with_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "study = convergence\nshape = quad\nnx = 2\nbasis = lagrange\nrefine = half_domain\npairs = P2Q3-P3Q4\n").unwrap();
    let out = bin()
        .arg("symmetry")
        .arg("--config")
        .arg(&cfg)
        .args(["--set", "write_probe=true", "--set"])
        .arg(format!("output_dir={}", dir.path().display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(names.iter().any(|n| n.starts_with("symmetry_") && n.ends_with(".csv")));
    assert!(names.contains(&"symmetry_report.txt".to_string()));
    let probe = std::fs::read_to_string(dir.path().join("probe_matrix.txt")).unwrap();
    let rows = probe.lines().count();
    assert!(probe.lines().all(|l| l.split(' ').count() == rows));
}

#[test]
fn binary_rejects_bad_input() {
    let out = bin().arg("nonsense").output().unwrap();
    assert!(!out.status.success());
    let out = bin().args(["bench", "--set", "runs=3"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("runs >= 10"));
}

#[test]
fn probe_limit_suggests_smaller_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_symmetry(dir.path());
    c.probe_limit = 10;
    let err = run_symmetry_study(&c).unwrap_err().to_string();
    assert!(err.contains("probe_limit") && err.contains("smaller nx"), "{err}");
}

#[test]
fn symmetry_rows_and_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_symmetry(dir.path());
    let out = run_symmetry_study(&c).unwrap();
    // uniform baseline first, then the configured pairing
    assert_eq!(out.rows.len(), 2);
    assert!(out.rows[0].asymmetry <= 1e-13 && out.rows[0].condition1.is_none());
    assert_eq!(out.rows[1].label, Pairing::parse("P3Q4-P5Q6").unwrap().label());
    // affine quads: (3 - 1) + (5 - 1) + 0
    assert_eq!(out.rows[1].required_degree, Some(6));
    assert_eq!(out.rows[1].actual_degree, Some(5));
    let csv = std::fs::read_to_string(&out.files[0]).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    let ncol = lines[0].split(',').count();
    assert!(lines.iter().all(|l| l.split(',').count() == ncol));
    let asym = lines[1].split(',').nth(9).unwrap();
    let (mant, _) = asym.split_once('e').unwrap();
    assert_eq!(mant.replace(['.', '-'], "").len(), 17);
}

fn convergence_files(dir: &std::path::Path) -> Vec<String> {
    let mut c = RunConfig::parse("shape = quad,tri\nnx = 2,4\norders = 2,3\nrefine = half_domain\nmodes = uniform,refined\nthreads = 1\n").unwrap();
    c.output_dir = dir.display().to_string();
    let out = run_convergence_study(&c).unwrap();
    out.files.iter().map(|f| std::fs::read_to_string(f).unwrap()).collect()
}

#[test]
fn convergence_csv_is_byte_stable() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let fa = convergence_files(a.path());
    let fb = convergence_files(b.path());
    assert_eq!(fa.len(), 1 + 2 * 2 * 2);
    assert_eq!(fa, fb);
}

#[test]
fn quad_p3_slope() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::parse("shape = quad\nnx = 4,8,16\norders = 3\n").unwrap();
    c.output_dir = dir.path().display().to_string();
    let out = run_convergence_study(&c).unwrap();
    let s = out.find(Shape::Quad, 3, Mode::Uniform).unwrap().slope.unwrap();
    assert!((2.5..=3.8).contains(&s), "{s}");
    assert_eq!(out.series.len(), 1);
}

#[test]
fn unconverged_rows_are_flagged_and_excluded() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = RunConfig::parse("shape = quad\nnx = 2,4,8\norders = 3\nmaxiter = 1\n").unwrap();
    c.output_dir = dir.path().display().to_string();
    let out = run_convergence_study(&c).unwrap();
    let s = &out.series[0];
    assert!(s.rows.iter().all(|r| !r.converged));
    assert!(s.slope.is_none());
    let summary = std::fs::read_to_string(&out.files[0]).unwrap();
    assert!(summary.lines().nth(1).unwrap().starts_with("quad,3,uniform,-,0,"));
    let series = std::fs::read_to_string(&out.files[1]).unwrap();
    assert!(series.lines().skip(1).all(|l| l.contains(",false,")));
}
