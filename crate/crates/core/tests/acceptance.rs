//! Acceptance battery: one test per criterion, each printing a pass/fail
//! line. Criteria 1-9 read the verdicts of a single shared run of the
//! `suite` subcommand at the shipped defaults (box half-width 20, 512
//! nodes, half/half law, 1e5 replicas, master seed 20260808); criterion 10
//! reruns the whole suite and compares artifacts byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use branchflow::cli::{run_command, CommandKind, RunConfig};

struct SuiteRun {
    out: PathBuf,
    exit: i32,
    summary: serde_json::Value,
}

static SUITE: OnceLock<SuiteRun> = OnceLock::new();

fn suite() -> &'static SuiteRun {
    SUITE.get_or_init(|| {
        let out = std::env::temp_dir().join(format!("branchflow-acceptance-{}", std::process::id()));
        let _ = fs::remove_dir_all(&out);
        let config = RunConfig::default();
        let exit = run_command(CommandKind::Suite, &config, &out).expect("suite must run");
        let summary: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
        SuiteRun { out, exit, summary }
    })
}

fn assert_criterion(number: usize, key: &str) {
    let run = suite();
    let checks = run.summary["checks"].as_array().expect("checks array");
    let check = checks
        .iter()
        .find(|c| c["key"] == key)
        .unwrap_or_else(|| panic!("criterion key {key} missing from suite summary"));
    let pass = check["pass"].as_bool().unwrap_or(false);
    println!(
        "criterion {number:>2} {key}: {} {}",
        if pass { "PASS" } else { "FAIL" },
        check["detail"]
    );
    assert!(pass, "criterion {number} ({key}) failed: {}", check["detail"]);
}

#[test]
fn criterion_01_constant_data_exactness() {
    assert_criterion(1, "constant_data_exact");
}

#[test]
fn criterion_02_solution_invariants() {
    assert_criterion(2, "solution_invariants");
}

#[test]
fn criterion_03_sandwich_bounds() {
    assert_criterion(3, "sandwich_bounds");
}

#[test]
fn criterion_04_kernel_profile() {
    assert_criterion(4, "kernel_profile");
}

#[test]
fn criterion_05_mass_convexity() {
    assert_criterion(5, "mass_convexity");
}

#[test]
fn criterion_06_duality_identities() {
    assert_criterion(6, "duality_identities");
}

#[test]
fn criterion_07_moment_oracles() {
    assert_criterion(7, "moment_oracles");
}

#[test]
fn criterion_08_splitting_convergence() {
    assert_criterion(8, "splitting_convergence");
}

#[test]
fn criterion_09_occupation_limits() {
    assert_criterion(9, "occupation_limits");
}

#[test]
fn criterion_10_determinism() {
    let first = suite();
    assert_eq!(first.exit, 0, "first suite run must exit cleanly");
    let out = std::env::temp_dir().join(format!(
        "branchflow-acceptance-rerun-{}",
        std::process::id()
    ));
    let _ = fs::remove_dir_all(&out);
    let exit = run_command(CommandKind::Suite, &RunConfig::default(), &out).expect("rerun");
    assert_eq!(exit, 0);

    let mut first_files = collect_artifacts(&first.out);
    let mut second_files = collect_artifacts(&out);
    first_files.sort();
    second_files.sort();
    assert_eq!(first_files, second_files, "artifact sets differ");
    assert!(
        first_files.iter().any(|p| p.ends_with(".csv")),
        "suite produced no CSV artifacts"
    );
    for rel in &first_files {
        let a = fs::read(first.out.join(rel)).unwrap();
        let b = fs::read(out.join(rel)).unwrap();
        assert_eq!(a, b, "artifact {rel} differs between reruns");
    }
    println!(
        "criterion 10 determinism: PASS ({} artifacts byte-identical)",
        first_files.len()
    );
}

#[test]
fn suite_exit_code_is_zero() {
    assert_eq!(suite().exit, 0);
}

/// Relative paths of every deterministic artifact (everything except the
/// manifest, which carries wall-clock timestamps).
fn collect_artifacts(root: &Path) -> Vec<String> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<String>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().to_string();
                if rel != "manifest.json" {
                    out.push(rel);
                }
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out
}
