//! Subcommand-level behavior: exit codes, CSV contracts, reproducibility.

use std::fs;
use std::path::PathBuf;

use branchflow::cli::{run_command, CommandKind, RunConfig};

fn temp_out(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("branchflow-cli-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

fn quick_config(overrides: &[&str]) -> RunConfig {
    let entries: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::load(None, &entries).unwrap()
}

#[test]
fn solve_with_constant_datum_writes_constant_rows() {
    let out = temp_out("solve-constant");
    let config = quick_config(&[
        "initial={\"shape\": \"constant\", \"value\": 0.5}",
        "grid.points=64",
        "steps=16",
        "horizon=0.5",
    ]);
    let exit = run_command(CommandKind::Solve, &config, &out).unwrap();
    assert_eq!(exit, 0);
    let csv = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    // Spatial constancy is preserved: at each time every node carries the
    // same value.
    let mut by_time: std::collections::BTreeMap<String, std::collections::BTreeSet<String>> =
        Default::default();
    for line in csv.lines().skip(1) {
        let mut parts = line.split(',');
        let t = parts.next().unwrap().to_string();
        let _node = parts.next().unwrap();
        let value = parts.next().unwrap().to_string();
        by_time.entry(t).or_default().insert(value);
    }
    assert!(by_time.len() > 3);
    for (t, values) in by_time {
        assert_eq!(values.len(), 1, "distinct values at t = {t}");
    }
}

#[test]
fn malformed_offspring_yields_config_exit_code() {
    let out = temp_out("bad-offspring");
    let config = quick_config(&["offspring={\"0\": 1.0}"]);
    let err = run_command(CommandKind::Solve, &config, &out).unwrap_err();
    let rendered = err.to_string();
    assert!(
        rendered.contains("k >= 1") || rendered.contains("k = 1"),
        "message should name the admissible indices: {rendered}"
    );
}

#[test]
fn simulate_is_reproducible_and_dumps_replicas() {
    let overrides = [
        "replicas=300",
        "simulate.dump_replicas=true",
        "simulate.functionals=[\"count\",\"joint_occupation\"]",
        "simulate.weight={\"shape\": \"constant\", \"value\": 0.5}",
        "horizon=1.0",
    ];
    let out1 = temp_out("simulate-a");
    let out2 = temp_out("simulate-b");
    let config = quick_config(&overrides);
    assert_eq!(run_command(CommandKind::Simulate, &config, &out1).unwrap(), 0);
    assert_eq!(run_command(CommandKind::Simulate, &config, &out2).unwrap(), 0);
    for name in ["battery.json", "replicas.csv"] {
        let a = fs::read(out1.join(name)).unwrap();
        let b = fs::read(out2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    let rows = fs::read_to_string(out1.join("replicas.csv")).unwrap();
    assert_eq!(rows.lines().count(), 301);
}

#[test]
fn mass_subcommand_passes_on_reduced_problem() {
    let out = temp_out("mass-quick");
    let config = quick_config(&[
        "grid.points=256",
        "mass.tol=1e-4",
        "mass.t_max=16",
        "mass.invariant_horizon=9",
    ]);
    let exit = run_command(CommandKind::Mass, &config, &out).unwrap();
    assert_eq!(exit, 0);
    for name in ["mass_trace.csv", "profile.csv", "sandwich.csv", "summary.json"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
}

#[test]
fn shipped_standard_config_matches_defaults() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/standard.json");
    let shipped = RunConfig::load(Some(&path), &[]).unwrap();
    let defaults = RunConfig::default();
    assert_eq!(
        serde_json::to_value(&shipped).unwrap(),
        serde_json::to_value(&defaults).unwrap(),
        "configs/standard.json drifted from the built-in defaults"
    );
}

#[test]
fn every_check_key_is_documented_exactly_once() {
    let doc = fs::read_to_string(
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../docs/checks.md"),
    )
    .unwrap();
    let keys = [
        "solve_mass_nonincreasing",
        "solve_sup_bounded",
        "mass_converged",
        "sandwich_lower",
        "sandwich_upper_bounded",
        "profile_ratio",
        "duality_trivial_rows",
        "duality_product",
        "duality_laplace",
        "duality_occupation",
        "longtime_trend",
        "splitting_ratio_band",
        "splitting_final_error",
        "occupation_limit_small_weight",
        "occupation_limit_slow_scale",
        "occupation_bound_matches_ode",
        "occupation_bound_below_solution",
        "constant_data_exact",
        "solution_invariants",
        "sandwich_bounds",
        "kernel_profile",
        "mass_convexity",
        "duality_identities",
        "moment_oracles",
        "splitting_convergence",
        "occupation_limits",
    ];
    for key in keys {
        let occurrences = doc.matches(&format!("| `{key}`")).count();
        assert_eq!(occurrences, 1, "key {key} must appear exactly once in docs/checks.md");
    }
}

#[test]
fn unknown_functional_is_a_config_class_error() {
    let out = temp_out("bad-functional");
    let config = quick_config(&["simulate.functionals=[\"bogus\"]", "replicas=100"]);
    let err = run_command(CommandKind::Simulate, &config, &out).unwrap_err();
    assert!(err.to_string().contains("bogus"));
}

#[test]
fn occupation_subcommand_writes_both_limits() {
    let out = temp_out("occupation");
    let config = quick_config(&["occupation.steps_per_unit=128"]);
    let exit = run_command(CommandKind::Occupation, &config, &out).unwrap();
    assert_eq!(exit, 0);
    let limit_one = fs::read_to_string(out.join("limit_one.csv")).unwrap();
    let last = limit_one.lines().last().unwrap();
    let terminal: f64 = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(terminal < 1e-3);
    let limit_two = fs::read_to_string(out.join("limit_two.csv")).unwrap();
    assert_eq!(limit_two.lines().count(), 5);
}
