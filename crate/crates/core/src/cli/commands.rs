//! Subcommand implementations: each one runs its experiment, writes CSV
//! artifacts into the output directory, and returns the checks that decide
//! the exit code.

use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::json;

use crate::asymptotics::{
    asymptotic_mass, convergence_profile, sandwich_report, AsymptoticsConfig,
};
use crate::branching::{Configuration, EstimatorBattery, FunctionalKind, PointField};
use crate::duality::{
    check_laplace_duality, check_longtime_distribution, check_markov_duality,
    check_occupation_representation, DualityConfig, DualityReport,
};
use crate::field::GridField;
use crate::offspring::OffspringDistribution;
use crate::oracle;
use crate::pde::{solve, splitting_product, EvolutionSpec};
use crate::shapes::Shape;

use super::config::RunConfig;
use super::{Check, CliError};

pub(super) fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    let mut file = BufWriter::new(File::create(dir.join(name))?);
    file.write_all(contents.as_bytes())?;
    Ok(())
}

fn start_configuration(points: &[Vec<f64>], dim: usize) -> Result<Configuration, CliError> {
    if points.iter().any(|p| p.len() != dim) {
        return Err(CliError::Config(super::config::ConfigError::StartDimension {
            got: points.first().map_or(0, Vec::len),
            expected: dim,
        }));
    }
    Ok(Configuration::from_points(dim, points)?)
}

/// `solve`: integrate the main equation and dump the trajectory.
pub fn cmd_solve(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let grid = config.grid_spec()?;
    let phi0 = config.validated_initial()?.sample(grid);
    let traj = solve(
        &phi0,
        EvolutionSpec::new(dist, config.horizon, config.steps),
    )?;

    let mut csv = String::from("t,node,value\n");
    for (t, snap) in traj.iter() {
        for (idx, v) in snap.values().iter().enumerate() {
            csv.push_str(&format!("{t},{idx},{v}\n"));
        }
    }
    write_file(out, "trajectory.csv", &csv)?;

    let m0 = phi0.mass();
    let sup0 = phi0.sup_norm();
    let mut mass_ok = true;
    let mut sup_ok = true;
    let mut prev = f64::INFINITY;
    for (_, snap) in traj.iter() {
        let m = snap.mass();
        mass_ok &= m <= prev + 1e-8 * m0;
        sup_ok &= snap.sup_norm() <= sup0 + 1e-9;
        prev = m;
    }
    Ok(vec![
        Check::new("solve_mass_nonincreasing", mass_ok)
            .detail(json!({"initial_mass": m0, "final_mass": prev})),
        Check::new("solve_sup_bounded", sup_ok).detail(json!({"initial_sup": sup0})),
    ])
}

/// `mass`: asymptotic mass extraction plus the two-sided heat comparison
/// and the kernel-profile diagnostic.
pub fn cmd_mass(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let grid = config.grid_spec()?;
    let phi0 = config.validated_initial()?.sample(grid);
    let asym_cfg = AsymptoticsConfig {
        steps_per_unit: config.mass.steps_per_unit,
        tol: config.mass.tol,
        t_max: config.mass.t_max,
        snapshot_stride: 0,
    };
    let run = asymptotic_mass(&phi0, &dist, &asym_cfg)?;

    let mut trace_csv = String::from("t,rescaled_mass\n");
    for (t, m) in run.trace.times.iter().zip(&run.trace.masses) {
        trace_csv.push_str(&format!("{t},{m}\n"));
    }
    write_file(out, "mass_trace.csv", &trace_csv)?;

    let profile = convergence_profile(&run.trajectory, run.trace.c_phi)?;
    let mut profile_csv = String::from("t,value\n");
    for (t, v) in profile.times.iter().zip(&profile.values) {
        profile_csv.push_str(&format!("{t},{v}\n"));
    }
    write_file(out, "profile.csv", &profile_csv)?;

    // The comparison bounds are checked on a fixed-horizon run so the
    // measured constants cover the whole time range at uniform resolution.
    let horizon = config.mass.invariant_horizon;
    let steps = (horizon * config.mass.steps_per_unit as f64).round() as usize;
    let traj = solve(&phi0, EvolutionSpec::new(dist, horizon, steps))?;
    let sandwich = sandwich_report(&traj)?;
    let mut sandwich_csv = String::from("t,lower_ok,lower_margin,upper_constant\n");
    for row in &sandwich.rows {
        sandwich_csv.push_str(&format!(
            "{},{},{},{}\n",
            row.t, row.lower_ok, row.lower_margin, row.upper_constant
        ));
    }
    write_file(out, "sandwich.csv", &sandwich_csv)?;

    let profile_ratio_ok = profile_ratio_check(&profile, 1.0, 8.0, 0.25);
    Ok(vec![
        Check::new("mass_converged", run.trace.converged).detail(json!({
            "c_phi": run.trace.c_phi,
            "last_increment": run.trace.last_increment,
            "stopped_at": run.trace.times.last(),
        })),
        Check::new("sandwich_lower", sandwich.all_lower_ok()),
        Check::new("sandwich_upper_bounded", sandwich.upper_trend_bounded()),
        Check::new("profile_ratio", profile_ratio_ok).detail(json!({
            "at_1": profile_value_at(&profile, 1.0),
            "at_8": profile_value_at(&profile, 8.0),
        })),
    ])
}

fn profile_value_at(profile: &crate::asymptotics::ConvergenceProfile, t: f64) -> Option<f64> {
    profile
        .times
        .iter()
        .position(|&s| (s - t).abs() < 1e-9)
        .map(|i| profile.values[i])
}

fn profile_ratio_check(
    profile: &crate::asymptotics::ConvergenceProfile,
    t_early: f64,
    t_late: f64,
    ratio: f64,
) -> bool {
    match (
        profile_value_at(profile, t_early),
        profile_value_at(profile, t_late),
    ) {
        (Some(early), Some(late)) => late <= ratio * early,
        _ => false,
    }
}

/// `simulate`: one replica battery with the configured functionals.
pub fn cmd_simulate(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let grid = config.grid_spec()?;
    let start = start_configuration(&config.simulate.start, grid.dim)?;
    let functionals = parse_functionals(&config.simulate.functionals)?;

    let terminal = config.simulate.terminal.clone();
    let weight = config.simulate.weight.clone();
    let battery = EstimatorBattery {
        terminal_fn: terminal.as_ref().map(|s| s as &dyn PointField),
        weight: weight.as_ref().map(|s| s as &dyn PointField),
        functionals,
        h_occ: config.simulate.h_occ,
        count_cap: config.simulate.count_cap,
        ..EstimatorBattery::new(&start, &dist, config.horizon, config.replicas, config.seed)
    };
    let (report, rows) = battery.run_with_rows()?;

    let mut entries = serde_json::Map::new();
    for (kind, stats) in &report.stats {
        entries.insert(
            kind.name().to_string(),
            json!({"mean": stats.mean, "std_error": stats.std_error, "replicas": stats.replicas}),
        );
    }
    write_file(
        out,
        "battery.json",
        &serde_json::to_string_pretty(&serde_json::Value::Object(entries))?,
    )?;

    if config.simulate.dump_replicas {
        let mut csv = String::from("stream,count,occupation\n");
        for row in &rows {
            csv.push_str(&format!("{},{},{}\n", row.stream, row.count, row.occupation));
        }
        write_file(out, "replicas.csv", &csv)?;
    }
    Ok(Vec::new())
}

fn parse_functionals(names: &[String]) -> Result<Vec<FunctionalKind>, CliError> {
    names
        .iter()
        .map(|name| {
            Ok(match name.as_str() {
                "count" => FunctionalKind::Count,
                "product" => FunctionalKind::Product,
                "laplace" => FunctionalKind::Laplace,
                "joint_occupation" => FunctionalKind::JointOccupation,
                other => match other.strip_prefix("scaled_occupation:") {
                    Some(d) => FunctionalKind::ScaledOccupation {
                        divisor: d.parse().map_err(|_| {
                            CliError::UnknownFunctional(other.to_string())
                        })?,
                    },
                    None => return Err(CliError::UnknownFunctional(other.to_string())),
                },
            })
        })
        .collect()
}

pub(super) fn duality_row(report: &DualityReport) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        report.name, report.pde_value, report.mc_mean, report.mc_std_error, report.z, report.pass
    )
}

/// `duality`: the three identity checks with exact degenerate rows, plus the
/// long-time trend diagnostic.
pub fn cmd_duality(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let grid = config.grid_spec()?;
    let start = start_configuration(&config.duality.start, grid.dim)?;
    let phi = config.validated_initial()?.clone();
    let weight = config.duality.weight.clone();

    let mut cfg = DualityConfig::new(grid, config.replicas, config.seed);
    cfg.steps = config.steps;
    cfg.z_max = config.duality.z_max;

    // Degenerate rows are exact: unit product, zero Laplace exponent, zero
    // occupation weight. They run tiny batteries and must come out at z = 0.
    let mut trivial_cfg = cfg;
    trivial_cfg.replicas = 200;
    let one = |_: &[f64]| 1.0;
    let zero = |_: &[f64]| 0.0;
    let trivial_product =
        check_markov_duality(&start, &one, &dist, config.horizon, &trivial_cfg)?;
    let trivial_laplace =
        check_laplace_duality(&start, &zero, &dist, config.horizon, &trivial_cfg)?;
    let trivial_occupation = check_occupation_representation(
        &start,
        &zero,
        None,
        &dist,
        config.horizon,
        &trivial_cfg,
    )?;

    let product = check_markov_duality(&start, &phi, &dist, config.horizon, &cfg)?;
    let laplace = check_laplace_duality(&start, &phi, &dist, config.horizon, &cfg)?;
    let occupation = check_occupation_representation(
        &start,
        &weight,
        None,
        &dist,
        config.horizon,
        &cfg,
    )?;

    let mut csv = String::from("name,pde_value,mc_mean,mc_std_error,z,pass\n");
    for (label, report) in [
        ("product_unit", &trivial_product),
        ("laplace_zero", &trivial_laplace),
        ("occupation_zero", &trivial_occupation),
        ("product", &product),
        ("laplace", &laplace),
        ("occupation", &occupation),
    ] {
        let mut named = report.clone();
        named.name = label.to_string();
        csv.push_str(&duality_row(&named));
    }
    write_file(out, "duality.csv", &csv)?;

    // Long-time shape comparison: a mollified unit-measure indicator keeps
    // the heat reference honest (its integral is 1).
    let indicator = Shape::IndicatorSmoothed {
        center: vec![0.0; grid.dim],
        radius: 0.5,
        ramp: 0.4,
        peak: 1.0,
    };
    let mass_cfg = AsymptoticsConfig {
        steps_per_unit: config.mass.steps_per_unit,
        tol: config.mass.tol,
        t_max: config.mass.t_max,
        snapshot_stride: 0,
    };
    let longtime = check_longtime_distribution(
        &start,
        &indicator,
        &dist,
        &config.duality.longtime_times,
        &cfg,
        &mass_cfg,
    )?;
    let mut lt_csv =
        String::from("t,mc_mean,mc_std_error,reference,scaled_discrepancy,noise_scale\n");
    for row in &longtime.rows {
        lt_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.t,
            row.mc_mean,
            row.mc_std_error,
            row.reference,
            row.scaled_discrepancy,
            row.noise_scale
        ));
    }
    write_file(out, "longtime.csv", &lt_csv)?;

    let z_detail = |r: &DualityReport| {
        json!({"pde": r.pde_value, "mc": r.mc_mean, "se": r.mc_std_error, "z": r.z})
    };
    Ok(vec![
        Check::new(
            "duality_trivial_rows",
            trivial_product.z == 0.0 && trivial_laplace.z == 0.0 && trivial_occupation.z == 0.0,
        ),
        Check::new("duality_product", product.pass).detail(z_detail(&product)),
        Check::new("duality_laplace", laplace.pass).detail(z_detail(&laplace)),
        Check::new("duality_occupation", occupation.pass).detail(z_detail(&occupation)),
        Check::trend("longtime_trend", longtime.decreasing).detail(json!({
            "c_datum": longtime.c_datum,
            "discrepancies": longtime.rows.iter().map(|r| r.scaled_discrepancy).collect::<Vec<_>>(),
        })),
    ])
}

/// `splitting`: error table of the alternating source/semigroup product
/// against a fine direct killed solve.
pub fn cmd_splitting(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let grid = config.grid_spec()?;
    let section = &config.splitting;
    let f = section.data.sample(grid);
    let phi = section.weight.sample(grid);
    let t = config.horizon;

    let killed = solve(
        &f.map(|v| (-v).exp()),
        EvolutionSpec::new(dist.clone(), t, section.reference_steps).with_kill(phi.clone(), 1.0),
    )?;
    let reference = killed.terminal().map(|v| -v.ln());

    let mut outer = section.outer.clone();
    outer.sort_unstable();
    outer.dedup();
    let mut csv = String::from("outer,sup_error,ratio_vs_previous\n");
    let mut errors = Vec::new();
    for &n in &outer {
        let approx = splitting_product(&f, &phi, &dist, t, n, section.inner_steps)?;
        let err = approx.linf_distance(&reference)?;
        let ratio = errors
            .last()
            .and_then(|&(m, prev): &(usize, f64)| (n == 2 * m).then(|| prev / err));
        match ratio {
            Some(r) => csv.push_str(&format!("{n},{err},{r}\n")),
            None => csv.push_str(&format!("{n},{err},\n")),
        }
        errors.push((n, err));
    }
    write_file(out, "splitting.csv", &csv)?;

    let [lo, hi] = section.ratio_band;
    let mut ratios = Vec::new();
    let mut band_ok = true;
    for pair in errors.windows(2) {
        let (n0, e0) = pair[0];
        let (n1, e1) = pair[1];
        if n1 == 2 * n0 && n1 <= 32 {
            let r = e0 / e1;
            band_ok &= (lo..=hi).contains(&r);
            ratios.push(r);
        }
    }
    let final_error = errors.last().map_or(f64::INFINITY, |&(_, e)| e);
    Ok(vec![
        Check::new("splitting_ratio_band", band_ok)
            .detail(json!({"ratios": ratios, "band": section.ratio_band})),
        Check::new("splitting_final_error", final_error <= section.final_error_max)
            .detail(json!({"final_error": final_error, "max": section.final_error_max})),
    ])
}

/// `occupation`: the two scalar occupation-time limits with their closed
/// form lower bound.
pub fn cmd_occupation(config: &RunConfig, out: &Path) -> Result<Vec<Check>, CliError> {
    let dist = config.offspring_distribution()?;
    let section = &config.occupation;
    let law: Vec<(u32, f64)> = dist.support().to_vec();
    let fp1 = oracle::slope_at_one(&law);

    // Fixed-scale limit: the survival value drains to zero.
    let steps = (section.horizon * section.steps_per_unit as f64).round() as usize;
    let limit_one = oracle::occupation_limit_one(&law, section.weight, section.horizon, steps)?;
    let mut csv = String::from("t,value\n");
    for (t, v) in limit_one.times.iter().zip(&limit_one.values) {
        csv.push_str(&format!("{t},{v}\n"));
    }
    write_file(out, "limit_one.csv", &csv)?;
    let drained = limit_one.terminal() < 1e-3;
    let decreasing = limit_one.values.windows(2).all(|w| w[1] < w[0]);

    // Slow-scale limit: endpoints climb back to 1 along the scale grid.
    let alpha = section.alpha_fraction / fp1;
    let rows = oracle::occupation_limit_two(
        &law,
        section.weight_bound,
        alpha,
        &section.time_scales,
        section.steps_per_unit,
    )?;
    let mut csv = String::from("time_scale,t,value,lower_bound\n");
    for row in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.time_scale, row.time, row.value, row.lower_bound
        ));
    }
    write_file(out, "limit_two.csv", &csv)?;
    let increasing = rows.windows(2).all(|w| w[1].value > w[0].value);
    let final_ok = rows.last().is_some_and(|r| r.value >= 0.99);

    // The closed-form bound must match its own ODE and sit below the
    // solution along every recorded trace.
    let mut bound_matches = true;
    let mut bound_below = true;
    for &time_scale in &section.time_scales {
        let t_end = alpha * time_scale.ln();
        let rk = oracle::integrate(&oracle::ScalarIvp {
            law: law.clone(),
            rhs: oracle::ScalarRhs::LinearLowerBound {
                weight_bound: section.weight_bound,
                time_scale,
            },
            initial: 1.0,
            horizon: t_end,
            steps: 100_000,
        })?;
        let formula = oracle::g_explicit(t_end, time_scale, section.weight_bound, fp1)?;
        bound_matches &= (rk.terminal() - formula).abs() <= 1e-9;

        let trace = oracle::integrate(&oracle::ScalarIvp {
            law: law.clone(),
            rhs: oracle::ScalarRhs::ScaledKilled {
                weight_bound: section.weight_bound,
                time_scale,
            },
            initial: 1.0,
            horizon: t_end,
            steps: (t_end * section.steps_per_unit as f64).ceil() as usize,
        })?;
        for (&t, &v) in trace.times.iter().zip(&trace.values) {
            let g = oracle::g_explicit(t, time_scale, section.weight_bound, fp1)?;
            bound_below &= v >= g - 1e-9;
        }
    }

    Ok(vec![
        Check::new("occupation_limit_small_weight", drained && decreasing)
            .detail(json!({"terminal": limit_one.terminal()})),
        Check::new("occupation_limit_slow_scale", increasing && final_ok).detail(json!({
            "values": rows.iter().map(|r| r.value).collect::<Vec<_>>(),
        })),
        Check::new("occupation_bound_matches_ode", bound_matches),
        Check::new("occupation_bound_below_solution", bound_below),
    ])
}

/// Reusable helpers for the suite's extra criteria.
pub(super) struct MomentRow {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub std_error: f64,
    pub z: f64,
}

impl MomentRow {
    pub fn pass(&self) -> bool {
        self.z.abs() <= 4.0
    }
}

/// Mean particle count at the horizon against the exponential growth law.
pub(super) fn count_moment(
    dist: &OffspringDistribution,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<MomentRow, CliError> {
    let start = Configuration::single(&[0.0]);
    let battery = EstimatorBattery {
        functionals: vec![FunctionalKind::Count],
        ..EstimatorBattery::new(&start, dist, horizon, replicas, seed)
    };
    let stats = battery
        .run()?
        .get(FunctionalKind::Count)
        .expect("count registered");
    let expected = ((dist.mean() - 1.0) * horizon).exp();
    let z = (stats.mean - expected) / stats.std_error;
    Ok(MomentRow {
        name: format!("count_t{horizon}"),
        observed: stats.mean,
        expected,
        std_error: stats.std_error,
        z,
    })
}

/// Mean occupation of the unit weight against its closed-form integral.
pub(super) fn occupation_moment(
    dist: &OffspringDistribution,
    horizon: f64,
    replicas: usize,
    seed: u64,
) -> Result<MomentRow, CliError> {
    let start = Configuration::single(&[0.0]);
    let unit = |_: &[f64]| 1.0;
    let battery = EstimatorBattery {
        weight: Some(&unit),
        functionals: vec![FunctionalKind::JointOccupation],
        ..EstimatorBattery::new(&start, dist, horizon, replicas, seed)
    };
    let (_, rows) = battery.run_with_rows()?;
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r.occupation).sum::<f64>() / n;
    let ss = rows
        .iter()
        .map(|r| (r.occupation - mean).powi(2))
        .sum::<f64>();
    let std_error = (ss / (n - 1.0) / n).sqrt();
    let growth = dist.mean() - 1.0;
    let expected = ((growth * horizon).exp() - 1.0) / growth;
    let z = (mean - expected) / std_error;
    Ok(MomentRow {
        name: format!("occupation_t{horizon}"),
        observed: mean,
        expected,
        std_error,
        z,
    })
}

/// Constant initial data collapse the PDE to a scalar ODE; for the pinned
/// half/half law the endpoint has the closed form `1/(1 + e^{t/2})` from
/// `u_0 = 1/2`. Returns the solver's distance to the closed form and to an
/// independent fine Runge-Kutta run.
pub(super) fn constant_data_error(config: &RunConfig) -> Result<(f64, f64), CliError> {
    let law = [(1u32, 0.5), (2, 0.5)];
    let dist = OffspringDistribution::from_pairs(&law)?;
    let grid = config.grid_spec()?;
    let phi0 = GridField::constant(grid, 0.5);
    let traj = solve(&phi0, EvolutionSpec::new(dist, 1.0, 256))?;
    let closed_form = 1.0 / (1.0 + 0.5f64.exp());
    let expected = GridField::constant(grid, closed_form);
    let error_closed = traj.terminal().linf_distance(&expected)?;

    let rk = oracle::integrate(&oracle::ScalarIvp {
        law: law.to_vec(),
        rhs: oracle::ScalarRhs::Reaction,
        initial: 0.5,
        horizon: 1.0,
        steps: 100_000,
    })?;
    let error_rk = traj
        .terminal()
        .values()
        .iter()
        .fold(0.0f64, |m, &v| m.max((v - rk.terminal()).abs()));
    Ok((error_closed, error_rk))
}
