//! Cross-validation harness: every identity tying the particle system to
//! the PDE becomes a statistical test.
//!
//! The product identity says the expected multiplicative functional of the
//! particle system started from points `x_i` equals the product of solution
//! values at those points; the Laplace and occupation identities are its
//! exponential and killed refinements. Each check runs a replica battery on
//! one side and a deterministic solve on the other and reports the z-score
//! of the difference — powerful enough to catch a wrong diffusion constant
//! (which sends `|z|` beyond 20 on the standard problem) while tolerating
//! Monte Carlo noise.

use crate::asymptotics::{asymptotic_mass, AsymError, AsymptoticsConfig};
use crate::branching::{
    BranchError, Configuration, EstimatorBattery, FunctionalKind, PointField,
};
use crate::field::{GridField, GridSpec};
use crate::offspring::OffspringDistribution;
use crate::pde::{nonlinear_semigroup_u, solve, EvolutionSpec, PdeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DualityError {
    #[error("start point coordinate {coordinate} is within the box margin (|x| must stay below {limit})")]
    BoxMarginViolated { coordinate: f64, limit: f64 },
    #[error(transparent)]
    Pde(#[from] PdeError),
    #[error(transparent)]
    Branch(#[from] BranchError),
    #[error(transparent)]
    Asym(#[from] AsymError),
}

/// Shared knobs of the duality checks.
#[derive(Debug, Clone, Copy)]
pub struct DualityConfig {
    pub grid: GridSpec,
    /// Time steps of the deterministic solves.
    pub steps: usize,
    pub replicas: usize,
    pub master_seed: u64,
    /// Pass when `|z| <= z_max`.
    pub z_max: f64,
    /// Occupation sub-step; 0 = default.
    pub h_occ: f64,
    pub count_cap: usize,
}

impl DualityConfig {
    pub fn new(grid: GridSpec, replicas: usize, master_seed: u64) -> Self {
        Self {
            grid,
            steps: 256,
            replicas,
            master_seed,
            z_max: 4.0,
            h_occ: 0.0,
            count_cap: 1_000_000,
        }
    }
}

/// Outcome of one identity check.
#[derive(Debug, Clone)]
pub struct DualityReport {
    pub name: String,
    pub pde_value: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    pub z: f64,
    pub pass: bool,
}

fn report(name: &str, pde_value: f64, mc_mean: f64, mc_std_error: f64, z_max: f64) -> DualityReport {
    let diff = mc_mean - pde_value;
    let z = if mc_std_error > 0.0 {
        diff / mc_std_error
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    DualityReport {
        name: name.to_string(),
        pde_value,
        mc_mean,
        mc_std_error,
        z,
        pass: z.abs() <= z_max,
    }
}

/// Starting points must keep clear of the box boundary over the horizon,
/// mirroring the margin rule of the mass runs.
fn check_start_margin(
    starts: &Configuration,
    grid: GridSpec,
    horizon: f64,
) -> Result<(), DualityError> {
    let margin = (4.0 * (2.0 * horizon).sqrt()).min(grid.half_width / 2.0);
    let limit = grid.half_width - margin;
    for p in starts.points() {
        for &c in p {
            if c.abs() > limit {
                return Err(DualityError::BoxMarginViolated {
                    coordinate: c,
                    limit,
                });
            }
        }
    }
    Ok(())
}

/// Product identity: the expected multiplicative functional at the horizon
/// equals the product of solution values at the start points.
pub fn check_markov_duality(
    starts: &Configuration,
    phi: &dyn PointField,
    dist: &OffspringDistribution,
    horizon: f64,
    cfg: &DualityConfig,
) -> Result<DualityReport, DualityError> {
    check_start_margin(starts, cfg.grid, horizon)?;
    let phi_field = GridField::from_fn(cfg.grid, |x| phi.eval(x));
    let traj = solve(
        &phi_field,
        EvolutionSpec::new(dist.clone(), horizon, cfg.steps).with_stride(cfg.steps),
    )?;
    let terminal = traj.terminal();
    let pde_value: f64 = starts.points().map(|p| terminal.interpolate(p)).product();

    let battery = EstimatorBattery {
        terminal_fn: Some(phi),
        functionals: vec![FunctionalKind::Product],
        h_occ: cfg.h_occ,
        count_cap: cfg.count_cap,
        ..EstimatorBattery::new(starts, dist, horizon, cfg.replicas, cfg.master_seed)
    };
    let stats = battery
        .run()?
        .get(FunctionalKind::Product)
        .expect("product registered");
    Ok(report(
        "product",
        pde_value,
        stats.mean,
        stats.std_error,
        cfg.z_max,
    ))
}

/// Laplace-transform identity: `E exp(-<g, X_s>) = exp(-sum_i (U~_s g)(x_i))`.
pub fn check_laplace_duality(
    starts: &Configuration,
    g: &dyn PointField,
    dist: &OffspringDistribution,
    horizon: f64,
    cfg: &DualityConfig,
) -> Result<DualityReport, DualityError> {
    check_start_margin(starts, cfg.grid, horizon)?;
    let g_field = GridField::from_fn(cfg.grid, |x| g.eval(x));
    let transformed = nonlinear_semigroup_u(&g_field, dist, horizon, cfg.steps)?;
    let exponent: f64 = starts.points().map(|p| transformed.interpolate(p)).sum();
    let pde_value = (-exponent).exp();

    let battery = EstimatorBattery {
        terminal_fn: Some(g),
        functionals: vec![FunctionalKind::Laplace],
        h_occ: cfg.h_occ,
        count_cap: cfg.count_cap,
        ..EstimatorBattery::new(starts, dist, horizon, cfg.replicas, cfg.master_seed)
    };
    let stats = battery
        .run()?
        .get(FunctionalKind::Laplace)
        .expect("laplace registered");
    Ok(report(
        "laplace",
        pde_value,
        stats.mean,
        stats.std_error,
        cfg.z_max,
    ))
}

/// Occupation identity: the joint terminal/occupation transform equals the
/// exponential of the killed log-solution summed over the start points.
pub fn check_occupation_representation(
    starts: &Configuration,
    weight: &dyn PointField,
    data: Option<&dyn PointField>,
    dist: &OffspringDistribution,
    horizon: f64,
    cfg: &DualityConfig,
) -> Result<DualityReport, DualityError> {
    check_start_margin(starts, cfg.grid, horizon)?;
    let weight_field = GridField::from_fn(cfg.grid, |x| weight.eval(x));
    let initial = match data {
        Some(f) => GridField::from_fn(cfg.grid, |x| (-f.eval(x)).exp()),
        None => GridField::constant(cfg.grid, 1.0),
    };
    let traj = solve(
        &initial,
        EvolutionSpec::new(dist.clone(), horizon, cfg.steps)
            .with_kill(weight_field, 1.0)
            .with_stride(cfg.steps),
    )?;
    let terminal = traj.terminal();
    if terminal.min_value() < 1e-300 {
        return Err(DualityError::Pde(PdeError::LogDomain));
    }
    let log_solution = terminal.map(|v| -v.ln());
    let exponent: f64 = starts.points().map(|p| log_solution.interpolate(p)).sum();
    let pde_value = (-exponent).exp();

    let battery = EstimatorBattery {
        terminal_fn: data,
        weight: Some(weight),
        functionals: vec![FunctionalKind::JointOccupation],
        h_occ: cfg.h_occ,
        count_cap: cfg.count_cap,
        ..EstimatorBattery::new(starts, dist, horizon, cfg.replicas, cfg.master_seed)
    };
    let stats = battery
        .run()?
        .get(FunctionalKind::JointOccupation)
        .expect("joint registered");
    Ok(report(
        "occupation",
        pde_value,
        stats.mean,
        stats.std_error,
        cfg.z_max,
    ))
}

/// One time point of the long-time comparison.
#[derive(Debug, Clone, Copy)]
pub struct LongtimeRow {
    pub t: f64,
    pub mc_mean: f64,
    pub mc_std_error: f64,
    /// `c_datum * (heat_t datum)(x)` summed log-free over start points.
    pub reference: f64,
    /// `t^{d/2} |e^{(1-q_1)t} mc_mean - reference|`.
    pub scaled_discrepancy: f64,
    /// `t^{d/2} e^{(1-q_1)t} mc_std_error`: the Monte Carlo noise floor of
    /// the discrepancy.
    pub noise_scale: f64,
}

/// Trend diagnostic for the long-time shape of the particle distribution:
/// the rescaled multiplicative functional should approach the asymptotic
/// mass times the plain heat evolution of the datum.
#[derive(Debug, Clone)]
pub struct LongtimeReport {
    pub c_datum: f64,
    pub rows: Vec<LongtimeRow>,
    /// Whether the scaled discrepancy decreased from the first to the last
    /// time point.
    pub decreasing: bool,
}

pub fn check_longtime_distribution(
    start: &Configuration,
    datum: &dyn PointField,
    dist: &OffspringDistribution,
    times: &[f64],
    cfg: &DualityConfig,
    mass_cfg: &AsymptoticsConfig,
) -> Result<LongtimeReport, DualityError> {
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    check_start_margin(start, cfg.grid, horizon)?;
    let datum_field = GridField::from_fn(cfg.grid, |x| datum.eval(x));
    let run = asymptotic_mass(&datum_field, dist, mass_cfg)?;
    if !run.trace.converged {
        return Err(DualityError::Asym(AsymError::NotConverged {
            t_max: mass_cfg.t_max,
            last_increment: run.trace.last_increment,
        }));
    }
    let c_datum = run.trace.c_phi;
    let rate = dist.decay_rate();
    let half_dim = cfg.grid.dim as f64 / 2.0;

    let mut rows = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let battery = EstimatorBattery {
            terminal_fn: Some(datum),
            functionals: vec![FunctionalKind::Product],
            h_occ: cfg.h_occ,
            count_cap: cfg.count_cap,
            ..EstimatorBattery::new(
                start,
                dist,
                t,
                cfg.replicas,
                cfg.master_seed.wrapping_add(i as u64),
            )
        };
        let stats = battery
            .run()?
            .get(FunctionalKind::Product)
            .expect("product registered");
        let heat = datum_field.heat_apply(t).map_err(PdeError::from)?;
        let reference: f64 = c_datum
            * start
                .points()
                .map(|p| heat.interpolate(p))
                .product::<f64>();
        let grown = (rate * t).exp();
        let scaled_discrepancy = t.powf(half_dim) * (grown * stats.mean - reference).abs();
        let noise_scale = t.powf(half_dim) * grown * stats.std_error;
        rows.push(LongtimeRow {
            t,
            mc_mean: stats.mean,
            mc_std_error: stats.std_error,
            reference,
            scaled_discrepancy,
            noise_scale,
        });
    }
    let decreasing = match (rows.first(), rows.last()) {
        (Some(a), Some(b)) => b.scaled_discrepancy < a.scaled_discrepancy,
        _ => true,
    };
    Ok(LongtimeReport {
        c_datum,
        rows,
        decreasing,
    })
}
