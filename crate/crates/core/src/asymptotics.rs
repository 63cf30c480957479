//! Long-time diagnostics for kill-free runs.
//!
//! The rescaled solution `e^{(1-q_1)t} u(t)` gains mass monotonically toward
//! a finite limit, the asymptotic mass. This module extracts that limit with
//! a windowed stopping rule, checks the two-sided comparison with the heat
//! flow, measures how the rescaled solution collapses onto a multiple of the
//! heat kernel, and runs the contraction/convexity experiments on the map
//! from datum to asymptotic mass.

use std::f64::consts::PI;

use crate::field::{GridField, GridSpec};
use crate::offspring::OffspringDistribution;
use crate::pde::{EvolutionSpec, PdeError, Stepper, Trajectory};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AsymError {
    #[error("initial datum keeps {fraction} of its mass within the box margin; widen the box or shrink the horizon")]
    BoxMarginViolated { fraction: f64 },
    #[error("mass trace not converged by t = {t_max}; last relative increment {last_increment}")]
    NotConverged { t_max: f64, last_increment: f64 },
    #[error("mixing weight {0} must lie strictly inside (0, 1)")]
    BadLambda(f64),
    #[error(transparent)]
    Pde(#[from] PdeError),
}

/// Stopping rule and resolution for asymptotic-mass runs.
#[derive(Debug, Clone, Copy)]
pub struct AsymptoticsConfig {
    /// Time steps per unit of time.
    pub steps_per_unit: usize,
    /// Declare convergence when the mass gained over one unit window drops
    /// below `tol` relative to the current mass.
    pub tol: f64,
    /// Give up (converged = false) at this time.
    pub t_max: f64,
    /// Snapshot stride passed through to the solver; 0 = automatic.
    pub snapshot_stride: usize,
}

impl Default for AsymptoticsConfig {
    fn default() -> Self {
        Self {
            steps_per_unit: 64,
            tol: 1e-5,
            t_max: 20.0,
            snapshot_stride: 0,
        }
    }
}

/// Rescaled-mass time series with the extracted limit.
#[derive(Debug, Clone)]
pub struct MassTrace {
    pub times: Vec<f64>,
    /// `m(t) = e^{(1-q_1) t} * mass(u(t))`, nondecreasing.
    pub masses: Vec<f64>,
    pub converged: bool,
    /// Last recorded mass; the asymptotic mass when `converged`.
    pub c_phi: f64,
    /// Relative mass gain over the final unit window.
    pub last_increment: f64,
}

/// A mass run keeps the trajectory snapshots next to the trace so the
/// profile diagnostics can reuse them.
#[derive(Debug, Clone)]
pub struct MassRun {
    pub trace: MassTrace,
    pub trajectory: Trajectory,
}

/// Fraction of `|phi0|` mass allowed near the boundary.
const MARGIN_MASS_FRACTION: f64 = 1e-10;

/// Refuses data whose mass sits too close to the boundary for the horizon:
/// diffusion over `t_max` would wrap around and contaminate the free-space
/// comparisons. The nominal margin `4 sqrt(2 t_max)` is capped at half the
/// box so long horizons on adequate boxes remain usable.
pub fn check_box_margin(phi0: &GridField, t_max: f64) -> Result<(), AsymError> {
    let spec = phi0.spec();
    let margin = (4.0 * (2.0 * t_max).sqrt()).min(spec.half_width / 2.0);
    let threshold = spec.half_width - margin;
    let mut near = 0.0;
    let mut total = 0.0;
    let mut x = [0.0; 2];
    for (idx, v) in phi0.values().iter().enumerate() {
        spec.node_coords(idx, &mut x);
        let dist_to_boundary = x[..spec.dim]
            .iter()
            .map(|c| spec.half_width - c.abs())
            .fold(f64::INFINITY, f64::min);
        total += v.abs();
        if dist_to_boundary < spec.half_width - threshold {
            near += v.abs();
        }
    }
    if total == 0.0 {
        return Ok(());
    }
    let fraction = near / total;
    if fraction > MARGIN_MASS_FRACTION {
        return Err(AsymError::BoxMarginViolated { fraction });
    }
    Ok(())
}

/// Integrates the kill-free evolution and tracks the rescaled mass until the
/// gain over a unit window falls below `tol` relative (or `t_max` is hit,
/// in which case the run is returned with `converged = false`).
pub fn asymptotic_mass(
    phi0: &GridField,
    dist: &OffspringDistribution,
    cfg: &AsymptoticsConfig,
) -> Result<MassRun, AsymError> {
    check_box_margin(phi0, cfg.t_max)?;
    let rate = dist.decay_rate();
    let steps_total = (cfg.t_max * cfg.steps_per_unit as f64).round() as usize;
    let spec = EvolutionSpec::new(dist.clone(), cfg.t_max, steps_total);
    let stride = if cfg.snapshot_stride > 0 {
        cfg.snapshot_stride
    } else {
        steps_total.div_ceil(1024).max(1)
    };
    let mut stepper = Stepper::new(phi0, spec)?;

    let mut times = vec![0.0];
    let mut masses = vec![phi0.mass()];
    let mut snap_times = vec![0.0];
    let mut snapshots = vec![stepper.state().clone()];

    let mut converged = false;
    let mut last_increment = f64::INFINITY;
    let mut steps_done = 0usize;
    while !stepper.done() {
        stepper.step()?;
        steps_done += 1;
        let t = stepper.time();
        times.push(t);
        masses.push((rate * t).exp() * stepper.state().mass());
        if steps_done.is_multiple_of(stride) || stepper.done() {
            snap_times.push(t);
            snapshots.push(stepper.state().clone());
        }
        // Window check at whole time units.
        if steps_done.is_multiple_of(cfg.steps_per_unit) && steps_done >= cfg.steps_per_unit {
            let now = *masses.last().expect("nonempty");
            let before = masses[masses.len() - 1 - cfg.steps_per_unit];
            last_increment = if now > 0.0 { (now - before) / now } else { 0.0 };
            if last_increment <= cfg.tol {
                converged = true;
                break;
            }
        }
    }
    if converged && snap_times.last() != times.last() {
        snap_times.push(*times.last().expect("nonempty"));
        snapshots.push(stepper.state().clone());
    }
    let c_phi = *masses.last().expect("nonempty");
    let trace = MassTrace {
        times,
        masses,
        converged,
        c_phi,
        last_increment,
    };
    let trajectory = Trajectory::from_parts(snap_times, snapshots, stepper.spec().clone());
    Ok(MassRun { trace, trajectory })
}

/// Per-snapshot two-sided comparison with the damped heat flow.
#[derive(Debug, Clone, Copy)]
pub struct SandwichRow {
    pub t: f64,
    /// Whether the damped heat flow stays below the solution (slack 1e-7).
    pub lower_ok: bool,
    /// Worst violation of the lower bound (0 when none).
    pub lower_margin: f64,
    /// Smallest constant making the upper comparison hold at this time.
    pub upper_constant: f64,
}

#[derive(Debug, Clone)]
pub struct SandwichReport {
    pub rows: Vec<SandwichRow>,
}

impl SandwichReport {
    pub fn all_lower_ok(&self) -> bool {
        self.rows.iter().all(|r| r.lower_ok)
    }

    /// The measured upper constants over the last half of the run must stay
    /// within a factor 2 of their median: bounded, no growth trend.
    pub fn upper_trend_bounded(&self) -> bool {
        let t_end = match self.rows.last() {
            Some(r) => r.t,
            None => return true,
        };
        let mut tail: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.t >= 0.5 * t_end)
            .map(|r| r.upper_constant)
            .collect();
        if tail.is_empty() {
            return true;
        }
        tail.sort_by(f64::total_cmp);
        let median = tail[tail.len() / 2];
        tail.iter().all(|&c| c <= 2.0 * median && c >= 0.5 * median)
    }
}

/// Checks the damped-heat-flow lower bound nodewise and measures the
/// smallest admissible upper constant per snapshot.
pub fn sandwich_report(traj: &Trajectory) -> Result<SandwichReport, AsymError> {
    if traj.spec().kill.is_some() {
        return Err(AsymError::Pde(PdeError::KillPresent));
    }
    let rate = traj.spec().dist.decay_rate();
    let phi0 = traj.initial();
    let mut rows = Vec::with_capacity(traj.len());
    for (t, u) in traj.iter() {
        let reference = phi0
            .heat_apply(t)
            .map_err(PdeError::from)?
            .map(|v| (-rate * t).exp() * v);
        let ref_max = reference.max_value();
        let floor = 1e-14 * ref_max;
        let mut lower_margin = 0.0f64;
        let mut upper_constant = 0.0f64;
        for (&r, &v) in reference.values().iter().zip(u.values()) {
            lower_margin = lower_margin.max(r - v);
            if r > floor {
                upper_constant = upper_constant.max(v / r);
            }
        }
        rows.push(SandwichRow {
            t,
            lower_ok: lower_margin <= 1e-7,
            lower_margin,
            upper_constant,
        });
    }
    Ok(SandwichReport { rows })
}

/// `t^{d/2} * sup | e^{(1-q_1)t} u(t) - c_phi K_t |` on snapshot times
/// `t >= 1`, with `K_t` the free-space Gaussian kernel.
#[derive(Debug, Clone)]
pub struct ConvergenceProfile {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Samples the free-space heat kernel (no periodization) on the grid.
pub fn free_heat_kernel(spec: GridSpec, t: f64) -> GridField {
    let norm = (4.0 * PI * t).powf(-(spec.dim as f64) / 2.0);
    GridField::from_fn(spec, |x| {
        let r2: f64 = x.iter().map(|c| c * c).sum();
        norm * (-r2 / (4.0 * t)).exp()
    })
}

pub fn convergence_profile(
    traj: &Trajectory,
    c_phi: f64,
) -> Result<ConvergenceProfile, AsymError> {
    if traj.spec().kill.is_some() {
        return Err(AsymError::Pde(PdeError::KillPresent));
    }
    let dist = &traj.spec().dist;
    let rate = dist.decay_rate();
    let spec = traj.initial().spec();
    let half_dim = spec.dim as f64 / 2.0;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (t, u) in traj.iter() {
        if t < 1.0 {
            continue;
        }
        let kernel = free_heat_kernel(spec, t);
        let scale = (rate * t).exp();
        let sup = u
            .values()
            .iter()
            .zip(kernel.values())
            .fold(0.0f64, |m, (&uv, &kv)| m.max((scale * uv - c_phi * kv).abs()));
        times.push(t);
        values.push(t.powf(half_dim) * sup);
    }
    Ok(ConvergenceProfile { times, values })
}

/// Result of comparing the asymptotic masses of two data.
#[derive(Debug, Clone, Copy)]
pub struct ContractionReport {
    pub c_first: f64,
    pub c_second: f64,
    /// `|c_first - c_second|`.
    pub lhs: f64,
    /// `l1` distance of the data.
    pub rhs_norm: f64,
    /// `lhs / rhs_norm`; `None` for identical data.
    pub ratio: Option<f64>,
}

pub fn contraction_experiment(
    phi1: &GridField,
    phi2: &GridField,
    dist: &OffspringDistribution,
    cfg: &AsymptoticsConfig,
) -> Result<ContractionReport, AsymError> {
    let c_first = converged_mass(phi1, dist, cfg)?;
    let c_second = converged_mass(phi2, dist, cfg)?;
    let lhs = (c_first - c_second).abs();
    let rhs_norm = phi1.zip_map(phi2, |a, b| a - b).map_err(PdeError::from)?.l1_norm();
    let ratio = (rhs_norm > 1e-14).then(|| lhs / rhs_norm);
    Ok(ContractionReport {
        c_first,
        c_second,
        lhs,
        rhs_norm,
        ratio,
    })
}

/// Result of testing the convexity of the datum-to-mass map along one chord.
#[derive(Debug, Clone, Copy)]
pub struct ConvexityReport {
    pub lambda: f64,
    pub c_mix: f64,
    pub c_first: f64,
    pub c_second: f64,
    /// `lambda * c_first + (1 - lambda) * c_second`.
    pub bound: f64,
    /// `bound - c_mix`; nonnegative up to slack when convexity holds.
    pub gap: f64,
    pub satisfied: bool,
}

/// Absolute slack allowed on the convexity inequality.
pub const CONVEXITY_SLACK: f64 = 1e-6;

pub fn convexity_experiment(
    phi1: &GridField,
    phi2: &GridField,
    lambda: f64,
    dist: &OffspringDistribution,
    cfg: &AsymptoticsConfig,
) -> Result<ConvexityReport, AsymError> {
    if !(0.0 < lambda && lambda < 1.0) {
        return Err(AsymError::BadLambda(lambda));
    }
    let mix = phi1
        .zip_map(phi2, |a, b| lambda * a + (1.0 - lambda) * b)
        .map_err(PdeError::from)?;
    let c_first = converged_mass(phi1, dist, cfg)?;
    let c_second = converged_mass(phi2, dist, cfg)?;
    let c_mix = converged_mass(&mix, dist, cfg)?;
    let bound = lambda * c_first + (1.0 - lambda) * c_second;
    let gap = bound - c_mix;
    Ok(ConvexityReport {
        lambda,
        c_mix,
        c_first,
        c_second,
        bound,
        gap,
        satisfied: c_mix <= bound + CONVEXITY_SLACK,
    })
}

fn converged_mass(
    phi0: &GridField,
    dist: &OffspringDistribution,
    cfg: &AsymptoticsConfig,
) -> Result<f64, AsymError> {
    let run = asymptotic_mass(phi0, dist, cfg)?;
    if !run.trace.converged {
        return Err(AsymError::NotConverged {
            t_max: cfg.t_max,
            last_increment: run.trace.last_increment,
        });
    }
    Ok(run.trace.c_phi)
}
