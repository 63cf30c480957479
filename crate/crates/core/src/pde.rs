//! Split-step time integration of the evolution equations.
//!
//! One step of length `h` is Strang-composed: half a step of the nodewise
//! reaction ODE `w' = F(w) - c(x) w` (classical Runge-Kutta; `c` is the
//! optional killing weight), a full spectral heat step, then the second
//! reaction half-step. The unit damping `-u` lives inside `F`, so the
//! diffusion substep is the pure heat propagator and stays an exact Markov
//! kernel.
//!
//! The same machinery yields the log-transformed semigroup (solve from
//! `exp(-f)`, return `-ln` of the endpoint) and the alternating
//! source/semigroup product that approximates the killed flow.

use crate::field::{FieldError, GridField};
use crate::offspring::OffspringDistribution;
use thiserror::Error;

/// Excursions outside [0, 1] beyond this are an error; smaller ones are
/// clamped silently (solver round-off, spectral ringing).
const RANGE_TOLERANCE: f64 = 1e-6;

/// Snapshot strides are chosen so a trajectory keeps at most this many
/// snapshots unless the caller asks for more.
const MAX_SNAPSHOTS: usize = 1024;

#[derive(Debug, Error)]
pub enum PdeError {
    #[error("initial datum and killing weight live on different grids")]
    GridMismatch,
    #[error("solution left [0, 1] by {excess} at t = {t}")]
    RangeViolation { t: f64, excess: f64 },
    #[error("killing weight must be nonnegative")]
    NegativeKill,
    #[error("horizon must be positive and steps >= 1")]
    BadTimeGrid,
    #[error("endpoint underflowed; horizon too long for the grid's dynamic range")]
    LogDomain,
    #[error("operation requires a kill-free trajectory")]
    KillPresent,
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Everything that pins down one evolution run: the offspring law, the
/// optional killing weight `-kill_scale * kill * u`, and the time grid.
#[derive(Debug, Clone)]
pub struct EvolutionSpec {
    pub dist: OffspringDistribution,
    pub kill: Option<GridField>,
    pub kill_scale: f64,
    pub horizon: f64,
    pub steps: usize,
    /// Snapshot every `stride` steps; 0 picks a stride automatically.
    pub snapshot_stride: usize,
}

impl EvolutionSpec {
    /// Kill-free evolution over `horizon` in `steps` uniform steps.
    pub fn new(dist: OffspringDistribution, horizon: f64, steps: usize) -> Self {
        Self {
            dist,
            kill: None,
            kill_scale: 1.0,
            horizon,
            steps,
            snapshot_stride: 0,
        }
    }

    pub fn with_kill(mut self, kill: GridField, kill_scale: f64) -> Self {
        self.kill = Some(kill);
        self.kill_scale = kill_scale;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.snapshot_stride = stride;
        self
    }

    fn effective_stride(&self) -> usize {
        if self.snapshot_stride > 0 {
            self.snapshot_stride
        } else {
            self.steps.div_ceil(MAX_SNAPSHOTS).max(1)
        }
    }

    fn validate(&self, phi0: &GridField) -> Result<(), PdeError> {
        if self.horizon <= 0.0 || self.horizon.is_nan() || self.steps == 0 {
            return Err(PdeError::BadTimeGrid);
        }
        if let Some(kill) = &self.kill {
            if kill.spec() != phi0.spec() {
                return Err(PdeError::GridMismatch);
            }
            if kill.min_value() < -1e-12 || self.kill_scale < 0.0 {
                return Err(PdeError::NegativeKill);
            }
        }
        Ok(())
    }
}

/// Snapshots of one run: times (starting at 0) and the field at each.
#[derive(Debug, Clone)]
pub struct Trajectory {
    times: Vec<f64>,
    snapshots: Vec<GridField>,
    spec: EvolutionSpec,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn snapshots(&self) -> &[GridField] {
        &self.snapshots
    }

    pub fn spec(&self) -> &EvolutionSpec {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn initial(&self) -> &GridField {
        &self.snapshots[0]
    }

    pub fn terminal(&self) -> &GridField {
        self.snapshots.last().expect("nonempty trajectory")
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &GridField)> {
        self.times.iter().copied().zip(self.snapshots.iter())
    }

    /// Assembles a trajectory from externally recorded snapshots.
    pub(crate) fn from_parts(
        times: Vec<f64>,
        snapshots: Vec<GridField>,
        spec: EvolutionSpec,
    ) -> Self {
        Self {
            times,
            snapshots,
            spec,
        }
    }
}

/// Drives one run step by step; callers that only need the endpoint or
/// custom per-step records use this directly instead of `solve`.
pub struct Stepper {
    state: GridField,
    spec: EvolutionSpec,
    step_size: f64,
    steps_taken: usize,
}

impl Stepper {
    pub fn new(phi0: &GridField, spec: EvolutionSpec) -> Result<Self, PdeError> {
        spec.validate(phi0)?;
        let mut state = phi0.clone();
        check_and_clamp(&mut state, 0.0)?;
        let step_size = spec.horizon / spec.steps as f64;
        Ok(Self {
            state,
            spec,
            step_size,
            steps_taken: 0,
        })
    }

    pub fn state(&self) -> &GridField {
        &self.state
    }

    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.step_size
    }

    pub fn done(&self) -> bool {
        self.steps_taken >= self.spec.steps
    }

    pub fn spec(&self) -> &EvolutionSpec {
        &self.spec
    }

    /// Advances by one Strang step.
    pub fn step(&mut self) -> Result<(), PdeError> {
        let h = self.step_size;
        let t_next = (self.steps_taken + 1) as f64 * h;
        reaction_half_step(
            &mut self.state,
            self.spec.kill.as_ref(),
            self.spec.kill_scale,
            &self.spec.dist,
            0.5 * h,
        );
        check_and_clamp(&mut self.state, t_next)?;
        self.state = self.state.heat_apply(h)?;
        check_and_clamp(&mut self.state, t_next)?;
        reaction_half_step(
            &mut self.state,
            self.spec.kill.as_ref(),
            self.spec.kill_scale,
            &self.spec.dist,
            0.5 * h,
        );
        check_and_clamp(&mut self.state, t_next)?;
        self.steps_taken += 1;
        Ok(())
    }
}

/// One Runge-Kutta step of the nodewise reaction ODE over `dt`.
fn reaction_half_step(
    state: &mut GridField,
    kill: Option<&GridField>,
    kill_scale: f64,
    dist: &OffspringDistribution,
    dt: f64,
) {
    let kill_values = kill.map(GridField::values);
    for (i, w) in state.values_mut().iter_mut().enumerate() {
        let c = kill_values.map_or(0.0, |k| kill_scale * k[i]);
        let f = |v: f64| dist.reaction_unchecked(v) - c * v;
        let k1 = f(*w);
        let k2 = f(*w + 0.5 * dt * k1);
        let k3 = f(*w + 0.5 * dt * k2);
        let k4 = f(*w + dt * k3);
        *w += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
}

fn check_and_clamp(state: &mut GridField, t: f64) -> Result<(), PdeError> {
    let excess = (-state.min_value()).max(state.max_value() - 1.0).max(0.0);
    if excess > RANGE_TOLERANCE {
        return Err(PdeError::RangeViolation { t, excess });
    }
    state.clamp_unit();
    Ok(())
}

/// Integrates the evolution from `phi0` and records snapshots.
///
/// `phi0` must take values in [0, 1] (up to the clamp tolerance); the
/// endpoint snapshot is always recorded regardless of stride.
pub fn solve(phi0: &GridField, spec: EvolutionSpec) -> Result<Trajectory, PdeError> {
    let stride = spec.effective_stride();
    let mut stepper = Stepper::new(phi0, spec)?;
    let mut times = vec![0.0];
    let mut snapshots = vec![stepper.state().clone()];
    while !stepper.done() {
        stepper.step()?;
        if stepper.steps_taken % stride == 0 || stepper.done() {
            times.push(stepper.time());
            snapshots.push(stepper.state().clone());
        }
    }
    Ok(Trajectory {
        times,
        snapshots,
        spec: stepper.spec,
    })
}

/// The nonlinear semigroup on nonnegative data: evolve `exp(-f)` kill-free
/// and return `-ln` of the endpoint.
///
/// The endpoint is bounded below by `e^{-t} e^{-sup f} > 0`, so the
/// logarithm only fails when the horizon exhausts the floating range.
pub fn nonlinear_semigroup_u(
    f: &GridField,
    dist: &OffspringDistribution,
    t: f64,
    steps: usize,
) -> Result<GridField, PdeError> {
    if t == 0.0 {
        return Ok(f.clone());
    }
    let u0 = f.map(|v| (-v).exp());
    let spec = EvolutionSpec::new(dist.clone(), t, steps).with_stride(steps);
    let traj = solve(&u0, spec)?;
    let terminal = traj.terminal();
    if terminal.min_value() < 1e-300 {
        return Err(PdeError::LogDomain);
    }
    Ok(terminal.map(|v| -v.ln()))
}

/// Additive source step `f + t * phi` on log scale.
pub fn w_step_additive(f: &GridField, phi: &GridField, t: f64) -> Result<GridField, PdeError> {
    Ok(f.zip_map(phi, |a, b| a + t * b)?)
}

/// Multiplicative source step `g * exp(-t * phi)`, the conjugate of
/// `w_step_additive` under `g = exp(-f)`.
pub fn w_step_multiplicative(
    g: &GridField,
    phi: &GridField,
    t: f64,
) -> Result<GridField, PdeError> {
    Ok(g.zip_map(phi, |a, b| a * (-t * b).exp())?)
}

/// Alternating product of `n_outer` source steps and source-free semigroup
/// slices of length `t / n_outer` each; converges to the killed flow on log
/// scale as `n_outer` grows (first order).
pub fn splitting_product(
    f: &GridField,
    phi: &GridField,
    dist: &OffspringDistribution,
    t: f64,
    n_outer: usize,
    inner_steps: usize,
) -> Result<GridField, PdeError> {
    if n_outer == 0 {
        return Err(PdeError::BadTimeGrid);
    }
    let slice = t / n_outer as f64;
    let mut g = f.clone();
    for _ in 0..n_outer {
        g = w_step_additive(&g, phi, slice)?;
        g = nonlinear_semigroup_u(&g, dist, slice, inner_steps)?;
    }
    Ok(g)
}

/// Snapshots scaled by `e^{(1-q_1) t}`: the rescaled solution whose mass
/// climbs toward the asymptotic constant instead of draining to zero.
#[derive(Debug, Clone)]
pub struct RescaledTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<GridField>,
}

pub fn rescaled_view(traj: &Trajectory) -> Result<RescaledTrajectory, PdeError> {
    if traj.spec().kill.is_some() {
        return Err(PdeError::KillPresent);
    }
    let rate = traj.spec().dist.decay_rate();
    let snapshots = traj
        .iter()
        .map(|(t, snap)| {
            let scale = (rate * t).exp();
            snap.map(|v| scale * v)
        })
        .collect();
    Ok(RescaledTrajectory {
        times: traj.times().to_vec(),
        snapshots,
    })
}
