//! Event-driven Monte Carlo of the branching Brownian particle system.
//!
//! Particles carry unit-rate exponential lifetimes and move by Brownian
//! increments with per-coordinate variance `2 dt` — the diffusion that
//! matches the Laplacian of the PDE side, and the single easiest convention
//! to get wrong. At an event one uniformly chosen particle is replaced by a
//! sampled number of children at its death position, so the population never
//! shrinks. Between events an optional weight is integrated along the paths
//! by trapezoid sub-stepping (the weighted occupation time).
//!
//! Replicas draw from counter-derived ChaCha streams: replica `i` always sees
//! stream `i` of the master seed, so batteries are reproducible bit for bit
//! no matter how the work is scheduled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::field::GridField;
use crate::offspring::OffspringDistribution;

#[derive(Debug, Error)]
pub enum BranchError {
    #[error("the starting configuration must contain at least one particle")]
    EmptyStart,
    #[error("horizon {0} is negative")]
    NegativeHorizon(f64),
    #[error("projected mean population {projected:.3e} exceeds the cap {cap}; shorten the horizon")]
    HorizonTooLong { projected: f64, cap: usize },
    #[error("batteries need at least 100 replicas, got {0}")]
    TooFewReplicas(usize),
    #[error("functional requires a terminal function but none was registered")]
    MissingTerminalFn,
    #[error("functional requires an occupation weight but none was registered")]
    MissingWeight,
    #[error("point function evaluated to {value}, outside its admissible range")]
    RangeError { value: f64 },
    #[error("point dimension does not match the configuration")]
    DimensionMismatch,
}

/// A function evaluable at arbitrary points of space: closed-form shapes,
/// closures, or grid fields through periodic interpolation.
pub trait PointField: Sync {
    fn eval(&self, x: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> PointField for F {
    fn eval(&self, x: &[f64]) -> f64 {
        self(x)
    }
}

impl PointField for GridField {
    fn eval(&self, x: &[f64]) -> f64 {
        self.interpolate(x)
    }
}

/// A finite multiset of points of `R^d`, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    dim: usize,
    coords: Vec<f64>,
}

impl Configuration {
    pub fn empty(dim: usize) -> Self {
        Self {
            dim,
            coords: Vec::new(),
        }
    }

    /// A single particle at `x`.
    pub fn single(x: &[f64]) -> Self {
        Self {
            dim: x.len(),
            coords: x.to_vec(),
        }
    }

    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self, BranchError> {
        let mut coords = Vec::with_capacity(dim * points.len());
        for p in points {
            if p.len() != dim {
                return Err(BranchError::DimensionMismatch);
            }
            coords.extend_from_slice(p);
        }
        Ok(Self { dim, coords })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.dim);
        self.coords.extend_from_slice(x);
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks_exact(self.dim)
    }
}

/// Product of `phi` over the particles; the empty configuration maps to 1.
/// `phi` must take values in [0, 1] (tiny overshoot is clamped).
pub fn multiplicative_functional(
    config: &Configuration,
    phi: &dyn PointField,
) -> Result<f64, BranchError> {
    let mut product = 1.0;
    for p in config.points() {
        let v = phi.eval(p);
        if !in_unit_range(v) {
            return Err(BranchError::RangeError { value: v });
        }
        product *= v.clamp(0.0, 1.0);
    }
    Ok(product)
}

fn in_unit_range(v: f64) -> bool {
    v.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&v)
}

/// Everything one replica needs besides its random stream.
pub struct SimParams<'a> {
    pub dist: &'a OffspringDistribution,
    pub horizon: f64,
    /// Occupation weight; `None` skips sub-stepping entirely.
    pub weight: Option<&'a dyn PointField>,
    /// Ascending times at which the particle count is recorded.
    pub checkpoints: &'a [f64],
    /// Occupation sub-step length; 0 picks `min(1/64, horizon/64)`.
    pub h_occ: f64,
    /// Abort when the projected or actual population exceeds this.
    pub count_cap: usize,
}

impl<'a> SimParams<'a> {
    pub fn new(dist: &'a OffspringDistribution, horizon: f64) -> Self {
        Self {
            dist,
            horizon,
            weight: None,
            checkpoints: &[],
            h_occ: 0.0,
            count_cap: 1_000_000,
        }
    }

    fn substep(&self) -> f64 {
        if self.h_occ > 0.0 {
            self.h_occ
        } else {
            (1.0f64 / 64.0).min(self.horizon / 64.0).max(f64::MIN_POSITIVE)
        }
    }
}

/// One replica's result.
#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub terminal: Configuration,
    /// `(time, particle count)` at the requested checkpoints plus the horizon.
    pub count_trace: Vec<(f64, usize)>,
    /// Accumulated weighted occupation integral (0 without a weight).
    pub occupation: f64,
    /// Replica stream index that produced this outcome.
    pub stream: u64,
}

/// Runs one replica to the horizon.
pub fn simulate(
    start: &Configuration,
    params: &SimParams,
    rng: &mut ChaCha8Rng,
) -> Result<SimOutcome, BranchError> {
    if start.is_empty() {
        return Err(BranchError::EmptyStart);
    }
    if params.horizon < 0.0 {
        return Err(BranchError::NegativeHorizon(params.horizon));
    }
    let projected =
        start.len() as f64 * ((params.dist.mean() - 1.0) * params.horizon).exp();
    if projected > params.count_cap as f64 {
        return Err(BranchError::HorizonTooLong {
            projected,
            cap: params.count_cap,
        });
    }

    let mut config = start.clone();
    let mut pending: Vec<f64> = params
        .checkpoints
        .iter()
        .copied()
        .filter(|&c| c >= 0.0 && c <= params.horizon)
        .collect();
    pending.sort_by(f64::total_cmp);
    let mut next_checkpoint = 0usize;
    let mut trace = Vec::with_capacity(pending.len() + 1);
    let mut t = 0.0;
    let mut occupation = 0.0;
    let mut weight_now = params
        .weight
        .map(|w| eval_sum(w, &config));

    loop {
        let rate = config.len() as f64;
        let lifetime: f64 = Exp1.sample(rng);
        let dt = lifetime / rate;
        let t_next = t + dt;
        let (advance_by, final_leg) = if t_next >= params.horizon {
            (params.horizon - t, true)
        } else {
            (dt, false)
        };
        // Count is constant on (t, t + advance_by); record checkpoints inside.
        let t_end = t + advance_by;
        while next_checkpoint < pending.len() && pending[next_checkpoint] < t_end {
            trace.push((pending[next_checkpoint], config.len()));
            next_checkpoint += 1;
        }
        move_particles(
            &mut config,
            advance_by,
            params,
            rng,
            &mut occupation,
            &mut weight_now,
        );
        t = t_end;
        if final_leg {
            break;
        }
        // Branch: replace a uniform particle by its children in place.
        let chosen = rng.random_range(0..config.len());
        let children = params.dist.sample(rng);
        let position = config.point(chosen).to_vec();
        for _ in 1..children {
            config.push(&position);
        }
        if config.len() > params.count_cap {
            return Err(BranchError::HorizonTooLong {
                projected: config.len() as f64,
                cap: params.count_cap,
            });
        }
        if params.weight.is_some() && children > 1 {
            // New particles contribute from now on.
            weight_now = params.weight.map(|w| eval_sum(w, &config));
        }
    }
    while next_checkpoint < pending.len() {
        trace.push((pending[next_checkpoint], config.len()));
        next_checkpoint += 1;
    }
    trace.push((params.horizon, config.len()));
    Ok(SimOutcome {
        terminal: config,
        count_trace: trace,
        occupation,
        stream: 0,
    })
}

fn eval_sum(w: &dyn PointField, config: &Configuration) -> f64 {
    config.points().map(|p| w.eval(p)).sum()
}

/// Moves every particle forward by `dt` of Brownian motion (variance `2 dt`
/// per coordinate). With a weight registered, the interval is subdivided and
/// the weighted particle sum integrated by the trapezoid rule.
fn move_particles(
    config: &mut Configuration,
    dt: f64,
    params: &SimParams,
    rng: &mut ChaCha8Rng,
    occupation: &mut f64,
    weight_now: &mut Option<f64>,
) {
    if dt <= 0.0 {
        return;
    }
    match params.weight {
        None => jump(config, dt, rng),
        Some(w) => {
            let substeps = (dt / params.substep()).ceil().max(1.0) as usize;
            let h = dt / substeps as f64;
            let mut g0 = weight_now.unwrap_or_else(|| eval_sum(w, config));
            for _ in 0..substeps {
                jump(config, h, rng);
                let g1 = eval_sum(w, config);
                *occupation += 0.5 * h * (g0 + g1);
                g0 = g1;
            }
            *weight_now = Some(g0);
        }
    }
}

fn jump(config: &mut Configuration, dt: f64, rng: &mut ChaCha8Rng) {
    let sigma = (2.0 * dt).sqrt();
    for c in config.coords.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *c += sigma * z;
    }
}

/// Which statistic each replica contributes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    /// Terminal particle count.
    Count,
    /// Product of the terminal function over the terminal configuration.
    Product,
    /// `exp(-sum_i g(x_i))` over the terminal configuration.
    Laplace,
    /// `exp(-sum_i f(x_i) - Y)`: joint terminal/occupation transform.
    JointOccupation,
    /// `exp(-Y / divisor)`.
    ScaledOccupation { divisor: f64 },
}

impl FunctionalKind {
    pub fn name(&self) -> &'static str {
        match self {
            FunctionalKind::Count => "count",
            FunctionalKind::Product => "product",
            FunctionalKind::Laplace => "laplace",
            FunctionalKind::JointOccupation => "joint_occupation",
            FunctionalKind::ScaledOccupation { .. } => "scaled_occupation",
        }
    }

    fn needs_terminal_fn(&self) -> bool {
        matches!(self, FunctionalKind::Product | FunctionalKind::Laplace)
    }

    fn needs_occupation(&self) -> bool {
        matches!(
            self,
            FunctionalKind::JointOccupation | FunctionalKind::ScaledOccupation { .. }
        )
    }
}

/// Mean and standard error of one registered functional.
#[derive(Debug, Clone, Copy)]
pub struct FunctionalStats {
    pub mean: f64,
    pub std_error: f64,
    pub replicas: usize,
}

#[derive(Debug, Clone)]
pub struct BatteryReport {
    pub stats: Vec<(FunctionalKind, FunctionalStats)>,
}

impl BatteryReport {
    pub fn get(&self, kind: FunctionalKind) -> Option<FunctionalStats> {
        self.stats
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|&(_, s)| s)
    }
}

/// Per-replica dump row for the optional raw output.
#[derive(Debug, Clone, Copy)]
pub struct ReplicaRow {
    pub stream: u64,
    pub count: usize,
    pub occupation: f64,
}

/// A reproducible battery of independent replicas evaluating a set of
/// functionals of the same simulation.
pub struct EstimatorBattery<'a> {
    pub start: &'a Configuration,
    pub dist: &'a OffspringDistribution,
    pub horizon: f64,
    /// Terminal function: the base of `Product`, the exponent of `Laplace`
    /// and the `f` of the joint transform (absent means `f = 0`).
    pub terminal_fn: Option<&'a dyn PointField>,
    /// Occupation weight.
    pub weight: Option<&'a dyn PointField>,
    pub functionals: Vec<FunctionalKind>,
    pub replicas: usize,
    pub master_seed: u64,
    pub h_occ: f64,
    pub count_cap: usize,
}

impl<'a> EstimatorBattery<'a> {
    pub fn new(
        start: &'a Configuration,
        dist: &'a OffspringDistribution,
        horizon: f64,
        replicas: usize,
        master_seed: u64,
    ) -> Self {
        Self {
            start,
            dist,
            horizon,
            terminal_fn: None,
            weight: None,
            functionals: Vec::new(),
            replicas,
            master_seed,
            h_occ: 0.0,
            count_cap: 1_000_000,
        }
    }

    pub fn run(&self) -> Result<BatteryReport, BranchError> {
        Ok(self.run_with_rows()?.0)
    }

    /// Runs all replicas in parallel (results merged in replica order, so
    /// the report is independent of scheduling) and returns the raw rows.
    pub fn run_with_rows(&self) -> Result<(BatteryReport, Vec<ReplicaRow>), BranchError> {
        if self.replicas < 100 {
            return Err(BranchError::TooFewReplicas(self.replicas));
        }
        let needs_occupation = self.functionals.iter().any(FunctionalKind::needs_occupation);
        if needs_occupation && self.weight.is_none() {
            return Err(BranchError::MissingWeight);
        }
        if self
            .functionals
            .iter()
            .any(FunctionalKind::needs_terminal_fn)
            && self.terminal_fn.is_none()
        {
            return Err(BranchError::MissingTerminalFn);
        }

        let per_replica: Vec<Result<(Vec<f64>, ReplicaRow), BranchError>> = (0..self.replicas)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
                rng.set_stream(i as u64);
                let params = SimParams {
                    dist: self.dist,
                    horizon: self.horizon,
                    weight: if needs_occupation { self.weight } else { None },
                    checkpoints: &[],
                    h_occ: self.h_occ,
                    count_cap: self.count_cap,
                };
                let outcome = simulate(self.start, &params, &mut rng)?;
                let values = self
                    .functionals
                    .iter()
                    .map(|kind| self.evaluate(kind, &outcome))
                    .collect::<Result<Vec<f64>, _>>()?;
                let row = ReplicaRow {
                    stream: i as u64,
                    count: outcome.terminal.len(),
                    occupation: outcome.occupation,
                };
                Ok((values, row))
            })
            .collect();

        let mut values = Vec::with_capacity(self.replicas);
        let mut rows = Vec::with_capacity(self.replicas);
        for item in per_replica {
            let (v, row) = item?;
            values.push(v);
            rows.push(row);
        }

        let n = self.replicas as f64;
        let mut stats = Vec::with_capacity(self.functionals.len());
        for (j, &kind) in self.functionals.iter().enumerate() {
            let mean = values.iter().map(|v| v[j]).sum::<f64>() / n;
            let ss = values
                .iter()
                .map(|v| (v[j] - mean).powi(2))
                .sum::<f64>();
            let std_error = (ss / (n - 1.0) / n).sqrt();
            stats.push((
                kind,
                FunctionalStats {
                    mean,
                    std_error,
                    replicas: self.replicas,
                },
            ));
        }
        Ok((BatteryReport { stats }, rows))
    }

    fn evaluate(&self, kind: &FunctionalKind, outcome: &SimOutcome) -> Result<f64, BranchError> {
        Ok(match kind {
            FunctionalKind::Count => outcome.terminal.len() as f64,
            FunctionalKind::Product => {
                multiplicative_functional(&outcome.terminal, self.terminal_fn.expect("checked"))?
            }
            FunctionalKind::Laplace => {
                let sum = nonneg_sum(self.terminal_fn.expect("checked"), &outcome.terminal)?;
                (-sum).exp()
            }
            FunctionalKind::JointOccupation => {
                let sum = match self.terminal_fn {
                    Some(f) => nonneg_sum(f, &outcome.terminal)?,
                    None => 0.0,
                };
                (-sum - outcome.occupation).exp()
            }
            FunctionalKind::ScaledOccupation { divisor } => {
                (-outcome.occupation / divisor).exp()
            }
        })
    }
}

fn nonneg_sum(f: &dyn PointField, config: &Configuration) -> Result<f64, BranchError> {
    let mut sum = 0.0;
    for p in config.points() {
        let v = f.eval(p);
        if !v.is_finite() || v < -1e-9 {
            return Err(BranchError::RangeError { value: v });
        }
        sum += v.max(0.0);
    }
    Ok(sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;

    fn half_half() -> OffspringDistribution {
        OffspringDistribution::from_pairs(&[(1, 0.5), (2, 0.5)]).unwrap()
    }

    fn always_two() -> OffspringDistribution {
        OffspringDistribution::from_pairs(&[(2, 1.0)]).unwrap()
    }

    fn origin() -> Configuration {
        Configuration::single(&[0.0])
    }

    fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(stream);
        r
    }

    #[test]
    fn zero_horizon_is_the_identity() {
        let dist = half_half();
        let params = SimParams::new(&dist, 0.0);
        let out = simulate(&origin(), &params, &mut rng(1, 0)).unwrap();
        assert_eq!(out.terminal, origin());
        assert_eq!(out.occupation, 0.0);
        assert_eq!(out.count_trace, vec![(0.0, 1)]);
    }

    #[test]
    fn empty_start_rejected() {
        let dist = half_half();
        let params = SimParams::new(&dist, 1.0);
        let err = simulate(&Configuration::empty(1), &params, &mut rng(1, 0)).unwrap_err();
        assert!(matches!(err, BranchError::EmptyStart));
    }

    #[test]
    fn horizon_guard_trips_on_exponential_growth() {
        let dist = half_half();
        let params = SimParams::new(&dist, 60.0);
        let err = simulate(&origin(), &params, &mut rng(1, 0)).unwrap_err();
        assert!(matches!(err, BranchError::HorizonTooLong { .. }));
    }

    #[test]
    fn counts_never_decrease_and_start_at_initial_size() {
        let dist = half_half();
        let checkpoints = [0.25, 0.5, 1.0, 1.5, 2.0];
        let start = Configuration::from_points(1, &[vec![0.0], vec![1.0]]).unwrap();
        for stream in 0..50 {
            let params = SimParams {
                checkpoints: &checkpoints,
                ..SimParams::new(&dist, 2.0)
            };
            let out = simulate(&start, &params, &mut rng(42, stream)).unwrap();
            let counts: Vec<usize> = out.count_trace.iter().map(|c| c.1).collect();
            assert!(counts[0] >= 2, "population shrank below the start");
            assert!(counts.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn mean_count_matches_growth_rate() {
        // Doubling law: mean count at T = 2 is e^2.
        let dist = always_two();
        let start = origin();
        let battery = EstimatorBattery {
            functionals: vec![FunctionalKind::Count],
            ..EstimatorBattery::new(&start, &dist, 2.0, 20_000, 314)
        };
        let report = battery.run().unwrap();
        let stats = report.get(FunctionalKind::Count).unwrap();
        let expect = std::f64::consts::E.powi(2);
        let z = (stats.mean - expect) / stats.std_error;
        assert!(z.abs() < 4.0, "z = {z}, mean = {}", stats.mean);

        // Half/half law: mean count at T = 2 is e.
        let dist = half_half();
        let battery = EstimatorBattery {
            functionals: vec![FunctionalKind::Count],
            ..EstimatorBattery::new(&start, &dist, 2.0, 20_000, 314)
        };
        let stats = battery.run().unwrap().get(FunctionalKind::Count).unwrap();
        let z = (stats.mean - std::f64::consts::E) / stats.std_error;
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn mean_occupation_of_unit_weight() {
        // E Y_T = (e^{(q-1)T} - 1)/(q - 1) for weight 1.
        let dist = half_half();
        let start = origin();
        let unit = |_: &[f64]| 1.0;
        let battery = EstimatorBattery {
            weight: Some(&unit),
            functionals: vec![FunctionalKind::JointOccupation],
            ..EstimatorBattery::new(&start, &dist, 1.0, 10_000, 2718)
        };
        let (_, rows) = battery.run_with_rows().unwrap();
        let n = rows.len() as f64;
        let mean_y = rows.iter().map(|r| r.occupation).sum::<f64>() / n;
        let var = rows
            .iter()
            .map(|r| (r.occupation - mean_y).powi(2))
            .sum::<f64>()
            / (n - 1.0);
        let se = (var / n).sqrt();
        let expect = (0.5f64.exp() - 1.0) / 0.5;
        let z = (mean_y - expect) / se;
        assert!(z.abs() < 4.0, "z = {z}, mean = {mean_y}, expect = {expect}");
    }

    #[test]
    fn occupation_respects_crude_bound() {
        let dist = half_half();
        let start = origin();
        let peak = 0.9;
        let weight = move |x: &[f64]| peak * (-x[0] * x[0] / 2.0).exp();
        for stream in 0..200 {
            let params = SimParams {
                weight: Some(&weight),
                ..SimParams::new(&dist, 1.5)
            };
            let out = simulate(&start, &params, &mut rng(5, stream)).unwrap();
            assert!(out.occupation >= 0.0);
            let bound = peak * out.terminal.len() as f64 * 1.5;
            assert!(out.occupation <= bound);
        }
    }

    #[test]
    fn multiplicative_functional_basics() {
        let phi_one = |_: &[f64]| 1.0;
        assert_eq!(
            multiplicative_functional(&Configuration::empty(1), &phi_one).unwrap(),
            1.0
        );
        let config = Configuration::from_points(1, &[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert_eq!(multiplicative_functional(&config, &phi_one).unwrap(), 1.0);
        let phi_c = |_: &[f64]| 0.7;
        let got = multiplicative_functional(&config, &phi_c).unwrap();
        assert!((got - 0.7f64.powi(3)).abs() < 1e-15);
        let phi_bad = |_: &[f64]| 1.2;
        assert!(matches!(
            multiplicative_functional(&config, &phi_bad),
            Err(BranchError::RangeError { .. })
        ));
    }

    #[test]
    fn product_mean_matches_generating_function_ode() {
        // E[c^{N_t}] solves u' = F(u), u(0) = c; the oracle integrates it.
        let dist = half_half();
        let start = origin();
        let c = 0.6;
        let phi = move |_: &[f64]| c;
        let battery = EstimatorBattery {
            terminal_fn: Some(&phi),
            functionals: vec![FunctionalKind::Product],
            ..EstimatorBattery::new(&start, &dist, 1.5, 20_000, 99)
        };
        let stats = battery.run().unwrap().get(FunctionalKind::Product).unwrap();
        let expect = oracle::integrate(&oracle::ScalarIvp {
            law: vec![(1, 0.5), (2, 0.5)],
            rhs: oracle::ScalarRhs::Reaction,
            initial: c,
            horizon: 1.5,
            steps: 10_000,
        })
        .unwrap()
        .terminal();
        let z = (stats.mean - expect) / stats.std_error;
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn branching_additivity_in_distribution() {
        // Two-particle start: the product functional factorizes over starts.
        let dist = half_half();
        let phi = |x: &[f64]| 0.3 + 0.6 * (-x[0] * x[0] / 2.0).exp();
        let horizon = 1.0;
        let single = |x0: f64, seed: u64| {
            let start = Configuration::single(&[x0]);
            let battery = EstimatorBattery {
                terminal_fn: Some(&phi),
                functionals: vec![FunctionalKind::Product],
                ..EstimatorBattery::new(&start, &dist, horizon, 20_000, seed)
            };
            battery.run().unwrap().get(FunctionalKind::Product).unwrap()
        };
        let a = single(-0.5, 21);
        let b = single(0.5, 22);
        let start = Configuration::from_points(1, &[vec![-0.5], vec![0.5]]).unwrap();
        let battery = EstimatorBattery {
            terminal_fn: Some(&phi),
            functionals: vec![FunctionalKind::Product],
            ..EstimatorBattery::new(&start, &dist, horizon, 20_000, 23)
        };
        let joint = battery.run().unwrap().get(FunctionalKind::Product).unwrap();
        let product = a.mean * b.mean;
        let se = (joint.std_error.powi(2)
            + (a.std_error * b.mean).powi(2)
            + (b.std_error * a.mean).powi(2))
        .sqrt();
        let z = (joint.mean - product) / se;
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn halving_the_substep_moves_the_mean_less_than_one_se() {
        let dist = half_half();
        let start = origin();
        let weight = |x: &[f64]| 0.9 * (-x[0] * x[0] / 2.0).exp();
        let run = |h_occ: f64| {
            let battery = EstimatorBattery {
                weight: Some(&weight),
                functionals: vec![FunctionalKind::JointOccupation],
                h_occ,
                ..EstimatorBattery::new(&start, &dist, 1.0, 20_000, 777)
            };
            battery
                .run()
                .unwrap()
                .get(FunctionalKind::JointOccupation)
                .unwrap()
        };
        let coarse = run(1.0 / 64.0);
        let fine = run(1.0 / 128.0);
        let se = coarse.std_error.hypot(fine.std_error);
        assert!(
            (coarse.mean - fine.mean).abs() < se,
            "quadrature bias visible: {} vs {}",
            coarse.mean,
            fine.mean
        );
    }

    #[test]
    fn scaled_occupation_matches_killed_ode() {
        // E[exp(-Y_t / c)] with unit weight solves v' = F(v) - v/c from 1.
        let dist = half_half();
        let start = origin();
        let unit = |_: &[f64]| 1.0;
        let divisor = 2.0;
        let battery = EstimatorBattery {
            weight: Some(&unit),
            functionals: vec![FunctionalKind::ScaledOccupation { divisor }],
            ..EstimatorBattery::new(&start, &dist, 1.5, 20_000, 555)
        };
        let stats = battery
            .run()
            .unwrap()
            .get(FunctionalKind::ScaledOccupation { divisor })
            .unwrap();
        let expect = oracle::integrate(&oracle::ScalarIvp {
            law: vec![(1, 0.5), (2, 0.5)],
            rhs: oracle::ScalarRhs::Killed { rate: 1.0 / divisor },
            initial: 1.0,
            horizon: 1.5,
            steps: 10_000,
        })
        .unwrap()
        .terminal();
        let z = (stats.mean - expect) / stats.std_error;
        assert!(z.abs() < 4.0, "z = {z}");
    }

    #[test]
    fn batteries_are_bit_reproducible() {
        let dist = half_half();
        let start = origin();
        let phi = |x: &[f64]| 0.5 + 0.4 * (-x[0] * x[0]).exp();
        let make = || {
            let battery = EstimatorBattery {
                terminal_fn: Some(&phi),
                weight: Some(&phi),
                functionals: vec![
                    FunctionalKind::Count,
                    FunctionalKind::Product,
                    FunctionalKind::JointOccupation,
                ],
                ..EstimatorBattery::new(&start, &dist, 1.0, 500, 4242)
            };
            battery.run().unwrap()
        };
        let first = make();
        let second = make();
        for ((_, a), (_, b)) in first.stats.iter().zip(&second.stats) {
            assert_eq!(a.mean.to_bits(), b.mean.to_bits());
            assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        }
    }

    #[test]
    fn battery_validates_inputs() {
        let dist = half_half();
        let start = origin();
        let too_few = EstimatorBattery {
            functionals: vec![FunctionalKind::Count],
            ..EstimatorBattery::new(&start, &dist, 1.0, 10, 1)
        };
        assert!(matches!(
            too_few.run(),
            Err(BranchError::TooFewReplicas(10))
        ));
        let missing = EstimatorBattery {
            functionals: vec![FunctionalKind::Product],
            ..EstimatorBattery::new(&start, &dist, 1.0, 100, 1)
        };
        assert!(matches!(missing.run(), Err(BranchError::MissingTerminalFn)));
        let missing_w = EstimatorBattery {
            functionals: vec![FunctionalKind::ScaledOccupation { divisor: 2.0 }],
            ..EstimatorBattery::new(&start, &dist, 1.0, 100, 1)
        };
        assert!(matches!(missing_w.run(), Err(BranchError::MissingWeight)));
    }
}
