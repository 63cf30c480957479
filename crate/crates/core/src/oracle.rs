//! Scalar-ODE ground truth, kept independent of the PDE engine.
//!
//! Spatially constant data collapse every evolution equation in this crate
//! to a scalar ODE, which a plain Runge-Kutta integrator solves to near
//! machine accuracy. Those traces are the reference values the grid solver
//! and the particle simulator are tested against. The reaction term is
//! re-evaluated here from the raw law weights so that a bug in the shared
//! reaction code cannot hide: an oracle that shares code is not an oracle.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum OracleError {
    #[error("solution escaped [0, 1] at t = {t}: value {value}")]
    RangeEscape { t: f64, value: f64 },
    #[error("time_scale * slope_at_one - weight_bound is too close to zero")]
    SingularDenominator,
    #[error("alpha {alpha} must be below 1/slope_at_one = {limit}")]
    AlphaTooLarge { alpha: f64, limit: f64 },
    #[error("step count must be >= 1")]
    BadStepCount,
}

/// Right-hand side selector for the scalar initial value problems.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarRhs {
    /// `u' = F(u)` with `F(u) = -u + sum_k q_k u^k`.
    Reaction,
    /// `v' = F(v) - rate * v`: constant killing weight.
    Killed { rate: f64 },
    /// `v' = F(v) - (weight_bound / time_scale) * v`: the killing weight
    /// shrinks as the time scale grows.
    ScaledKilled { weight_bound: f64, time_scale: f64 },
    /// `g' = (F'(1) - weight_bound/time_scale) * g - F'(1)`: the linear
    /// comparison equation whose solution bounds the scaled-killed one
    /// from below.
    LinearLowerBound { weight_bound: f64, time_scale: f64 },
}

/// A scalar initial value problem driven by an offspring law given as raw
/// `(k, q_k)` pairs.
#[derive(Debug, Clone)]
pub struct ScalarIvp {
    pub law: Vec<(u32, f64)>,
    pub rhs: ScalarRhs,
    pub initial: f64,
    pub horizon: f64,
    pub steps: usize,
}

/// Time series `(t_i, v_i)` produced by `integrate`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Trace {
    pub fn terminal(&self) -> f64 {
        *self.values.last().expect("nonempty trace")
    }
}

fn reaction_of(law: &[(u32, f64)], v: f64) -> f64 {
    let mut sum = 0.0;
    for &(k, q) in law {
        sum += q * v.powi(k as i32);
    }
    sum - v
}

/// `F'(1) = sum_k (k - 1) q_k`, recomputed from the raw weights.
pub fn slope_at_one(law: &[(u32, f64)]) -> f64 {
    law.iter().map(|&(k, q)| (f64::from(k) - 1.0) * q).sum()
}

/// Classical 4-stage Runge-Kutta at uniform steps, recording every step.
pub fn integrate(ivp: &ScalarIvp) -> Result<Trace, OracleError> {
    if ivp.steps == 0 {
        return Err(OracleError::BadStepCount);
    }
    let rhs = |v: f64| -> f64 {
        match ivp.rhs {
            ScalarRhs::Reaction => reaction_of(&ivp.law, v),
            ScalarRhs::Killed { rate } => reaction_of(&ivp.law, v) - rate * v,
            ScalarRhs::ScaledKilled {
                weight_bound,
                time_scale,
            } => reaction_of(&ivp.law, v) - weight_bound / time_scale * v,
            ScalarRhs::LinearLowerBound {
                weight_bound,
                time_scale,
            } => {
                let fp1 = slope_at_one(&ivp.law);
                (fp1 - weight_bound / time_scale) * v - fp1
            }
        }
    };
    let probability_kind = !matches!(ivp.rhs, ScalarRhs::LinearLowerBound { .. });
    let h = ivp.horizon / ivp.steps as f64;
    let mut v = ivp.initial;
    let mut times = Vec::with_capacity(ivp.steps + 1);
    let mut values = Vec::with_capacity(ivp.steps + 1);
    times.push(0.0);
    values.push(v);
    for i in 0..ivp.steps {
        let k1 = rhs(v);
        let k2 = rhs(v + 0.5 * h * k1);
        let k3 = rhs(v + 0.5 * h * k2);
        let k4 = rhs(v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        let t = (i + 1) as f64 * h;
        if probability_kind && !(-0.01..=1.01).contains(&v) {
            return Err(OracleError::RangeEscape { t, value: v });
        }
        times.push(t);
        values.push(v);
    }
    Ok(Trace { times, values })
}

/// Closed-form solution of the linear comparison equation
/// `g' = (fp1 - m/t_scale) g - fp1`, `g(0) = 1`:
///
/// `g(t) = T fp1 / (T fp1 - m) - m / (T fp1 - m) * exp(t (fp1 - m/T))`.
pub fn g_explicit(t: f64, time_scale: f64, weight_bound: f64, fp1: f64) -> Result<f64, OracleError> {
    let denom = time_scale * fp1 - weight_bound;
    if denom.abs() < 1e-12 * (time_scale * fp1).abs().max(weight_bound.abs()).max(1.0) {
        return Err(OracleError::SingularDenominator);
    }
    let growth = (t * (fp1 - weight_bound / time_scale)).exp();
    Ok(time_scale * fp1 / denom - weight_bound / denom * growth)
}

/// Trace of `v' = F(v) - c v`, `v(0) = 1`: with any positive killing weight
/// the survival value drains monotonically to zero.
pub fn occupation_limit_one(
    law: &[(u32, f64)],
    c: f64,
    horizon: f64,
    steps: usize,
) -> Result<Trace, OracleError> {
    integrate(&ScalarIvp {
        law: law.to_vec(),
        rhs: ScalarRhs::Killed { rate: c },
        initial: 1.0,
        horizon,
        steps,
    })
}

/// One entry of the slow-time-scale experiment.
#[derive(Debug, Clone, Copy)]
pub struct LimitTwoRow {
    pub time_scale: f64,
    /// Evaluation time `alpha * ln(time_scale)`.
    pub time: f64,
    /// Terminal value of the scaled-killed equation.
    pub value: f64,
    /// Closed-form linear lower bound at the same time.
    pub lower_bound: f64,
}

/// For each `T` in `time_scales`, integrates `v' = F(v) - (m/T) v`, `v(0)=1`
/// up to `t = alpha ln T` and records the endpoint next to its linear lower
/// bound. Requires `alpha < 1/F'(1)`, the regime where the endpoints climb
/// back to 1 as `T` grows.
pub fn occupation_limit_two(
    law: &[(u32, f64)],
    weight_bound: f64,
    alpha: f64,
    time_scales: &[f64],
    steps_per_unit: usize,
) -> Result<Vec<LimitTwoRow>, OracleError> {
    let fp1 = slope_at_one(law);
    if alpha >= 1.0 / fp1 {
        return Err(OracleError::AlphaTooLarge {
            alpha,
            limit: 1.0 / fp1,
        });
    }
    let mut rows = Vec::with_capacity(time_scales.len());
    for &time_scale in time_scales {
        let t_end = alpha * time_scale.ln();
        let steps = ((t_end * steps_per_unit as f64).ceil() as usize).max(steps_per_unit);
        let trace = integrate(&ScalarIvp {
            law: law.to_vec(),
            rhs: ScalarRhs::ScaledKilled {
                weight_bound,
                time_scale,
            },
            initial: 1.0,
            horizon: t_end,
            steps,
        })?;
        rows.push(LimitTwoRow {
            time_scale,
            time: t_end,
            value: trace.terminal(),
            lower_bound: g_explicit(t_end, time_scale, weight_bound, fp1)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HALF_HALF: [(u32, f64); 2] = [(1, 0.5), (2, 0.5)];

    fn reaction_terminal(initial: f64, horizon: f64, steps: usize) -> f64 {
        integrate(&ScalarIvp {
            law: HALF_HALF.to_vec(),
            rhs: ScalarRhs::Reaction,
            initial,
            horizon,
            steps,
        })
        .unwrap()
        .terminal()
    }

    #[test]
    fn reaction_closed_form() {
        // u' = (u^2 - u)/2 has u(t) = 1 / (1 + ((1-u0)/u0) e^{t/2}).
        let got = reaction_terminal(0.5, 1.0, 100_000);
        let expect = 1.0 / (1.0 + 0.5f64.exp());
        assert!((got - expect).abs() < 1e-10, "got {got}, expect {expect}");
    }

    #[test]
    fn reaction_fixed_points() {
        assert_eq!(reaction_terminal(1.0, 5.0, 1000), 1.0);
        assert_eq!(reaction_terminal(0.0, 5.0, 1000), 0.0);
    }

    #[test]
    fn fourth_order_convergence_witness() {
        let e1 = reaction_terminal(0.5, 2.0, 16);
        let e2 = reaction_terminal(0.5, 2.0, 32);
        let e3 = reaction_terminal(0.5, 2.0, 64);
        let d12 = (e1 - e2).abs();
        let d23 = (e2 - e3).abs();
        assert!(d12 > 1e-14, "differences sank into round-off");
        assert!(d12 <= 16.5 * d23, "d12 = {d12}, d23 = {d23}");
    }

    #[test]
    fn probability_traces_stay_in_unit_interval() {
        for rhs in [
            ScalarRhs::Reaction,
            ScalarRhs::Killed { rate: 1.0 },
            ScalarRhs::ScaledKilled {
                weight_bound: 1.0,
                time_scale: 100.0,
            },
        ] {
            let trace = integrate(&ScalarIvp {
                law: HALF_HALF.to_vec(),
                rhs,
                initial: 1.0,
                horizon: 10.0,
                steps: 10_000,
            })
            .unwrap();
            for &v in &trace.values {
                assert!((-1e-9..=1.0 + 1e-9).contains(&v));
            }
        }
    }

    #[test]
    fn g_explicit_is_one_at_zero() {
        for (ts, m, fp1) in [(100.0, 1.0, 0.5), (10.0, 0.3, 1.5), (1000.0, 0.005, 0.5)] {
            assert!((g_explicit(0.0, ts, m, fp1).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn g_explicit_matches_its_ode() {
        // Runge-Kutta on the linear comparison equation against the formula.
        let (time_scale, weight_bound) = (100.0, 0.005);
        let fp1 = slope_at_one(&HALF_HALF);
        let t_end = 1.9 * 100.0f64.ln();
        let trace = integrate(&ScalarIvp {
            law: HALF_HALF.to_vec(),
            rhs: ScalarRhs::LinearLowerBound {
                weight_bound,
                time_scale,
            },
            initial: 1.0,
            horizon: t_end,
            steps: 100_000,
        })
        .unwrap();
        let expect = g_explicit(t_end, time_scale, weight_bound, fp1).unwrap();
        assert!(
            (trace.terminal() - expect).abs() < 1e-9,
            "rk {} vs formula {expect}",
            trace.terminal()
        );
    }

    #[test]
    fn g_explicit_residual_under_central_differences() {
        let (time_scale, weight_bound, fp1) = (100.0, 1.0, 0.5);
        let a = fp1 - weight_bound / time_scale;
        let h = 1e-5;
        for t in [0.5, 2.0, 5.0] {
            let g = |t| g_explicit(t, time_scale, weight_bound, fp1).unwrap();
            let deriv = (g(t + h) - g(t - h)) / (2.0 * h);
            let residual = (deriv - (a * g(t) - fp1)).abs();
            assert!(residual < 1e-8, "residual {residual} at t = {t}");
        }
    }

    #[test]
    fn g_explicit_singular_denominator() {
        assert!(matches!(
            g_explicit(1.0, 2.0, 1.0, 0.5),
            Err(OracleError::SingularDenominator)
        ));
    }

    #[test]
    fn limit_one_no_killing_is_constant() {
        let trace = occupation_limit_one(&HALF_HALF, 0.0, 5.0, 1000).unwrap();
        assert!(trace.values.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn limit_one_drains_to_zero() {
        let trace = occupation_limit_one(&HALF_HALF, 1.0, 20.0, 20_000).unwrap();
        assert!(trace.terminal() < 1e-3, "terminal {}", trace.terminal());
        for pair in trace.values.windows(2) {
            assert!(pair[1] < pair[0], "trace not strictly decreasing");
        }
        // Exact solution of v' = v^2/2 - 3v/2 from 1: v(t) = 3/(1 + 2 e^{3t/2}).
        let expect = 3.0 / (1.0 + 2.0 * (30.0f64).exp());
        assert!((trace.terminal() - expect).abs() < 1e-12);
    }

    #[test]
    fn limit_two_rejects_large_alpha() {
        let err = occupation_limit_two(&HALF_HALF, 1.0, 2.5, &[100.0], 64).unwrap_err();
        assert!(matches!(err, OracleError::AlphaTooLarge { .. }));
    }

    #[test]
    fn limit_two_climbs_toward_one() {
        let scales = [1e2, 1e3, 1e4, 1e5];
        let rows = occupation_limit_two(&HALF_HALF, 0.005, 1.9, &scales, 256).unwrap();
        for pair in rows.windows(2) {
            assert!(pair[1].value > pair[0].value, "sequence must increase");
        }
        let last = rows.last().unwrap();
        assert!(last.value >= 0.99, "final value {}", last.value);
        assert!(last.value <= 1.0 + 1e-12);
        for row in &rows {
            assert!(
                row.value >= row.lower_bound - 1e-9,
                "value {} below bound {}",
                row.value,
                row.lower_bound
            );
            assert!(row.lower_bound > 0.99);
        }
    }

    #[test]
    fn limit_two_alpha_to_zero_is_initial_condition() {
        let rows = occupation_limit_two(&HALF_HALF, 1.0, 1e-12, &[100.0], 64).unwrap();
        assert!((rows[0].value - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scaled_killed_dominates_its_lower_bound_along_the_trace() {
        let fp1 = slope_at_one(&HALF_HALF);
        for time_scale in [1e2, 1e4] {
            let t_end = 1.9 * f64::ln(time_scale);
            let trace = integrate(&ScalarIvp {
                law: HALF_HALF.to_vec(),
                rhs: ScalarRhs::ScaledKilled {
                    weight_bound: 0.005,
                    time_scale,
                },
                initial: 1.0,
                horizon: t_end,
                steps: 4096,
            })
            .unwrap();
            for (&t, &v) in trace.times.iter().zip(&trace.values) {
                let g = g_explicit(t, time_scale, 0.005, fp1).unwrap();
                assert!(v >= g - 1e-9, "v = {v} below g = {g} at t = {t}");
            }
        }
    }
}

