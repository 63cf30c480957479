//! Offspring law of the branching mechanism.
//!
//! A law assigns probability `q_k` to a particle being replaced by `k >= 1`
//! children. The same coefficients define the reaction term
//! `F(v) = -v + sum_k q_k v^k` of the evolution equation, so this module is
//! shared by the PDE side and the particle side.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

/// Weights are renormalized when their sum is within this distance of 1,
/// rejected otherwise.
const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Arguments of `reaction` may stray outside [0, 1] by at most this much
/// (solver round-off); they are clamped back inside.
const CLAMP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum OffspringError {
    #[error("offspring index {0} is invalid: children counts start at k = 1")]
    InvalidIndex(u32),
    #[error("weight {weight} for k = {k} is negative or non-finite")]
    BadWeight { k: u32, weight: f64 },
    #[error("weights sum to {0}; expected 1 within 1e-6")]
    NonNormalizable(f64),
    #[error("all mass on k = 1; the evolution degenerates to a linear equation")]
    DegenerateLinear,
    #[error("offspring mean {0} is not > 1; the law must be supercritical")]
    SubcriticalMean(f64),
    #[error("value {0} outside [0, 1] beyond the clamp tolerance")]
    DomainError(f64),
}

/// A finitely supported offspring law `(q_k)_{k >= 1}` with cached moments
/// and an inverse-CDF sampling table.
///
/// Immutable after construction; sampling takes the random stream as an
/// argument, so a single instance can be shared across threads.
#[derive(Debug, Clone)]
pub struct OffspringDistribution {
    /// Support as `(k, q_k)` pairs in ascending `k`, all `q_k > 0`.
    support: Vec<(u32, f64)>,
    /// Cumulative sums over `support`; the last entry is exactly 1.
    cumulative: Vec<f64>,
    k_max: u32,
    mean: f64,
    second_moment: f64,
    mass_at_one: f64,
    /// Smallest k >= 2 carrying positive mass.
    min_branching_index: u32,
}

impl OffspringDistribution {
    /// Builds a law from raw nonnegative weights keyed by children count.
    ///
    /// Weights must sum to 1 within 1e-6 (they are renormalized exactly);
    /// at least one `k >= 2` must carry mass, otherwise the law is rejected
    /// as degenerate.
    pub fn from_weights(weights: &BTreeMap<u32, f64>) -> Result<Self, OffspringError> {
        let mut total = 0.0;
        for (&k, &w) in weights {
            if k == 0 {
                return Err(OffspringError::InvalidIndex(k));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(OffspringError::BadWeight { k, weight: w });
            }
            total += w;
        }
        if total <= 0.0 {
            return Err(OffspringError::NonNormalizable(total));
        }
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(OffspringError::NonNormalizable(total));
        }

        let support: Vec<(u32, f64)> = weights
            .iter()
            .filter(|&(_, &w)| w > 0.0)
            .map(|(&k, &w)| (k, w / total))
            .collect();

        let min_branching_index = support
            .iter()
            .map(|&(k, _)| k)
            .find(|&k| k >= 2)
            .ok_or(OffspringError::DegenerateLinear)?;

        let mean: f64 = support.iter().map(|&(k, q)| f64::from(k) * q).sum();
        if mean <= 1.0 {
            return Err(OffspringError::SubcriticalMean(mean));
        }
        let second_moment = support
            .iter()
            .map(|&(k, q)| f64::from(k) * f64::from(k) * q)
            .sum();

        let mut cumulative = Vec::with_capacity(support.len());
        let mut acc = 0.0;
        for &(_, q) in &support {
            acc += q;
            cumulative.push(acc);
        }
        // Guard the sampler against round-off in the running sum.
        *cumulative.last_mut().expect("nonempty support") = 1.0;

        let mass_at_one = support
            .iter()
            .find(|&&(k, _)| k == 1)
            .map_or(0.0, |&(_, q)| q);
        let k_max = support.last().expect("nonempty support").0;

        Ok(Self {
            support,
            cumulative,
            k_max,
            mean,
            second_moment,
            mass_at_one,
            min_branching_index,
        })
    }

    /// Convenience constructor from `(k, weight)` pairs.
    pub fn from_pairs(pairs: &[(u32, f64)]) -> Result<Self, OffspringError> {
        let mut map = BTreeMap::new();
        for &(k, w) in pairs {
            *map.entry(k).or_insert(0.0) += w;
        }
        Self::from_weights(&map)
    }

    /// Support as `(k, q_k)` pairs in ascending `k`.
    pub fn support(&self) -> &[(u32, f64)] {
        &self.support
    }

    /// Largest children count with positive probability.
    pub fn k_max(&self) -> u32 {
        self.k_max
    }

    /// Mean number of children, `sum_k k q_k`; always > 1 here.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Second moment `sum_k k^2 q_k` (finite by finite support).
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    /// Probability `q_1` of exactly one child (no net branching).
    pub fn mass_at_one(&self) -> f64 {
        self.mass_at_one
    }

    /// Exponential rescaling rate `1 - q_1` of the linearized evolution.
    pub fn decay_rate(&self) -> f64 {
        1.0 - self.mass_at_one
    }

    /// Smallest `k >= 2` with positive probability.
    pub fn min_branching_index(&self) -> u32 {
        self.min_branching_index
    }

    /// Reaction term `F(v) = -v + sum_k q_k v^k` for `v` in `[0, 1]`.
    ///
    /// `F` vanishes at both endpoints and is nonpositive in between.
    /// Arguments outside `[0, 1]` by more than the clamp tolerance are
    /// rejected; smaller excursions are clamped.
    pub fn reaction(&self, v: f64) -> Result<f64, OffspringError> {
        if !v.is_finite() || !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&v) {
            return Err(OffspringError::DomainError(v));
        }
        Ok(self.reaction_unchecked(v.clamp(0.0, 1.0)))
    }

    /// Reaction term without the domain guard; callers must pass `v` in `[0, 1]`.
    #[inline]
    pub fn reaction_unchecked(&self, v: f64) -> f64 {
        let mut sum = 0.0;
        for &(k, q) in &self.support {
            sum += q * v.powi(k as i32);
        }
        sum - v
    }

    /// Slope of the reaction at `v = 1`: `mean - 1`, strictly positive.
    pub fn reaction_slope_at_one(&self) -> f64 {
        self.mean - 1.0
    }

    /// Draws a children count by inverse CDF over the cumulative table.
    pub fn sample(&self, rng: &mut impl Rng) -> u32 {
        let u: f64 = rng.random();
        for (&(k, _), &c) in self.support.iter().zip(&self.cumulative) {
            if u < c {
                return k;
            }
        }
        self.k_max
    }
}
