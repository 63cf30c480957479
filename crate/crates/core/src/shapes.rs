//! Named closed-form shapes used as initial data, terminal functions and
//! occupation weights.
//!
//! The particle engine evaluates shapes at arbitrary points while the PDE
//! engine needs them sampled on a grid; defining both from the same closed
//! form keeps the two engines looking at the same function.

use serde::{Deserialize, Serialize};

use crate::branching::PointField;
use crate::field::{GridField, GridSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Shape {
    /// `peak * exp(-|x - center|^2 / (2 width^2))`.
    Gaussian {
        center: Vec<f64>,
        width: f64,
        peak: f64,
    },
    /// Smooth compactly supported bump: `peak * exp(1 - 1/(1 - r^2))` for
    /// `r = |x - center| / radius < 1`, zero outside.
    Bump {
        center: Vec<f64>,
        radius: f64,
        peak: f64,
    },
    Constant { value: f64 },
    /// Mollified indicator of the ball of `radius` around `center`: `peak`
    /// well inside, 0 well outside, a smoothstep ramp of width `ramp`
    /// straddling the edge.
    IndicatorSmoothed {
        center: Vec<f64>,
        radius: f64,
        ramp: f64,
        peak: f64,
    },
}

impl Shape {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Gaussian {
                center,
                width,
                peak,
            } => {
                let r2 = dist2(x, center);
                peak * (-r2 / (2.0 * width * width)).exp()
            }
            Shape::Bump {
                center,
                radius,
                peak,
            } => {
                let r2 = dist2(x, center) / (radius * radius);
                if r2 < 1.0 {
                    peak * (1.0 - 1.0 / (1.0 - r2)).exp()
                } else {
                    0.0
                }
            }
            Shape::Constant { value } => *value,
            Shape::IndicatorSmoothed {
                center,
                radius,
                ramp,
                peak,
            } => {
                let d = dist2(x, center).sqrt();
                let u = ((radius + 0.5 * ramp - d) / ramp).clamp(0.0, 1.0);
                peak * u * u * (3.0 - 2.0 * u)
            }
        }
    }

    /// Samples the shape on a grid.
    pub fn sample(&self, spec: GridSpec) -> GridField {
        GridField::from_fn(spec, |x| self.eval(x))
    }

    /// Largest value the shape attains.
    pub fn peak_value(&self) -> f64 {
        match self {
            Shape::Gaussian { peak, .. }
            | Shape::Bump { peak, .. }
            | Shape::IndicatorSmoothed { peak, .. } => *peak,
            Shape::Constant { value } => *value,
        }
    }
}

impl PointField for Shape {
    fn eval(&self, x: &[f64]) -> f64 {
        Shape::eval(self, x)
    }
}

fn dist2(x: &[f64], center: &[f64]) -> f64 {
    x.iter()
        .zip(center)
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}
