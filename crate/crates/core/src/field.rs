//! Uniform periodic grid fields on a box `[-L, L)^d` and the exact-in-time
//! spectral heat propagator acting on them.
//!
//! Diffusion is applied in Fourier space, so there is no time-discretization
//! error in the linear part: mode `xi` is damped by `exp(-|xi|^2 t)` with
//! `xi = pi m / L`. The box is a numerical truncation of free space; callers
//! keep their data away from the boundary so that periodic images stay
//! negligible over the horizon of interest.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FieldError {
    #[error("propagation time {0} is negative")]
    NegativeTime(f64),
    #[error("the heat kernel requires strictly positive time")]
    ZeroTime,
    #[error("grid specs differ between operands")]
    GridMismatch,
    #[error("spatial dimension {0} unsupported; only 1 and 2 are available")]
    BadDimension(usize),
    #[error("points per axis {0} must be a power of two >= 16")]
    BadPointCount(usize),
    #[error("half-width {0} must be positive and finite")]
    BadHalfWidth(f64),
    #[error("field values must be finite")]
    NonFinite,
}

/// Geometry of a uniform periodic grid over `[-L, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Spatial dimension, 1 or 2.
    pub dim: usize,
    /// Half-width `L` of the box.
    pub half_width: f64,
    /// Grid points per axis, a power of two >= 16.
    pub points: usize,
}

impl GridSpec {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self, FieldError> {
        if dim != 1 && dim != 2 {
            return Err(FieldError::BadDimension(dim));
        }
        if points < 16 || !points.is_power_of_two() {
            return Err(FieldError::BadPointCount(points));
        }
        if half_width <= 0.0 || !half_width.is_finite() {
            return Err(FieldError::BadHalfWidth(half_width));
        }
        Ok(Self {
            dim,
            half_width,
            points,
        })
    }

    /// Grid spacing along each axis.
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Total number of nodes, `points^dim`.
    pub fn node_count(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    /// Volume element of the rectangle quadrature rule.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Coordinate of node index `i` along one axis.
    pub fn axis_coord(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing()
    }

    /// Writes the coordinates of flat node `idx` into `out[..dim]`.
    pub fn node_coords(&self, idx: usize, out: &mut [f64]) {
        match self.dim {
            1 => out[0] = self.axis_coord(idx),
            2 => {
                out[0] = self.axis_coord(idx / self.points);
                out[1] = self.axis_coord(idx % self.points);
            }
            _ => unreachable!(),
        }
    }
}

/// A real-valued function sampled on a periodic grid.
///
/// Value type: operations return new fields and never mutate shared state.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    spec: GridSpec,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != spec.node_count() {
            return Err(FieldError::GridMismatch);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::NonFinite);
        }
        Ok(Self { spec, values })
    }

    pub fn constant(spec: GridSpec, c: f64) -> Self {
        Self {
            spec,
            values: vec![c; spec.node_count()],
        }
    }

    pub fn zero(spec: GridSpec) -> Self {
        Self::constant(spec, 0.0)
    }

    /// Samples `f` at every node.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = Vec::with_capacity(spec.node_count());
        let mut x = [0.0; 2];
        for idx in 0..spec.node_count() {
            spec.node_coords(idx, &mut x);
            values.push(f(&x[..spec.dim]));
        }
        Self { spec, values }
    }

    pub fn spec(&self) -> GridSpec {
        self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Integral over the box by the rectangle rule (spectrally accurate on
    /// smooth periodic data).
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.spec.cell_volume()
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.spec.cell_volume()
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, &v| m.min(v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            spec: self.spec,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self, FieldError> {
        if self.spec != other.spec {
            return Err(FieldError::GridMismatch);
        }
        Ok(Self {
            spec: self.spec,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute nodewise difference.
    pub fn linf_distance(&self, other: &Self) -> Result<f64, FieldError> {
        if self.spec != other.spec {
            return Err(FieldError::GridMismatch);
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .fold(0.0, |m, (&a, &b)| m.max((a - b).abs())))
    }

    /// Clamps values into [0, 1] and returns the largest excursion removed.
    pub fn clamp_unit(&mut self) -> f64 {
        let mut worst = 0.0f64;
        for v in &mut self.values {
            if *v < 0.0 {
                worst = worst.max(-*v);
                *v = 0.0;
            } else if *v > 1.0 {
                worst = worst.max(*v - 1.0);
                *v = 1.0;
            }
        }
        worst
    }

    /// Periodic multilinear interpolation at an arbitrary point.
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let n = self.spec.points;
        let h = self.spec.spacing();
        let wrap = |s: f64| -> (usize, f64) {
            let s = (s / h).rem_euclid(n as f64);
            let i = s.floor() as usize % n;
            (i, s - s.floor())
        };
        match self.spec.dim {
            1 => {
                let (i, w) = wrap(x[0] + self.spec.half_width);
                let j = (i + 1) % n;
                (1.0 - w) * self.values[i] + w * self.values[j]
            }
            2 => {
                let (i0, w0) = wrap(x[0] + self.spec.half_width);
                let (i1, w1) = wrap(x[1] + self.spec.half_width);
                let j0 = (i0 + 1) % n;
                let j1 = (i1 + 1) % n;
                let at = |a: usize, b: usize| self.values[a * n + b];
                (1.0 - w0) * ((1.0 - w1) * at(i0, i1) + w1 * at(i0, j1))
                    + w0 * ((1.0 - w1) * at(j0, i1) + w1 * at(j0, j1))
            }
            _ => unreachable!(),
        }
    }

    /// Heat propagation by time `t`: damps Fourier mode `xi` by
    /// `exp(-|xi|^2 t)`. Preserves mass exactly (the zero mode is untouched)
    /// and fixes constants; `t = 0` returns the input unchanged.
    pub fn heat_apply(&self, t: f64) -> Result<Self, FieldError> {
        if t < 0.0 || !t.is_finite() {
            return Err(FieldError::NegativeTime(t));
        }
        if t == 0.0 {
            return Ok(self.clone());
        }
        Ok(self.spectral_multiply(|ksq| (-ksq * t).exp()))
    }

    /// The linear evolution semigroup with unit damping: `e^{-t}` times the
    /// heat propagation.
    pub fn semigroup_s(&self, t: f64) -> Result<Self, FieldError> {
        let decayed = self.heat_apply(t)?;
        let scale = (-t).exp();
        Ok(decayed.map(|v| v * scale))
    }

    fn spectral_multiply(&self, mult: impl Fn(f64) -> f64) -> Self {
        let n = self.spec.points;
        let base = PI / self.spec.half_width;
        // Frequency index for FFT bin i: i for the first half, i - n after.
        let freq = |i: usize| -> f64 {
            let m = if i <= n / 2 { i as i64 } else { i as i64 - n as i64 };
            base * m as f64
        };
        let forward = cached_plan(n, false);
        let inverse = cached_plan(n, true);
        let mut buf: Vec<Complex64> = self
            .values
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        match self.spec.dim {
            1 => {
                forward.process(&mut buf);
                for (i, z) in buf.iter_mut().enumerate() {
                    let xi = freq(i);
                    *z *= mult(xi * xi);
                }
                inverse.process(&mut buf);
            }
            2 => {
                for row in buf.chunks_exact_mut(n) {
                    forward.process(row);
                }
                let mut col = vec![Complex64::default(); n];
                for j in 0..n {
                    for i in 0..n {
                        col[i] = buf[i * n + j];
                    }
                    forward.process(&mut col);
                    for i in 0..n {
                        buf[i * n + j] = col[i];
                    }
                }
                for i in 0..n {
                    let ki = freq(i);
                    for j in 0..n {
                        let kj = freq(j);
                        buf[i * n + j] *= mult(ki * ki + kj * kj);
                    }
                }
                for row in buf.chunks_exact_mut(n) {
                    inverse.process(row);
                }
                for j in 0..n {
                    for i in 0..n {
                        col[i] = buf[i * n + j];
                    }
                    inverse.process(&mut col);
                    for i in 0..n {
                        buf[i * n + j] = col[i];
                    }
                }
            }
            _ => unreachable!(),
        }
        let scale = 1.0 / self.spec.node_count() as f64;
        Self {
            spec: self.spec,
            values: buf.iter().map(|z| z.re * scale).collect(),
        }
    }

    /// Serializes as CSV: one row per node, coordinates then value.
    pub fn write_csv(&self, w: &mut impl Write) -> std::io::Result<()> {
        match self.spec.dim {
            1 => writeln!(w, "x,value")?,
            2 => writeln!(w, "x,y,value")?,
            _ => unreachable!(),
        }
        let mut x = [0.0; 2];
        for (idx, v) in self.values.iter().enumerate() {
            self.spec.node_coords(idx, &mut x);
            match self.spec.dim {
                1 => writeln!(w, "{},{}", x[0], v)?,
                2 => writeln!(w, "{},{},{}", x[0], x[1], v)?,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    /// Raw little-endian 8-byte reals, node order; pair with the `GridSpec`
    /// JSON sidecar for reading back.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_le_bytes(spec: GridSpec, bytes: &[u8]) -> Result<Self, FieldError> {
        if bytes.len() != spec.node_count() * 8 {
            return Err(FieldError::GridMismatch);
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::new(spec, values)
    }
}

/// Periodized heat kernel centered at the origin: the free-space Gaussian
/// `(4 pi t)^{-d/2} exp(-|x|^2 / 4t)` summed over periodic images. Unit mass.
pub fn heat_kernel_field(spec: GridSpec, t: f64) -> Result<GridField, FieldError> {
    if t < 0.0 || !t.is_finite() {
        return Err(FieldError::NegativeTime(t));
    }
    if t == 0.0 {
        return Err(FieldError::ZeroTime);
    }
    let period = 2.0 * spec.half_width;
    // Images beyond exp(-u^2/4t) ~ 1e-320 contribute nothing representable.
    let reach = (4.0 * t * 740.0).sqrt();
    let images = ((reach + spec.half_width) / period).ceil() as i64;
    let norm = 1.0 / (4.0 * PI * t).sqrt();
    let axis_kernel: Vec<f64> = (0..spec.points)
        .map(|i| {
            let x = spec.axis_coord(i);
            let mut sum = 0.0;
            for j in -images..=images {
                let y = x + j as f64 * period;
                sum += norm * (-y * y / (4.0 * t)).exp();
            }
            sum
        })
        .collect();
    let values = match spec.dim {
        1 => axis_kernel,
        2 => {
            let n = spec.points;
            let mut v = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    v.push(axis_kernel[i] * axis_kernel[j]);
                }
            }
            v
        }
        _ => unreachable!(),
    };
    GridField::new(spec, values)
}

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn cached_plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec_1d(half_width: f64, points: usize) -> GridSpec {
        GridSpec::new(1, half_width, points).unwrap()
    }

    fn gaussian_1d(spec: GridSpec, quarter_inv_var: f64) -> GridField {
        // exp(-x^2 / (4 s)) with s = quarter_inv_var
        GridField::from_fn(spec, |x| (-x[0] * x[0] / (4.0 * quarter_inv_var)).exp())
    }

    #[test]
    fn spec_validation() {
        assert!(matches!(
            GridSpec::new(3, 1.0, 64),
            Err(FieldError::BadDimension(3))
        ));
        assert!(matches!(
            GridSpec::new(1, 1.0, 48),
            Err(FieldError::BadPointCount(48))
        ));
        assert!(matches!(
            GridSpec::new(1, 1.0, 8),
            Err(FieldError::BadPointCount(8))
        ));
        assert!(matches!(
            GridSpec::new(1, -2.0, 64),
            Err(FieldError::BadHalfWidth(_))
        ));
    }

    #[test]
    fn heat_fixes_constants() {
        let spec = spec_1d(10.0, 64);
        let field = GridField::constant(spec, 0.37);
        for t in [0.0, 0.5, 3.0] {
            let out = field.heat_apply(t).unwrap();
            assert!(out.linf_distance(&field).unwrap() < 1e-13);
        }
    }

    #[test]
    fn heat_rejects_negative_time() {
        let spec = spec_1d(10.0, 64);
        let field = GridField::constant(spec, 1.0);
        assert!(matches!(
            field.heat_apply(-0.1),
            Err(FieldError::NegativeTime(_))
        ));
    }

    #[test]
    fn gaussian_propagates_to_wider_gaussian() {
        // Convolving exp(-x^2/4s) with the kernel gives
        // sqrt(s/(s+t)) exp(-x^2/(4(s+t))).
        let s = 1.0;
        let t = 1.0;
        let spec = spec_1d(16.0, 512);
        let evolved = gaussian_1d(spec, s).heat_apply(t).unwrap();
        let expected = GridField::from_fn(spec, |x| {
            (s / (s + t)).sqrt() * (-x[0] * x[0] / (4.0 * (s + t))).exp()
        });
        assert!(evolved.linf_distance(&expected).unwrap() < 1e-8);
    }

    #[test]
    fn heat_conserves_mass() {
        let spec = spec_1d(12.0, 256);
        let field = GridField::from_fn(spec, |x| 0.4 * (-x[0] * x[0] / 3.0).exp() + 0.1);
        let m0 = field.mass();
        for t in [0.1, 1.0, 7.0] {
            let m = field.heat_apply(t).unwrap().mass();
            assert!((m - m0).abs() < 1e-12 * m0.abs().max(1.0));
        }
    }

    #[test]
    fn heat_positivity_and_contraction() {
        let spec = spec_1d(12.0, 256);
        let field = GridField::from_fn(spec, |x| 0.9 * (-x[0] * x[0] / 2.0).exp());
        let out = field.heat_apply(0.7).unwrap();
        assert!(out.min_value() >= -1e-9);
        assert!(out.sup_norm() <= field.sup_norm() + 1e-9);
    }

    #[test]
    fn semigroup_s_examples() {
        let spec = spec_1d(10.0, 64);
        let one = GridField::constant(spec, 1.0);
        let half = one.semigroup_s(2f64.ln()).unwrap();
        assert!(half.linf_distance(&GridField::constant(spec, 0.5)).unwrap() < 1e-13);
        // t = 0 is the identity.
        let same = one.semigroup_s(0.0).unwrap();
        assert!(same.linf_distance(&one).unwrap() == 0.0);
        // Sup-norm decays at least like e^{-t}.
        let g = GridField::from_fn(spec, |x| 0.8 * (-x[0] * x[0]).exp());
        let t = 1.3;
        assert!(g.semigroup_s(t).unwrap().sup_norm() <= (-t).exp() * g.sup_norm() + 1e-12);
    }

    #[test]
    fn kernel_peak_mass_and_semigroup() {
        let spec = spec_1d(10.0, 512);
        let k1 = heat_kernel_field(spec, 1.0).unwrap();
        let peak = k1.interpolate(&[0.0]);
        assert!((peak - 1.0 / (4.0 * PI).sqrt()).abs() < 1e-6);
        assert!((k1.mass() - 1.0).abs() < 1e-10);
        assert!((k1.l1_norm() - 1.0).abs() < 1e-10);
        let k3 = heat_kernel_field(spec, 3.0).unwrap();
        let propagated = k1.heat_apply(2.0).unwrap();
        assert!(propagated.linf_distance(&k3).unwrap() < 1e-10);
    }

    #[test]
    fn kernel_rejects_zero_and_negative_time() {
        let spec = spec_1d(10.0, 64);
        assert!(matches!(heat_kernel_field(spec, 0.0), Err(FieldError::ZeroTime)));
        assert!(matches!(
            heat_kernel_field(spec, -1.0),
            Err(FieldError::NegativeTime(_))
        ));
    }

    #[test]
    fn norms_on_simple_fields() {
        let spec = spec_1d(5.0, 32);
        let c = GridField::constant(spec, 0.3);
        assert!((c.mass() - 0.3 * 10.0).abs() < 1e-12);
        assert_eq!(GridField::zero(spec).sup_norm(), 0.0);

        let spec2 = GridSpec::new(2, 5.0, 32).unwrap();
        let c2 = GridField::constant(spec2, 2.0);
        assert!((c2.mass() - 2.0 * 100.0).abs() < 1e-10);
    }

    #[test]
    fn two_dimensional_kernel_and_propagation() {
        let spec = GridSpec::new(2, 16.0, 128).unwrap();
        let k = heat_kernel_field(spec, 1.5).unwrap();
        assert!((k.mass() - 1.0).abs() < 1e-10);
        let peak = k.interpolate(&[0.0, 0.0]);
        assert!((peak - 1.0 / (4.0 * PI * 1.5)).abs() < 1e-8);

        let g = GridField::from_fn(spec, |x| (-(x[0] * x[0] + x[1] * x[1]) / 4.0).exp());
        let evolved = g.heat_apply(1.0).unwrap();
        let expected = GridField::from_fn(spec, |x| {
            0.5 * (-(x[0] * x[0] + x[1] * x[1]) / 8.0).exp()
        });
        assert!(evolved.linf_distance(&expected).unwrap() < 1e-8);
        assert!((evolved.mass() - g.mass()).abs() < 1e-12 * g.mass());
    }

    #[test]
    fn interpolation_matches_nodes_and_midpoints() {
        let spec = spec_1d(4.0, 16);
        let f = GridField::from_fn(spec, |x| 0.5 + 0.1 * x[0]);
        let h = spec.spacing();
        for i in 0..10 {
            let x = spec.axis_coord(i);
            assert!((f.interpolate(&[x]) - f.values()[i]).abs() < 1e-14);
            let mid = x + 0.5 * h;
            let expect = 0.5 * (f.values()[i] + f.values()[(i + 1) % 16]);
            assert!((f.interpolate(&[mid]) - expect).abs() < 1e-14);
        }
        // Periodic wrap: a point past the right edge reads the left edge.
        let right = spec.axis_coord(15) + 0.5 * h;
        let expect = 0.5 * (f.values()[15] + f.values()[0]);
        assert!((f.interpolate(&[right]) - expect).abs() < 1e-14);
    }

    #[test]
    fn raw_bytes_round_trip() {
        let spec = spec_1d(3.0, 32);
        let f = GridField::from_fn(spec, |x| x[0].sin());
        let bytes = f.to_le_bytes();
        let back = GridField::from_le_bytes(spec, &bytes).unwrap();
        assert_eq!(f, back);
    }

    #[test]
    fn csv_has_one_row_per_node() {
        let spec = spec_1d(2.0, 16);
        let f = GridField::constant(spec, 1.0);
        let mut out = Vec::new();
        f.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 17);
        assert!(text.starts_with("x,value\n-2,1\n"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn heat_semigroup_property(s in 0.01f64..2.0, t in 0.01f64..2.0) {
            let spec = spec_1d(10.0, 128);
            let f = GridField::from_fn(spec, |x| {
                0.7 * (-x[0] * x[0] / 2.0).exp() + 0.2 * (x[0] * 0.3).cos() * 0.1
            });
            let two_step = f.heat_apply(s).unwrap().heat_apply(t).unwrap();
            let one_step = f.heat_apply(s + t).unwrap();
            prop_assert!(two_step.linf_distance(&one_step).unwrap() < 1e-12);
        }

        #[test]
        fn heat_preserves_unit_range(t in 0.0f64..4.0, peak in 0.1f64..1.0) {
            let spec = spec_1d(10.0, 128);
            let f = GridField::from_fn(spec, |x| peak * (-x[0] * x[0] / 2.0).exp());
            let out = f.heat_apply(t).unwrap();
            prop_assert!(out.min_value() >= -1e-9);
            prop_assert!(out.max_value() <= peak + 1e-9);
        }
    }
}
