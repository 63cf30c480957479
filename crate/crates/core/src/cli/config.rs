//! Run configuration: one JSON document drives every subcommand.
//!
//! Every field has a default, and the defaults together form the shipped
//! standard problem (d = 1, box half-width 20, 512 nodes, half/half
//! offspring law, Gaussian datum peaking at 0.9). `--set key.path=value`
//! overrides individual entries.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, GridSpec};
use crate::offspring::{OffspringDistribution, OffspringError};
use crate::shapes::Shape;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("override '{0}' must look like key.path=value")]
    BadOverride(String),
    #[error("override path '{0}' does not lead into an object")]
    BadOverridePath(String),
    #[error("offspring keys must be positive integers (children counts k >= 1): '{0}'")]
    BadOffspringKey(String),
    #[error("invalid offspring law: {0}; the weights must be nonnegative, sum to 1, and put mass on some k >= 2")]
    Offspring(#[from] OffspringError),
    #[error("invalid grid: {0}")]
    Grid(#[from] FieldError),
    #[error("shape peak {0} must lie in [0, 1] for initial data")]
    BadPeak(f64),
    #[error("start point dimension {got} does not match grid dimension {expected}")]
    StartDimension { got: usize, expected: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub half_width: f64,
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            half_width: 20.0,
            points: 512,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MassSection {
    pub steps_per_unit: usize,
    pub tol: f64,
    pub t_max: f64,
    /// Horizon of the invariant/comparison run.
    pub invariant_horizon: f64,
}

impl Default for MassSection {
    fn default() -> Self {
        Self {
            steps_per_unit: 64,
            tol: 1e-5,
            t_max: 20.0,
            invariant_horizon: 12.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateSection {
    pub start: Vec<Vec<f64>>,
    pub functionals: Vec<String>,
    pub weight: Option<Shape>,
    pub terminal: Option<Shape>,
    pub h_occ: f64,
    pub count_cap: usize,
    pub dump_replicas: bool,
    pub checkpoints: Vec<f64>,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            start: vec![vec![0.0]],
            functionals: vec!["count".to_string()],
            weight: None,
            terminal: None,
            h_occ: 0.0,
            count_cap: 1_000_000,
            dump_replicas: false,
            checkpoints: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DualitySection {
    pub start: Vec<Vec<f64>>,
    pub z_max: f64,
    /// Data of the occupation check: weight shape (the terminal part is 0).
    pub weight: Shape,
    pub longtime_times: Vec<f64>,
}

impl Default for DualitySection {
    fn default() -> Self {
        Self {
            start: vec![vec![0.0]],
            z_max: 4.0,
            weight: Shape::Gaussian {
                center: vec![0.0],
                width: 1.0,
                peak: 0.9,
            },
            longtime_times: vec![1.0, 2.0, 4.0],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplittingSection {
    pub outer: Vec<usize>,
    pub inner_steps: usize,
    pub reference_steps: usize,
    pub data: Shape,
    pub weight: Shape,
    /// Per-doubling error ratios must fall inside this band.
    pub ratio_band: [f64; 2],
    pub final_error_max: f64,
}

impl Default for SplittingSection {
    fn default() -> Self {
        Self {
            outer: vec![4, 8, 16, 32, 64],
            inner_steps: 8,
            reference_steps: 4096,
            data: Shape::Gaussian {
                center: vec![0.0],
                width: 1.5,
                peak: 0.8,
            },
            weight: Shape::Gaussian {
                center: vec![0.5],
                width: 2.0,
                peak: 1.0,
            },
            ratio_band: [1.6, 2.4],
            final_error_max: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsSection {
    /// Data pairs for the convexity chords.
    pub pairs: Vec<(Shape, Shape)>,
    pub lambdas: Vec<f64>,
    /// Peaks of the scaling family for the contraction-ratio check.
    pub scaling_peaks: Vec<f64>,
}

impl Default for ExperimentsSection {
    fn default() -> Self {
        let gaussian = |center: f64, width: f64, peak: f64| Shape::Gaussian {
            center: vec![center],
            width,
            peak,
        };
        Self {
            pairs: vec![
                (gaussian(-2.0, 1.0, 0.9), gaussian(2.0, 1.0, 0.9)),
                (gaussian(0.0, 1.0, 0.9), gaussian(0.0, 1.0, 0.45)),
                (gaussian(0.0, 0.7, 0.8), gaussian(0.0, 1.4, 0.5)),
                (
                    Shape::Bump {
                        center: vec![-1.0],
                        radius: 2.0,
                        peak: 1.0,
                    },
                    gaussian(1.0, 1.0, 0.7),
                ),
                (
                    Shape::IndicatorSmoothed {
                        center: vec![-1.0],
                        radius: 1.5,
                        ramp: 0.5,
                        peak: 0.8,
                    },
                    gaussian(1.0, 1.2, 0.9),
                ),
            ],
            lambdas: vec![0.25, 0.5, 0.75],
            scaling_peaks: vec![0.9, 0.45, 0.225],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OccupationSection {
    /// Constant killing weight of the fixed-scale limit.
    pub weight: f64,
    pub horizon: f64,
    pub steps_per_unit: usize,
    /// Bound `M` of the slow-scale experiment.
    pub weight_bound: f64,
    /// `alpha = alpha_fraction / F'(1)`.
    pub alpha_fraction: f64,
    pub time_scales: Vec<f64>,
}

impl Default for OccupationSection {
    fn default() -> Self {
        Self {
            weight: 1.0,
            horizon: 20.0,
            steps_per_unit: 256,
            weight_bound: 0.005,
            alpha_fraction: 0.95,
            time_scales: vec![1e2, 1e3, 1e4, 1e5],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Offspring law as `{"k": weight}` with string integer keys.
    pub offspring: BTreeMap<String, f64>,
    pub grid: GridConfig,
    pub initial: Shape,
    pub horizon: f64,
    pub steps: usize,
    pub replicas: usize,
    pub seed: u64,
    pub mass: MassSection,
    pub simulate: SimulateSection,
    pub duality: DualitySection,
    pub splitting: SplittingSection,
    pub occupation: OccupationSection,
    pub experiments: ExperimentsSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mut offspring = BTreeMap::new();
        offspring.insert("1".to_string(), 0.5);
        offspring.insert("2".to_string(), 0.5);
        Self {
            offspring,
            grid: GridConfig::default(),
            initial: Shape::Gaussian {
                center: vec![0.0],
                width: 1.0,
                peak: 0.9,
            },
            horizon: 1.0,
            steps: 256,
            replicas: 100_000,
            seed: 20_260_808,
            mass: MassSection::default(),
            simulate: SimulateSection::default(),
            duality: DualitySection::default(),
            splitting: SplittingSection::default(),
            occupation: OccupationSection::default(),
            experiments: ExperimentsSection::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file (default config when `path` is `None`), then
    /// applies `key.path=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text)?
            }
            None => serde_json::to_value(RunConfig::default())?,
        };
        for entry in overrides {
            apply_override(&mut value, entry)?;
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn offspring_distribution(&self) -> Result<OffspringDistribution, ConfigError> {
        let mut weights = BTreeMap::new();
        for (key, &w) in &self.offspring {
            let k: u32 = key
                .parse()
                .map_err(|_| ConfigError::BadOffspringKey(key.clone()))?;
            weights.insert(k, w);
        }
        Ok(OffspringDistribution::from_weights(&weights)?)
    }

    pub fn grid_spec(&self) -> Result<GridSpec, ConfigError> {
        Ok(GridSpec::new(
            self.grid.dim,
            self.grid.half_width,
            self.grid.points,
        )?)
    }

    /// Initial data live in [0, 1]; weights and terminal functions need not.
    pub fn validated_initial(&self) -> Result<&Shape, ConfigError> {
        let peak = self.initial.peak_value();
        if !(0.0..=1.0).contains(&peak) {
            return Err(ConfigError::BadPeak(peak));
        }
        Ok(&self.initial)
    }
}

/// Sets `key.path=value` inside a JSON tree; values parse as JSON first and
/// fall back to bare strings.
fn apply_override(root: &mut serde_json::Value, entry: &str) -> Result<(), ConfigError> {
    let (path, raw) = entry
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverride(entry.to_string()))?;
    let new_value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, segment) in segments.iter().enumerate() {
        let object = cursor
            .as_object_mut()
            .ok_or_else(|| ConfigError::BadOverridePath(path.to_string()))?;
        if i + 1 == segments.len() {
            object.insert(segment.to_string(), new_value);
            return Ok(());
        }
        cursor = object
            .entry(segment.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(ConfigError::BadOverridePath(path.to_string()))
}
