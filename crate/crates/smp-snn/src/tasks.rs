//! Seeded dataset generators for the three experiment families, plus
//! dataset file I/O.
//!
//! The dataset file is a single JSON document: a header (task, parameters,
//! seed, dimensions, count) and a `records` array of rows laid out as
//! `[inputs..., labels...]`. Numbers round-trip at full precision, so
//! write-then-read reproduces a dataset bit-exactly.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};
use crate::rng::StreamRng;

/// Which experiment a dataset belongs to, with its generator parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum TaskSpec {
    /// Points on [-1,1]^2 labeled 0/1 against a noisy-radius circle.
    CircleClassification {
        count: usize,
        seed: u64,
        #[serde(default = "default_radius")]
        radius: f64,
        #[serde(default = "default_noise_frac")]
        noise_frac: f64,
    },
    /// `2 + (1+x)^3 + N(0, noise_std^2)` on x ~ U[0,1].
    CubicRegression {
        count: usize,
        seed: u64,
        #[serde(default = "default_cubic_noise")]
        noise_std: f64,
    },
    /// `(1 + tan(1.3 x)) (1 + N(0, sigma^2))` on x ~ U[0,1].
    TanRegression {
        count: usize,
        seed: u64,
        #[serde(default = "default_tan_sigma")]
        sigma: f64,
    },
    /// Observations `(x, exp(alpha x^2 / 2) + noise)` labeled by alpha.
    ParamEstimation {
        count: usize,
        seed: u64,
        #[serde(default = "default_alpha_range")]
        alpha_range: (f64, f64),
        #[serde(default = "default_obs_noise")]
        model_noise_std: f64,
        #[serde(default = "default_x_center")]
        x_center: f64,
        #[serde(default = "default_obs_noise")]
        x_std: f64,
    },
}

fn default_radius() -> f64 {
    0.5
}
fn default_noise_frac() -> f64 {
    0.1
}
fn default_cubic_noise() -> f64 {
    0.2
}
fn default_tan_sigma() -> f64 {
    0.05
}
fn default_alpha_range() -> (f64, f64) {
    (3.0, 5.0)
}
fn default_obs_noise() -> f64 {
    0.05
}
fn default_x_center() -> f64 {
    0.5
}

impl TaskSpec {
    pub fn name(&self) -> &'static str {
        match self {
            TaskSpec::CircleClassification { .. } => "circle-classification",
            TaskSpec::CubicRegression { .. } => "cubic-regression",
            TaskSpec::TanRegression { .. } => "tan-regression",
            TaskSpec::ParamEstimation { .. } => "param-estimation",
        }
    }

    pub fn count(&self) -> usize {
        match *self {
            TaskSpec::CircleClassification { count, .. }
            | TaskSpec::CubicRegression { count, .. }
            | TaskSpec::TanRegression { count, .. }
            | TaskSpec::ParamEstimation { count, .. } => count,
        }
    }

    pub fn seed(&self) -> u64 {
        match *self {
            TaskSpec::CircleClassification { seed, .. }
            | TaskSpec::CubicRegression { seed, .. }
            | TaskSpec::TanRegression { seed, .. }
            | TaskSpec::ParamEstimation { seed, .. } => seed,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            TaskSpec::CircleClassification { .. } | TaskSpec::ParamEstimation { .. } => 2,
            _ => 1,
        }
    }

    pub fn label_dim(&self) -> usize {
        1
    }

    pub fn validate(&self) -> Result<()> {
        if self.count() == 0 {
            return Err(SmpError::config("sample count must be at least 1"));
        }
        let ok = match *self {
            TaskSpec::CircleClassification {
                radius, noise_frac, ..
            } => radius > 0.0 && noise_frac >= 0.0,
            TaskSpec::CubicRegression { noise_std, .. } => noise_std >= 0.0,
            TaskSpec::TanRegression { sigma, .. } => sigma >= 0.0,
            TaskSpec::ParamEstimation {
                alpha_range,
                model_noise_std,
                x_std,
                ..
            } => alpha_range.0 <= alpha_range.1 && model_noise_std >= 0.0 && x_std >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(SmpError::config(format!(
                "invalid parameters for task {}",
                self.name()
            )))
        }
    }
}

/// One labeled sample: network input and label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub input: Vec<f64>,
    pub label: Vec<f64>,
}

/// Labeled samples realizing the data variable, with generator provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: TaskSpec,
    pub input_dim: usize,
    pub label_dim: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(SmpError::config("dataset has no samples"));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.input.len() != self.input_dim {
                return Err(SmpError::DimensionMismatch {
                    context: "dataset input_dim",
                    expected: self.input_dim,
                    actual: s.input.len(),
                })
                .map_err(|e| annotate_record(e, i));
            }
            if s.label.len() != self.label_dim {
                return Err(SmpError::DimensionMismatch {
                    context: "dataset label_dim",
                    expected: self.label_dim,
                    actual: s.label.len(),
                })
                .map_err(|e| annotate_record(e, i));
            }
        }
        Ok(())
    }
}

fn annotate_record(err: SmpError, record: usize) -> SmpError {
    match err {
        SmpError::DimensionMismatch {
            context,
            expected,
            actual,
        } => SmpError::Parse {
            path: String::new(),
            record,
            message: format!("{context}: expected {expected}, got {actual}"),
        },
        other => other,
    }
}

/// Generate the dataset described by `spec`.
pub fn generate(spec: &TaskSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = StreamRng::new(spec.seed());
    let samples = match *spec {
        TaskSpec::CircleClassification {
            count,
            radius,
            noise_frac,
            ..
        } => gen_circle(count, radius, noise_frac, &mut rng),
        TaskSpec::CubicRegression {
            count, noise_std, ..
        } => gen_cubic(count, noise_std, &mut rng),
        TaskSpec::TanRegression { count, sigma, .. } => gen_tan(count, sigma, &mut rng),
        TaskSpec::ParamEstimation {
            count,
            alpha_range,
            model_noise_std,
            x_center,
            x_std,
            ..
        } => gen_param_est(count, alpha_range, model_noise_std, x_center, x_std, &mut rng),
    };
    Ok(Dataset {
        task: spec.clone(),
        input_dim: spec.input_dim(),
        label_dim: spec.label_dim(),
        samples,
    })
}

fn gen_circle(count: usize, radius: f64, noise_frac: f64, rng: &mut StreamRng) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let p = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
            let noisy_radius = radius + noise_frac * radius * rng.normal();
            let norm = (p[0] * p[0] + p[1] * p[1]).sqrt();
            let label = if norm > noisy_radius { 1.0 } else { 0.0 };
            Sample {
                input: p.to_vec(),
                label: vec![label],
            }
        })
        .collect()
}

fn gen_cubic(count: usize, noise_std: f64, rng: &mut StreamRng) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let x = rng.uniform(0.0, 1.0);
            let y = 2.0 + (1.0 + x).powi(3) + noise_std * rng.normal();
            Sample {
                input: vec![x],
                label: vec![y],
            }
        })
        .collect()
}

fn gen_tan(count: usize, sigma: f64, rng: &mut StreamRng) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let x = rng.uniform(0.0, 1.0);
            let y = (1.0 + (1.3 * x).tan()) * (1.0 + sigma * rng.normal());
            Sample {
                input: vec![x],
                label: vec![y],
            }
        })
        .collect()
}

fn gen_param_est(
    count: usize,
    alpha_range: (f64, f64),
    model_noise_std: f64,
    x_center: f64,
    x_std: f64,
    rng: &mut StreamRng,
) -> Vec<Sample> {
    (0..count)
        .map(|_| {
            let alpha = rng.uniform(alpha_range.0, alpha_range.1);
            let x = x_center + x_std * rng.normal();
            let v = (alpha * x * x / 2.0).exp() + model_noise_std * rng.normal();
            Sample {
                input: vec![x, v],
                label: vec![alpha],
            }
        })
        .collect()
}

/// Noise-free value of the parameterized observation model `exp(alpha x^2/2)`.
pub fn param_model(alpha: f64, x: f64) -> f64 {
    (alpha * x * x / 2.0).exp()
}

// --- file format ---

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    task: TaskSpec,
    seed: u64,
    input_dim: usize,
    label_dim: usize,
    count: usize,
    records: Vec<Vec<f64>>,
}

pub fn write_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = DatasetFile {
        task: dataset.task.clone(),
        seed: dataset.task.seed(),
        input_dim: dataset.input_dim,
        label_dim: dataset.label_dim,
        count: dataset.samples.len(),
        records: dataset
            .samples
            .iter()
            .map(|s| {
                let mut row = s.input.clone();
                row.extend_from_slice(&s.label);
                row
            })
            .collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| SmpError::config(format!("serialize dataset: {e}")))?;
    fs::write(path, text).map_err(|e| SmpError::io(path.display().to_string(), e))
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| SmpError::io(path.display().to_string(), e))?;
    let file: DatasetFile = serde_json::from_str(&text).map_err(|e| SmpError::Parse {
        path: path.display().to_string(),
        record: 0,
        message: e.to_string(),
    })?;
    let width = file.input_dim + file.label_dim;
    if file.records.len() != file.count {
        return Err(SmpError::Parse {
            path: path.display().to_string(),
            record: file.records.len(),
            message: format!("expected {} records, found {}", file.count, file.records.len()),
        });
    }
    let mut samples = Vec::with_capacity(file.records.len());
    for (i, row) in file.records.iter().enumerate() {
        if row.len() != width {
            return Err(SmpError::Parse {
                path: path.display().to_string(),
                record: i,
                message: format!("expected {} values per record, got {}", width, row.len()),
            });
        }
        samples.push(Sample {
            input: row[..file.input_dim].to_vec(),
            label: row[file.input_dim..].to_vec(),
        });
    }
    let dataset = Dataset {
        task: file.task,
        input_dim: file.input_dim,
        label_dim: file.label_dim,
        samples,
    };
    dataset.validate()?;
    Ok(dataset)
}
