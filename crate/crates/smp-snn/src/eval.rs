//! Trained-model evaluation: predictive sampling, empirical confidence
//! bands, classification metrics and weight surfaces, and
//! parameter-estimation statistics.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::LossSpec;
use crate::dynamics::{simulate_path, ControlPath, NetConfig};
use crate::error::{Result, SmpError};
use crate::rng::StreamRng;
use crate::tasks::{Dataset, TaskSpec};

/// Repeated network outputs for one input under independent noise draws.
#[derive(Clone, Debug)]
pub struct PredictiveSample {
    pub input: Vec<f64>,
    /// One readout vector per noise realization.
    pub outputs: Vec<DVector<f64>>,
}

/// Empirical confidence band over a grid of inputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Band {
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

impl Band {
    pub fn half_widths(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (u - l))
            .collect()
    }
}

/// Sample the network `count` times at `input` with independent noise.
pub fn predict(
    controls: &ControlPath,
    net: &NetConfig,
    input: &[f64],
    count: usize,
    rng: &mut StreamRng,
) -> Result<PredictiveSample> {
    if count == 0 {
        return Err(SmpError::config("predictive sample count must be >= 1"));
    }
    let loss = LossSpec {
        label_dim: net.label_dim,
    };
    let mut outputs = Vec::with_capacity(count);
    for _ in 0..count {
        let path = simulate_path(input, controls, net, rng)?;
        outputs.push(loss.readout(path.terminal()));
    }
    Ok(PredictiveSample {
        input: input.to_vec(),
        outputs,
    })
}

/// Empirical percentile with linear interpolation on sorted values.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Build a band from per-grid-point predictive samples of a scalar readout.
/// Lower/upper are the empirical `(1 - level)/2` and `(1 + level)/2`
/// percentiles.
pub fn band(samples: &[PredictiveSample], level: f64) -> Result<Band> {
    if !(0.0..1.0).contains(&level) {
        return Err(SmpError::config("band level must lie in (0, 1)"));
    }
    let mut grid = Vec::with_capacity(samples.len());
    let mut mean = Vec::with_capacity(samples.len());
    let mut lower = Vec::with_capacity(samples.len());
    let mut upper = Vec::with_capacity(samples.len());
    for sample in samples {
        if sample.outputs.len() < 100 {
            return Err(SmpError::config(format!(
                "band requires >= 100 samples per grid point, got {}",
                sample.outputs.len()
            )));
        }
        let mut values: Vec<f64> = sample.outputs.iter().map(|o| o[0]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = values.iter().sum::<f64>() / values.len() as f64;
        grid.push(sample.input[0]);
        mean.push(m);
        lower.push(percentile(&values, (1.0 - level) / 2.0));
        upper.push(percentile(&values, (1.0 + level) / 2.0));
    }
    Ok(Band {
        grid,
        mean,
        lower,
        upper,
        level,
    })
}

/// Sample a scalar-readout band over `grid_resolution` uniform points on
/// `[lo, hi]`, `count` draws per point, each point on its own substream.
pub fn band_on_interval(
    controls: &ControlPath,
    net: &NetConfig,
    interval: (f64, f64),
    grid_resolution: usize,
    count: usize,
    level: f64,
    seed: u64,
) -> Result<Band> {
    let samples: Vec<Result<PredictiveSample>> = (0..grid_resolution)
        .into_par_iter()
        .map(|i| {
            let x = if grid_resolution == 1 {
                interval.0
            } else {
                interval.0
                    + (interval.1 - interval.0) * i as f64 / (grid_resolution - 1) as f64
            };
            let mut rng = StreamRng::substream(seed, i as u64);
            predict(controls, net, &[x], count, &mut rng)
        })
        .collect();
    let samples = samples.into_iter().collect::<Result<Vec<_>>>()?;
    band(&samples, level)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    /// Accuracy restricted to test points farther than 2 noise standard
    /// deviations from the classification circle.
    pub accuracy_outside_band: f64,
    /// Fraction of all misclassified points lying inside the 2-sigma band.
    pub misclassified_inside_band_frac: f64,
    pub majority_vote_accuracy: Option<f64>,
    pub test_points: usize,
}

/// Classify each test point from sampled network output thresholded at
/// `threshold`. A single vote reproduces the scattered classification
/// experiment; `votes > 1` additionally reports majority-vote accuracy.
pub fn classification_metrics(
    controls: &ControlPath,
    net: &NetConfig,
    testset: &Dataset,
    votes: usize,
    threshold: f64,
    seed: u64,
) -> Result<ClassificationMetrics> {
    let (radius, noise_frac) = match testset.task {
        TaskSpec::CircleClassification {
            radius, noise_frac, ..
        } => (radius, noise_frac),
        _ => {
            return Err(SmpError::config(format!(
                "classification metrics require a circle-classification dataset, got {}",
                testset.task.name()
            )))
        }
    };
    let votes = votes.max(1);
    let noise_std = noise_frac * radius;
    let results: Vec<Result<(bool, bool, bool)>> = testset
        .samples
        .par_iter()
        .enumerate()
        .map(|(i, sample)| {
            let mut rng = StreamRng::substream(seed, i as u64);
            let pred = predict(controls, net, &sample.input, votes, &mut rng)?;
            let first_label = if pred.outputs[0][0] > threshold { 1.0 } else { 0.0 };
            let majority = {
                let ones = pred
                    .outputs
                    .iter()
                    .filter(|o| o[0] > threshold)
                    .count();
                if 2 * ones > votes {
                    1.0
                } else {
                    0.0
                }
            };
            let norm = (sample.input[0].powi(2) + sample.input[1].powi(2)).sqrt();
            let outside_band = (norm - radius).abs() > 2.0 * noise_std;
            Ok((
                first_label == sample.label[0],
                majority == sample.label[0],
                outside_band,
            ))
        })
        .collect();
    let mut correct = 0usize;
    let mut majority_correct = 0usize;
    let mut outside = 0usize;
    let mut outside_correct = 0usize;
    let mut miss = 0usize;
    let mut miss_inside = 0usize;
    let total = testset.len();
    for r in results {
        let (ok, maj_ok, outside_band) = r?;
        if ok {
            correct += 1;
        } else {
            miss += 1;
            if !outside_band {
                miss_inside += 1;
            }
        }
        if maj_ok {
            majority_correct += 1;
        }
        if outside_band {
            outside += 1;
            if ok {
                outside_correct += 1;
            }
        }
    }
    Ok(ClassificationMetrics {
        accuracy: correct as f64 / total as f64,
        accuracy_outside_band: if outside > 0 {
            outside_correct as f64 / outside as f64
        } else {
            f64::NAN
        },
        misclassified_inside_band_frac: if miss > 0 {
            miss_inside as f64 / miss as f64
        } else {
            1.0
        },
        majority_vote_accuracy: (votes > 1).then(|| majority_correct as f64 / total as f64),
        test_points: total,
    })
}

/// Dense grid of mean classification readouts over `[-1, 1]^2`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightSurface {
    pub resolution: usize,
    /// Row-major cell-center means, rows indexed by y then x.
    pub values: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
}

pub fn weight_surface(
    controls: &ControlPath,
    net: &NetConfig,
    resolution: usize,
    samples_per_cell: usize,
    seed: u64,
) -> Result<WeightSurface> {
    if resolution == 0 {
        return Err(SmpError::config("grid resolution must be >= 1"));
    }
    let center = |i: usize| -1.0 + 2.0 * (i as f64 + 0.5) / resolution as f64;
    let xs: Vec<f64> = (0..resolution).map(center).collect();
    let ys: Vec<f64> = (0..resolution).map(center).collect();
    let cells: Vec<Result<f64>> = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let (iy, ix) = (idx / resolution, idx % resolution);
            let mut rng = StreamRng::substream(seed, idx as u64);
            let pred = predict(controls, net, &[xs[ix], ys[iy]], samples_per_cell, &mut rng)?;
            Ok(pred.outputs.iter().map(|o| o[0]).sum::<f64>() / samples_per_cell as f64)
        })
        .collect();
    let values = cells.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(WeightSurface {
        resolution,
        values,
        xs,
        ys,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub point_estimate: f64,
    pub pooled_samples: Vec<f64>,
}

/// Feed each `(x, v)` observation through the network `samples_per_obs`
/// times and pool every readout sample; the point estimate is the pooled
/// mean.
pub fn param_estimate(
    controls: &ControlPath,
    net: &NetConfig,
    observations: &[(f64, f64)],
    samples_per_obs: usize,
    seed: u64,
) -> Result<ParamEstimate> {
    if observations.is_empty() {
        return Err(SmpError::config("parameter estimation needs observations"));
    }
    let per_obs: Vec<Result<Vec<f64>>> = observations
        .par_iter()
        .enumerate()
        .map(|(i, &(x, v))| {
            let mut rng = StreamRng::substream(seed, i as u64);
            let pred = predict(controls, net, &[x, v], samples_per_obs, &mut rng)?;
            Ok(pred.outputs.iter().map(|o| o[0]).collect())
        })
        .collect();
    let mut pooled = Vec::with_capacity(observations.len() * samples_per_obs);
    for obs in per_obs {
        pooled.extend(obs?);
    }
    let point_estimate = pooled.iter().sum::<f64>() / pooled.len() as f64;
    Ok(ParamEstimate {
        point_estimate,
        pooled_samples: pooled,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurveMetrics {
    pub rmse: f64,
    /// Fraction of grid points whose model band contains the true mean.
    pub coverage: f64,
    /// Mean absolute difference between model and reference half-widths.
    pub band_alignment: f64,
    pub mean_half_width: f64,
}

/// Compare a model band against the true mean curve and reference band.
pub fn curve_metrics(
    model: &Band,
    true_mean: &[f64],
    true_band: (&[f64], &[f64]),
) -> Result<CurveMetrics> {
    let n = model.grid.len();
    if true_mean.len() != n || true_band.0.len() != n || true_band.1.len() != n {
        return Err(SmpError::DimensionMismatch {
            context: "curve metrics grid",
            expected: n,
            actual: true_mean.len(),
        });
    }
    let mut sq = 0.0;
    let mut covered = 0usize;
    let mut align = 0.0;
    let mut half_width = 0.0;
    for i in 0..n {
        sq += (model.mean[i] - true_mean[i]).powi(2);
        if model.lower[i] <= true_mean[i] && true_mean[i] <= model.upper[i] {
            covered += 1;
        }
        let model_hw = 0.5 * (model.upper[i] - model.lower[i]);
        let true_hw = 0.5 * (true_band.1[i] - true_band.0[i]);
        align += (model_hw - true_hw).abs();
        half_width += model_hw;
    }
    Ok(CurveMetrics {
        rmse: (sq / n as f64).sqrt(),
        coverage: covered as f64 / n as f64,
        band_alignment: align / n as f64,
        mean_half_width: half_width / n as f64,
    })
}
