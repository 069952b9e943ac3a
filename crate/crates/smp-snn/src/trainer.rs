//! Control-gradient assembly and the single-sample SGD training loop, plus
//! the fully averaged Monte Carlo gradient and cost estimators used for
//! verification.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjoint::{solve_adjoint, AdjointPath, LossSpec, Scheme};
use crate::dynamics::{
    diffusion_gradient, drift_param_gradient, simulate_path, ControlPath, LayerControl, NetConfig,
    StatePath,
};
use crate::error::{Result, SmpError};
use crate::rng::{RngState, StreamRng};
use crate::tasks::Dataset;

/// Gradient with respect to every control block, shaped exactly like a
/// [`ControlPath`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGradient {
    pub layers: Vec<LayerGradient>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerGradient {
    pub grad_w: DMatrix<f64>,
    pub grad_b: DVector<f64>,
    pub grad_sigma: DVector<f64>,
}

impl ControlGradient {
    pub fn zeros(net: &NetConfig) -> Self {
        Self {
            layers: (0..net.depth)
                .map(|_| LayerGradient {
                    grad_w: DMatrix::zeros(net.width, net.width),
                    grad_b: DVector::zeros(net.width),
                    grad_sigma: DVector::zeros(net.width),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ControlGradient) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.grad_w += &b.grad_w;
            a.grad_b += &b.grad_b;
            a.grad_sigma += &b.grad_sigma;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in &mut self.layers {
            layer.grad_w *= factor;
            layer.grad_b *= factor;
            layer.grad_sigma *= factor;
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.grad_w.iter().map(|v| v * v).sum::<f64>()
                    + l.grad_b.iter().map(|v| v * v).sum::<f64>()
                    + l.grad_sigma.iter().map(|v| v * v).sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.grad_w.iter().all(|v| v.is_finite())
                && l.grad_b.iter().all(|v| v.is_finite())
                && l.grad_sigma.iter().all(|v| v.is_finite())
        })
    }

    pub fn zero_sigma(&mut self) {
        for layer in &mut self.layers {
            layer.grad_sigma.fill(0.0);
        }
    }
}

/// SGD hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Number of SGD iterations K.
    pub iterations: usize,
    /// Multiplier on the 1/sqrt(k) schedule.
    #[serde(default = "default_lr_scale")]
    pub lr_scale: f64,
    pub seed: u64,
    /// Checkpoint cadence; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: usize,
    /// Training-log cadence; 0 logs only the first and last iteration.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub scheme: Scheme,
    /// Keep sigma at its initial value and mask its gradient.
    #[serde(default)]
    pub freeze_sigma: bool,
}

fn default_lr_scale() -> f64 {
    1.0
}
fn default_log_every() -> usize {
    1000
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(SmpError::config("iterations must be at least 1"));
        }
        if !(self.lr_scale > 0.0) {
            return Err(SmpError::config("lr_scale must be positive"));
        }
        Ok(())
    }
}

/// One state path with its adjoint solution.
#[derive(Clone, Debug)]
pub struct TrajectoryBundle {
    pub state: StatePath,
    pub adjoint: AdjointPath,
}

/// One emitted training-log record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub iteration: usize,
    pub sample_index: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub learning_rate: f64,
}

pub type TrainingLog = Vec<TrainingRecord>;

/// Learning rate `lr_scale / sqrt(k)`; iterations are 1-based because the
/// schedule diverges at k = 0.
pub fn learning_rate(k: usize, cfg: &TrainConfig) -> Result<f64> {
    if k == 0 {
        return Err(SmpError::config("iteration index must be >= 1"));
    }
    Ok(cfg.lr_scale / (k as f64).sqrt())
}

/// Single-sample gradient along one trajectory bundle.
///
/// The right-point form follows the discrete update rule literally: the
/// drift block pairs `X_n` with `Y_n` and the sigma block is `Z_n`. The
/// left-point form is exact discrete backpropagation: it pairs the drift
/// block with `Y_{n+1}` and carries the step-size factor `h`, so it equals
/// the true derivative of the pathwise loss for a fixed noise realization.
pub fn pathwise_gradient(
    bundle: &TrajectoryBundle,
    controls: &ControlPath,
    scheme: Scheme,
    h: f64,
) -> Result<ControlGradient> {
    let depth = controls.layers.len();
    let mut layers = Vec::with_capacity(depth);
    for n in 0..depth {
        let x = &bundle.state.states[n];
        let ctrl = &controls.layers[n];
        match scheme {
            Scheme::RightPoint => {
                let (grad_w, grad_b) = drift_param_gradient(x, ctrl, &bundle.adjoint.y[n])?;
                layers.push(LayerGradient {
                    grad_w,
                    grad_b,
                    grad_sigma: diffusion_gradient(&bundle.adjoint.z[n]),
                });
            }
            Scheme::LeftPoint => {
                let (mut grad_w, mut grad_b) =
                    drift_param_gradient(x, ctrl, &bundle.adjoint.y[n + 1])?;
                grad_w *= h;
                grad_b *= h;
                let mut grad_sigma = diffusion_gradient(&bundle.adjoint.z[n]);
                grad_sigma *= h;
                layers.push(LayerGradient {
                    grad_w,
                    grad_b,
                    grad_sigma,
                });
            }
        }
    }
    Ok(ControlGradient { layers })
}

/// `controls - eta * grad`, blockwise.
pub fn sgd_step(controls: &ControlPath, grad: &ControlGradient, eta: f64) -> Result<ControlPath> {
    if controls.layers.len() != grad.layers.len() {
        return Err(SmpError::DimensionMismatch {
            context: "gradient depth",
            expected: controls.layers.len(),
            actual: grad.layers.len(),
        });
    }
    let layers = controls
        .layers
        .iter()
        .zip(&grad.layers)
        .map(|(c, g)| LayerControl {
            weights: &c.weights - eta * &g.grad_w,
            biases: &c.biases - eta * &g.grad_b,
            sigma: &c.sigma - eta * &g.grad_sigma,
        })
        .collect();
    let updated = ControlPath { layers };
    if updated.layers.iter().all(LayerControl::is_finite) {
        Ok(updated)
    } else {
        Err(SmpError::NonFinite {
            context: "sgd update",
            iteration: None,
        })
    }
}

/// Initial controls: weights i.i.d. standard normal, biases 0.05, diffusion
/// coefficients 0.01.
pub fn init_controls(net: &NetConfig, rng: &mut StreamRng) -> ControlPath {
    let layers = (0..net.depth)
        .map(|_| LayerControl {
            weights: DMatrix::from_fn(net.width, net.width, |_, _| rng.normal()),
            biases: DVector::from_element(net.width, 0.05),
            sigma: DVector::from_element(net.width, 0.01),
        })
        .collect();
    ControlPath { layers }
}

/// Resumable training state; serializing this plus the config captures the
/// trajectory exactly.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub controls: ControlPath,
    /// Completed iteration count.
    pub iteration: usize,
    pub rng: StreamRng,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, init: ControlPath) -> Self {
        Self {
            controls: init,
            iteration: 0,
            rng: StreamRng::new(cfg.seed),
        }
    }

    pub fn restore(controls: ControlPath, iteration: usize, rng: &RngState) -> Self {
        Self {
            controls,
            iteration,
            rng: StreamRng::restore(rng),
        }
    }
}

/// Run Algorithm-style SGD from `state` up to `cfg.iterations`, appending log
/// records and invoking `on_snapshot` at the configured cadence.
pub fn train_steps(
    state: &mut TrainState,
    dataset: &Dataset,
    net: &NetConfig,
    cfg: &TrainConfig,
    log: &mut TrainingLog,
    mut on_snapshot: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    net.validate()?;
    cfg.validate()?;
    dataset.validate()?;
    state.controls.conforms(net)?;
    if dataset.input_dim != net.input_dim || dataset.label_dim != net.label_dim {
        return Err(SmpError::config(format!(
            "dataset dims ({}, {}) do not match net dims ({}, {})",
            dataset.input_dim, dataset.label_dim, net.input_dim, net.label_dim
        )));
    }
    let loss_spec = LossSpec {
        label_dim: net.label_dim,
    };
    let q = dataset.len();
    let tag_iter = |err: SmpError, k: usize| match err {
        SmpError::NonFinite { context, .. } => SmpError::NonFinite {
            context,
            iteration: Some(k),
        },
        other => other,
    };
    while state.iteration < cfg.iterations {
        let k = state.iteration + 1;
        let idx = state.rng.index(q);
        let sample = &dataset.samples[idx];
        let gamma = DVector::from_row_slice(&sample.label);
        let path = simulate_path(&sample.input, &state.controls, net, &mut state.rng)
            .map_err(|e| tag_iter(e, k))?;
        let adjoint = solve_adjoint(
            &path,
            &state.controls,
            &gamma,
            &loss_spec,
            cfg.scheme,
            net.step_size,
        )
        .map_err(|e| tag_iter(e, k))?;
        let loss = loss_spec.loss(path.terminal(), &gamma)?;
        let bundle = TrajectoryBundle {
            state: path,
            adjoint,
        };
        let mut grad = pathwise_gradient(&bundle, &state.controls, cfg.scheme, net.step_size)?;
        if cfg.freeze_sigma {
            grad.zero_sigma();
        }
        let eta = learning_rate(k, cfg)?;
        state.controls = sgd_step(&state.controls, &grad, eta).map_err(|e| tag_iter(e, k))?;
        state.iteration = k;
        let due = cfg.log_every > 0 && k % cfg.log_every == 0;
        if due || k == 1 || k == cfg.iterations {
            log.push(TrainingRecord {
                iteration: k,
                sample_index: idx,
                loss,
                grad_norm: grad.norm(),
                learning_rate: eta,
            });
        }
        if cfg.snapshot_every > 0 && k % cfg.snapshot_every == 0 && k != cfg.iterations {
            on_snapshot(state)?;
        }
    }
    Ok(())
}

/// Full training run: single-sample SGD for `cfg.iterations` steps.
pub fn train(
    dataset: &Dataset,
    net: &NetConfig,
    cfg: &TrainConfig,
    init: ControlPath,
) -> Result<(ControlPath, TrainingLog)> {
    let mut state = TrainState::new(cfg, init);
    let mut log = TrainingLog::new();
    train_steps(&mut state, dataset, net, cfg, &mut log, |_| Ok(()))?;
    Ok((state.controls, log))
}

fn bundle_for(
    controls: &ControlPath,
    dataset: &Dataset,
    net: &NetConfig,
    loss_spec: &LossSpec,
    scheme: Scheme,
    sample_index: usize,
    rng: &mut StreamRng,
) -> Result<TrajectoryBundle> {
    let sample = &dataset.samples[sample_index];
    let gamma = DVector::from_row_slice(&sample.label);
    let path = simulate_path(&sample.input, controls, net, rng)?;
    let adjoint = solve_adjoint(&path, controls, &gamma, loss_spec, scheme, net.step_size)?;
    Ok(TrajectoryBundle {
        state: path,
        adjoint,
    })
}

/// Fully averaged gradient: every dataset sample crossed with `m_paths`
/// independent noise realizations. Bundle `(q, m)` always draws from
/// substream `q * m_paths + m` of `seed`, so results are reproducible under
/// any worker count and share noise with [`evaluate_cost`] at the same seed.
pub fn mc_gradient(
    controls: &ControlPath,
    dataset: &Dataset,
    net: &NetConfig,
    scheme: Scheme,
    m_paths: usize,
    seed: u64,
) -> Result<ControlGradient> {
    if m_paths == 0 {
        return Err(SmpError::config("monte carlo sample count must be >= 1"));
    }
    dataset.validate()?;
    let loss_spec = LossSpec {
        label_dim: net.label_dim,
    };
    let total = dataset.len() * m_paths;
    let indices: Vec<usize> = (0..total).collect();
    let partials: Vec<Result<ControlGradient>> = indices
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = ControlGradient::zeros(net);
            for &i in chunk {
                let q = i / m_paths;
                let mut rng = StreamRng::substream(seed, i as u64);
                let bundle = bundle_for(controls, dataset, net, &loss_spec, scheme, q, &mut rng)?;
                let grad = pathwise_gradient(&bundle, controls, scheme, net.step_size)?;
                acc.add_assign(&grad);
            }
            Ok(acc)
        })
        .collect();
    let mut sum = ControlGradient::zeros(net);
    for partial in partials {
        sum.add_assign(&partial?);
    }
    sum.scale(1.0 / total as f64);
    Ok(sum)
}

/// Monte Carlo estimate of the expected terminal loss over the dataset and
/// `m_paths` noise draws per sample. Uses the same substream layout as
/// [`mc_gradient`] so the two can share common random numbers.
pub fn evaluate_cost(
    controls: &ControlPath,
    dataset: &Dataset,
    net: &NetConfig,
    m_paths: usize,
    seed: u64,
) -> Result<f64> {
    if m_paths == 0 {
        return Err(SmpError::config("monte carlo sample count must be >= 1"));
    }
    dataset.validate()?;
    let loss_spec = LossSpec {
        label_dim: net.label_dim,
    };
    let total = dataset.len() * m_paths;
    let indices: Vec<usize> = (0..total).collect();
    let partials: Vec<Result<f64>> = indices
        .par_chunks(256)
        .map(|chunk| {
            let mut acc = 0.0;
            for &i in chunk {
                let q = i / m_paths;
                let sample = &dataset.samples[q];
                let gamma = DVector::from_row_slice(&sample.label);
                let mut rng = StreamRng::substream(seed, i as u64);
                let path = simulate_path(&sample.input, controls, net, &mut rng)?;
                acc += loss_spec.loss(path.terminal(), &gamma)?;
            }
            Ok(acc)
        })
        .collect();
    let mut sum = 0.0;
    for partial in partials {
        sum += partial?;
    }
    Ok(sum / total as f64)
}
