//! Gradient verification against finite-difference oracles.
//!
//! Two independent checks: the exact pathwise check compares the left-point
//! gradient with central finite differences of the pathwise loss under a
//! frozen noise realization; the Monte Carlo check compares the averaged
//! gradient with finite differences of the cost estimate under common
//! random numbers. Both differentiate the same sampled function the
//! gradient routines see, so agreement is tight.

use nalgebra::DVector;
use serde::Serialize;

use crate::adjoint::{solve_adjoint, LossSpec, Scheme};
use crate::dynamics::{forward_step, ControlPath, NetConfig, StatePath};
use crate::error::{Result, SmpError};
use crate::rng::StreamRng;
use crate::tasks::Dataset;
use crate::trainer::{evaluate_cost, mc_gradient, pathwise_gradient, ControlGradient, TrajectoryBundle};

/// Replay the forward recursion under a fixed noise realization.
pub fn simulate_with_noises(
    x0: &DVector<f64>,
    controls: &ControlPath,
    noises: &[DVector<f64>],
    h: f64,
) -> Result<StatePath> {
    let mut states = Vec::with_capacity(noises.len() + 1);
    states.push(x0.clone());
    for (ctrl, omega) in controls.layers.iter().zip(noises) {
        let next = forward_step(states.last().unwrap(), ctrl, omega, h)?;
        states.push(next);
    }
    Ok(StatePath {
        states,
        noises: noises.to_vec(),
    })
}

/// Worst scaled error per parameter block of one layer.
#[derive(Clone, Debug, Serialize)]
pub struct BlockError {
    pub layer: usize,
    pub block: &'static str,
    pub max_scaled_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub errors: Vec<BlockError>,
    pub tolerance: f64,
    pub pass: bool,
    /// Worst offending block, when the check fails.
    pub worst: Option<String>,
}

fn summarize(errors: Vec<BlockError>, tolerance: f64) -> CheckReport {
    let worst = errors
        .iter()
        .max_by(|a, b| a.max_scaled_err.partial_cmp(&b.max_scaled_err).unwrap())
        .cloned();
    let pass = errors.iter().all(|e| e.max_scaled_err <= tolerance);
    CheckReport {
        errors,
        tolerance,
        pass,
        worst: worst
            .filter(|w| w.max_scaled_err > tolerance)
            .map(|w| format!("{} at layer {}", w.block, w.layer)),
    }
}

/// Scaled error `|a - b| / (|b| + floor)`: a tolerance `t` then means
/// `|a - b| <= t |b| + t * floor` (relative with an absolute floor near 0).
fn scaled_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (b.abs() + floor)
}

fn compare_blocks(
    analytic: &ControlGradient,
    numeric: &ControlGradient,
    floor: f64,
) -> Vec<BlockError> {
    let mut errors = Vec::new();
    for (n, (a, b)) in analytic.layers.iter().zip(&numeric.layers).enumerate() {
        let w = a
            .grad_w
            .iter()
            .zip(b.grad_w.iter())
            .map(|(&x, &y)| scaled_err(x, y, floor))
            .fold(0.0, f64::max);
        let bias = a
            .grad_b
            .iter()
            .zip(b.grad_b.iter())
            .map(|(&x, &y)| scaled_err(x, y, floor))
            .fold(0.0, f64::max);
        let sigma = a
            .grad_sigma
            .iter()
            .zip(b.grad_sigma.iter())
            .map(|(&x, &y)| scaled_err(x, y, floor))
            .fold(0.0, f64::max);
        errors.push(BlockError {
            layer: n,
            block: "gradW",
            max_scaled_err: w,
        });
        errors.push(BlockError {
            layer: n,
            block: "gradB",
            max_scaled_err: bias,
        });
        errors.push(BlockError {
            layer: n,
            block: "gradSigma",
            max_scaled_err: sigma,
        });
    }
    errors
}

/// Apply `f` to each scalar parameter of `controls` with a central
/// perturbation, assembling a finite-difference gradient.
fn finite_difference_gradient(
    controls: &ControlPath,
    net: &NetConfig,
    step: f64,
    mut f: impl FnMut(&ControlPath) -> Result<f64>,
) -> Result<ControlGradient> {
    let mut grad = ControlGradient::zeros(net);
    for n in 0..controls.layers.len() {
        for i in 0..net.width {
            for j in 0..net.width {
                let mut up = controls.clone();
                let mut down = controls.clone();
                up.layers[n].weights[(i, j)] += step;
                down.layers[n].weights[(i, j)] -= step;
                grad.layers[n].grad_w[(i, j)] = (f(&up)? - f(&down)?) / (2.0 * step);
            }
            let mut up = controls.clone();
            let mut down = controls.clone();
            up.layers[n].biases[i] += step;
            down.layers[n].biases[i] -= step;
            grad.layers[n].grad_b[i] = (f(&up)? - f(&down)?) / (2.0 * step);

            let mut up = controls.clone();
            let mut down = controls.clone();
            up.layers[n].sigma[i] += step;
            down.layers[n].sigma[i] -= step;
            grad.layers[n].grad_sigma[i] = (f(&up)? - f(&down)?) / (2.0 * step);
        }
    }
    Ok(grad)
}

/// Left-point pathwise gradient for a frozen noise realization.
pub fn exact_pathwise_gradient(
    x0: &DVector<f64>,
    controls: &ControlPath,
    net: &NetConfig,
    gamma: &DVector<f64>,
    noises: &[DVector<f64>],
) -> Result<ControlGradient> {
    let loss = LossSpec {
        label_dim: net.label_dim,
    };
    let path = simulate_with_noises(x0, controls, noises, net.step_size)?;
    let adjoint = solve_adjoint(&path, controls, gamma, &loss, Scheme::LeftPoint, net.step_size)?;
    pathwise_gradient(
        &TrajectoryBundle {
            state: path,
            adjoint,
        },
        controls,
        Scheme::LeftPoint,
        net.step_size,
    )
}

/// Exact pathwise check: left-point gradient vs central finite differences
/// of the pathwise loss `Phi(X_N, gamma)` under frozen noise.
pub fn pathwise_fd_check(
    x0: &DVector<f64>,
    controls: &ControlPath,
    net: &NetConfig,
    gamma: &DVector<f64>,
    noises: &[DVector<f64>],
    fd_step: f64,
    tolerance: f64,
    mutate: Option<&dyn Fn(&mut ControlGradient)>,
) -> Result<CheckReport> {
    let loss = LossSpec {
        label_dim: net.label_dim,
    };
    let mut analytic = exact_pathwise_gradient(x0, controls, net, gamma, noises)?;
    if let Some(mutate) = mutate {
        mutate(&mut analytic);
    }
    let numeric = finite_difference_gradient(controls, net, fd_step, |perturbed| {
        let path = simulate_with_noises(x0, perturbed, noises, net.step_size)?;
        loss.loss(path.terminal(), gamma)
    })?;
    Ok(summarize(compare_blocks(&analytic, &numeric, 1e-4), tolerance))
}

/// Monte Carlo check under common random numbers: averaged left-point
/// gradient vs central finite differences of the cost estimate at the same
/// seed.
pub fn mc_fd_check(
    controls: &ControlPath,
    net: &NetConfig,
    dataset: &Dataset,
    m_paths: usize,
    seed: u64,
    fd_step: f64,
    tolerance: f64,
    mutate: Option<&dyn Fn(&mut ControlGradient)>,
) -> Result<CheckReport> {
    let mut analytic = mc_gradient(controls, dataset, net, Scheme::LeftPoint, m_paths, seed)?;
    if let Some(mutate) = mutate {
        mutate(&mut analytic);
    }
    let numeric = finite_difference_gradient(controls, net, fd_step, |perturbed| {
        evaluate_cost(perturbed, dataset, net, m_paths, seed)
    })?;
    Ok(summarize(compare_blocks(&analytic, &numeric, 1e-4), tolerance))
}

/// The full verification gate on a small instance.
pub struct GradientCheck {
    pub pathwise: CheckReport,
    pub monte_carlo: CheckReport,
}

impl GradientCheck {
    pub fn pass(&self) -> bool {
        self.pathwise.pass && self.monte_carlo.pass
    }
}

pub fn gradient_check(
    net: &NetConfig,
    dataset: &Dataset,
    seed: u64,
    m_paths: usize,
    inject_sign_flip: bool,
) -> Result<GradientCheck> {
    if net.width > 4 || net.depth > 4 {
        return Err(SmpError::config(
            "gradient check requires a small instance (width <= 4, depth <= 4)",
        ));
    }
    let mut rng = StreamRng::new(seed);
    let controls = crate::trainer::init_controls(net, &mut rng);
    let sample = &dataset.samples[0];
    let x0 = crate::dynamics::embed_input(&sample.input, net)?;
    let gamma = DVector::from_row_slice(&sample.label);
    let noises: Vec<DVector<f64>> = (0..net.depth).map(|_| rng.normal_vec(net.width)).collect();
    let flip: Option<&dyn Fn(&mut ControlGradient)> = if inject_sign_flip {
        Some(&|g: &mut ControlGradient| {
            for layer in &mut g.layers {
                layer.grad_w *= -1.0;
            }
        })
    } else {
        None
    };
    let pathwise = pathwise_fd_check(&x0, &controls, net, &gamma, &noises, 1e-5, 1e-4, flip)?;
    let monte_carlo = mc_fd_check(&controls, net, dataset, m_paths, seed, 1e-4, 1e-2, flip)?;
    Ok(GradientCheck {
        pathwise,
        monte_carlo,
    })
}
