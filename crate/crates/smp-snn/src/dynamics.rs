//! Layer dynamics of the stochastic residual network.
//!
//! A depth-`N` network propagates the state by
//! `X_{n+1} = X_n + h * sigmoid(W_n X_n + b_n) + sqrt(h) * sigma_n (.) omega_n`
//! with `omega_n` i.i.d. standard Gaussian vectors. This module owns the
//! drift, its Jacobians and parameter gradients, and forward path simulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};
use crate::rng::StreamRng;

/// Network shape shared by every component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Neurons per layer (state dimension).
    pub width: usize,
    /// Number of layers / time steps.
    pub depth: usize,
    /// Time increment per layer.
    pub step_size: f64,
    pub input_dim: usize,
    pub label_dim: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(SmpError::config("width and depth must be positive"));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(SmpError::config("step_size must be a positive finite real"));
        }
        if self.input_dim == 0 || self.input_dim > self.width {
            return Err(SmpError::config("input_dim must satisfy 1 <= input_dim <= width"));
        }
        if self.label_dim == 0 || self.label_dim > self.width {
            return Err(SmpError::config("label_dim must satisfy 1 <= label_dim <= width"));
        }
        Ok(())
    }

    /// Total horizon `T = N * h`.
    pub fn horizon(&self) -> f64 {
        self.depth as f64 * self.step_size
    }
}

/// Per-layer control `u_n = (W_n, b_n, sigma_n)`.
///
/// The diffusion is diagonal: one coefficient per neuron. Entries of `sigma`
/// are unconstrained in sign; the effective noise level is `|sigma|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerControl {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub sigma: DVector<f64>,
}

impl LayerControl {
    pub fn zeros(width: usize) -> Self {
        Self {
            weights: DMatrix::zeros(width, width),
            biases: DVector::zeros(width),
            sigma: DVector::zeros(width),
        }
    }

    pub fn width(&self) -> usize {
        self.biases.len()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
            && self.sigma.iter().all(|v| v.is_finite())
    }
}

/// The full control sequence `{u_n}`, `n = 0..N-1`; the object being optimized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlPath {
    pub layers: Vec<LayerControl>,
}

impl ControlPath {
    pub fn conforms(&self, net: &NetConfig) -> Result<()> {
        if self.layers.len() != net.depth {
            return Err(SmpError::DimensionMismatch {
                context: "control path depth",
                expected: net.depth,
                actual: self.layers.len(),
            });
        }
        for layer in &self.layers {
            if layer.width() != net.width
                || layer.weights.nrows() != net.width
                || layer.weights.ncols() != net.width
                || layer.sigma.len() != net.width
            {
                return Err(SmpError::DimensionMismatch {
                    context: "layer control width",
                    expected: net.width,
                    actual: layer.width(),
                });
            }
        }
        Ok(())
    }
}

/// One forward realization: states `X_0..X_N` and the noises that drove them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePath {
    pub states: Vec<DVector<f64>>,
    pub noises: Vec<DVector<f64>>,
}

impl StatePath {
    pub fn depth(&self) -> usize {
        self.noises.len()
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("state path is never empty")
    }
}

/// Componentwise logistic function; output entries are strictly in (0, 1).
pub fn sigmoid(z: &DVector<f64>) -> DVector<f64> {
    z.map(sigmoid_scalar)
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_state_dim(x: &DVector<f64>, ctrl: &LayerControl) -> Result<()> {
    if x.len() != ctrl.width() {
        return Err(SmpError::DimensionMismatch {
            context: "state vector",
            expected: ctrl.width(),
            actual: x.len(),
        });
    }
    Ok(())
}

/// Drift `f(x, u) = sigmoid(W x + b)`.
pub fn drift(x: &DVector<f64>, ctrl: &LayerControl) -> Result<DVector<f64>> {
    check_state_dim(x, ctrl)?;
    let pre = &ctrl.weights * x + &ctrl.biases;
    Ok(sigmoid(&pre))
}

/// State Jacobian of the drift: `J_ij = s_i (1 - s_i) W_ij` with
/// `s = sigmoid(W x + b)`.
pub fn drift_jacobian_state(x: &DVector<f64>, ctrl: &LayerControl) -> Result<DMatrix<f64>> {
    check_state_dim(x, ctrl)?;
    let s = drift(x, ctrl)?;
    let mut jac = ctrl.weights.clone();
    for i in 0..jac.nrows() {
        let scale = s[i] * (1.0 - s[i]);
        for j in 0..jac.ncols() {
            jac[(i, j)] *= scale;
        }
    }
    Ok(jac)
}

/// Gradients of `y . f(x, u)` with respect to `W` and `b`.
///
/// With `v = s (.) (1 - s) (.) y`: `gradW = v x^T`, `gradB = v`.
pub fn drift_param_gradient(
    x: &DVector<f64>,
    ctrl: &LayerControl,
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_state_dim(x, ctrl)?;
    if y.len() != ctrl.width() {
        return Err(SmpError::DimensionMismatch {
            context: "adjoint vector",
            expected: ctrl.width(),
            actual: y.len(),
        });
    }
    let s = drift(x, ctrl)?;
    let v = DVector::from_fn(s.len(), |i, _| s[i] * (1.0 - s[i]) * y[i]);
    let grad_w = &v * x.transpose();
    Ok((grad_w, v))
}

/// Gradient of the diffusion term with respect to the diagonal entries of
/// `sigma`; for `g(u) = diag(sigma)` this is the adjoint `z` itself.
pub fn diffusion_gradient(z: &DVector<f64>) -> DVector<f64> {
    z.clone()
}

/// One Euler-Maruyama step:
/// `x + h * f(x, u) + sqrt(h) * sigma (.) omega`.
pub fn forward_step(
    x: &DVector<f64>,
    ctrl: &LayerControl,
    omega: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    let f = drift(x, ctrl)?;
    let sqrt_h = h.sqrt();
    let next = DVector::from_fn(x.len(), |i, _| {
        x[i] + h * f[i] + sqrt_h * ctrl.sigma[i] * omega[i]
    });
    if next.iter().any(|v| !v.is_finite()) {
        return Err(SmpError::NonFinite {
            context: "forward step",
            iteration: None,
        });
    }
    Ok(next)
}

/// Embed an `input_dim`-vector into the first coordinates of a width-`D`
/// state; remaining coordinates start at zero.
pub fn embed_input(x0: &[f64], net: &NetConfig) -> Result<DVector<f64>> {
    if x0.len() != net.input_dim {
        return Err(SmpError::DimensionMismatch {
            context: "input vector",
            expected: net.input_dim,
            actual: x0.len(),
        });
    }
    let mut state = DVector::zeros(net.width);
    for (i, v) in x0.iter().enumerate() {
        state[i] = *v;
    }
    Ok(state)
}

/// Simulate one forward realization, drawing a fresh standard Gaussian noise
/// vector per layer and recording both states and noises for exact replay.
pub fn simulate_path(
    x0: &[f64],
    controls: &ControlPath,
    net: &NetConfig,
    rng: &mut StreamRng,
) -> Result<StatePath> {
    let mut states = Vec::with_capacity(net.depth + 1);
    let mut noises = Vec::with_capacity(net.depth);
    states.push(embed_input(x0, net)?);
    for ctrl in &controls.layers {
        let omega = rng.normal_vec(net.width);
        let next = forward_step(states.last().unwrap(), ctrl, &omega, net.step_size)?;
        states.push(next);
        noises.push(omega);
    }
    Ok(StatePath { states, noises })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn layer(w: &[f64], b: &[f64], sigma: &[f64]) -> LayerControl {
        let d = b.len();
        LayerControl {
            weights: DMatrix::from_row_slice(d, d, w),
            biases: DVector::from_row_slice(b),
            sigma: DVector::from_row_slice(sigma),
        }
    }

    #[test]
    fn sigmoid_at_origin_is_half() {
        let out = sigmoid(&DVector::from_row_slice(&[0.0, 0.0, 0.0]));
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn sigmoid_symmetry_identity() {
        for &z in &[1.7, -0.3] {
            let s = sigmoid_scalar(z) + sigmoid_scalar(-z);
            assert_relative_eq!(s, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn sigmoid_at_two() {
        // 1 / (1 + e^{-2}) evaluated with high-precision arithmetic.
        assert_relative_eq!(sigmoid_scalar(2.0), 0.8807970779778823, max_relative = 1e-15);
    }

    #[test]
    fn sigmoid_saturates_without_overflow() {
        assert_eq!(sigmoid_scalar(1e4), 1.0);
        assert_eq!(sigmoid_scalar(-1e4), 0.0);
    }

    #[test]
    fn drift_zero_params_is_half() {
        let ctrl = layer(&[0.0, 0.0, 0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]);
        let x = DVector::from_row_slice(&[3.0, -1.0]);
        let out = drift(&x, &ctrl).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn drift_identity_weights_zero_state() {
        let ctrl = layer(&[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        let x = DVector::zeros(2);
        let out = drift(&x, &ctrl).unwrap();
        assert!(out.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn drift_matches_scalar_evaluation() {
        let mut rng = StreamRng::new(11);
        let ctrl = layer(
            &(0..9).map(|_| rng.normal()).collect::<Vec<_>>(),
            &[0.3, -0.2, 0.7],
            &[0.0; 3],
        );
        let x = rng.normal_vec(3);
        let out = drift(&x, &ctrl).unwrap();
        for i in 0..3 {
            let mut pre = ctrl.biases[i];
            for j in 0..3 {
                pre += ctrl.weights[(i, j)] * x[j];
            }
            assert_relative_eq!(out[i], 1.0 / (1.0 + (-pre).exp()), max_relative = 1e-14);
        }
    }

    #[test]
    fn drift_dimension_mismatch_rejected() {
        let ctrl = layer(&[0.0; 4], &[0.0; 2], &[0.0; 2]);
        let x = DVector::zeros(3);
        assert!(drift(&x, &ctrl).is_err());
    }

    #[test]
    fn jacobian_zero_weights_is_zero() {
        let ctrl = layer(&[0.0; 4], &[0.4, -0.1], &[0.0; 2]);
        let x = DVector::from_row_slice(&[1.0, 2.0]);
        let jac = drift_jacobian_state(&x, &ctrl).unwrap();
        assert!(jac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jacobian_scalar_quarter_at_origin() {
        let ctrl = layer(&[1.0], &[0.0], &[0.0]);
        let x = DVector::zeros(1);
        let jac = drift_jacobian_state(&x, &ctrl).unwrap();
        assert_relative_eq!(jac[(0, 0)], 0.25, max_relative = 1e-15);
    }

    /// Central finite-difference oracle for the state Jacobian.
    #[test]
    fn jacobian_matches_finite_differences() {
        let step = 1e-5;
        let mut rng = StreamRng::new(91);
        for _ in 0..100 {
            let d = 3;
            let ctrl = layer(
                &(0..d * d).map(|_| rng.normal()).collect::<Vec<_>>(),
                &(0..d).map(|_| rng.normal()).collect::<Vec<_>>(),
                &vec![0.0; d],
            );
            let x = rng.normal_vec(d);
            let jac = drift_jacobian_state(&x, &ctrl).unwrap();
            for j in 0..d {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let fp = drift(&xp, &ctrl).unwrap();
                let fm = drift(&xm, &ctrl).unwrap();
                for i in 0..d {
                    let fd = (fp[i] - fm[i]) / (2.0 * step);
                    assert!((jac[(i, j)] - fd).abs() < 1e-6, "entry ({i},{j})");
                }
            }
        }
    }

    /// Central finite-difference oracle for the parameter gradients of
    /// `y . f(x, u)`.
    #[test]
    fn param_gradient_matches_finite_differences() {
        let step = 1e-5;
        let mut rng = StreamRng::new(17);
        for _ in 0..100 {
            let d = 3;
            let ctrl = layer(
                &(0..d * d).map(|_| rng.normal()).collect::<Vec<_>>(),
                &(0..d).map(|_| rng.normal()).collect::<Vec<_>>(),
                &vec![0.0; d],
            );
            let x = rng.normal_vec(d);
            let y = rng.normal_vec(d);
            let (grad_w, grad_b) = drift_param_gradient(&x, &ctrl, &y).unwrap();
            let dot = |c: &LayerControl| drift(&x, c).unwrap().dot(&y);
            for i in 0..d {
                for j in 0..d {
                    let mut cp = ctrl.clone();
                    let mut cm = ctrl.clone();
                    cp.weights[(i, j)] += step;
                    cm.weights[(i, j)] -= step;
                    let fd = (dot(&cp) - dot(&cm)) / (2.0 * step);
                    assert!((grad_w[(i, j)] - fd).abs() < 1e-6, "W ({i},{j})");
                }
                let mut cp = ctrl.clone();
                let mut cm = ctrl.clone();
                cp.biases[i] += step;
                cm.biases[i] -= step;
                let fd = (dot(&cp) - dot(&cm)) / (2.0 * step);
                assert!((grad_b[i] - fd).abs() < 1e-6, "b ({i})");
            }
        }
    }

    #[test]
    fn param_gradient_zero_adjoint() {
        let ctrl = layer(&[0.5, -0.3, 0.2, 0.9], &[0.1, 0.2], &[0.0; 2]);
        let x = DVector::from_row_slice(&[1.0, -2.0]);
        let (grad_w, grad_b) = drift_param_gradient(&x, &ctrl, &DVector::zeros(2)).unwrap();
        assert!(grad_w.iter().all(|&v| v == 0.0));
        assert!(grad_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn param_gradient_zero_state_zeroes_weights() {
        let ctrl = layer(&[0.5, -0.3, 0.2, 0.9], &[0.1, 0.2], &[0.0; 2]);
        let y = DVector::from_row_slice(&[1.0, 2.0]);
        let (grad_w, _) = drift_param_gradient(&DVector::zeros(2), &ctrl, &y).unwrap();
        assert!(grad_w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diffusion_gradient_is_identity() {
        let z = DVector::from_row_slice(&[1.0, 0.0, -2.5]);
        assert_eq!(diffusion_gradient(&z), z);
    }

    #[test]
    fn forward_step_pure_drift() {
        let ctrl = layer(&[0.0], &[0.0], &[0.0]);
        let x = DVector::zeros(1);
        let out = forward_step(&x, &ctrl, &DVector::zeros(1), 1.0).unwrap();
        assert_eq!(out[0], 0.5);
    }

    #[test]
    fn forward_step_hand_evaluated() {
        let ctrl = layer(&[0.0], &[0.0], &[0.01]);
        let x = DVector::zeros(1);
        let omega = DVector::from_row_slice(&[1.0]);
        let out = forward_step(&x, &ctrl, &omega, 1.0).unwrap();
        assert_relative_eq!(out[0], 0.51, max_relative = 1e-15);
    }

    #[test]
    fn forward_step_rejects_non_finite() {
        let ctrl = layer(&[0.0], &[0.0], &[f64::MAX]);
        let x = DVector::zeros(1);
        let omega = DVector::from_row_slice(&[f64::MAX]);
        assert!(forward_step(&x, &ctrl, &omega, 1.0).is_err());
    }

    #[test]
    fn simulate_zero_diffusion_is_deterministic() {
        let net = NetConfig {
            width: 1,
            depth: 2,
            step_size: 1.0,
            input_dim: 1,
            label_dim: 1,
        };
        let controls = ControlPath {
            layers: vec![layer(&[0.0], &[0.0], &[0.0]); 2],
        };
        let mut rng_a = StreamRng::new(1);
        let mut rng_b = StreamRng::new(999);
        let pa = simulate_path(&[0.0], &controls, &net, &mut rng_a).unwrap();
        let pb = simulate_path(&[0.0], &controls, &net, &mut rng_b).unwrap();
        assert_eq!(pa.states, pb.states);
        assert_eq!(pa.states[0][0], 0.0);
        assert_eq!(pa.states[1][0], 0.5);
        assert_eq!(pa.states[2][0], 1.0);
    }

    #[test]
    fn simulate_fixed_seed_is_reproducible() {
        let net = NetConfig {
            width: 2,
            depth: 3,
            step_size: 0.5,
            input_dim: 2,
            label_dim: 1,
        };
        let mut rng = StreamRng::new(5);
        let controls = ControlPath {
            layers: (0..3)
                .map(|_| layer(
                    &(0..4).map(|_| rng.normal()).collect::<Vec<_>>(),
                    &[0.05, 0.05],
                    &[0.01, 0.01],
                ))
                .collect(),
        };
        let pa = simulate_path(&[0.3, -0.4], &controls, &net, &mut StreamRng::new(8)).unwrap();
        let pb = simulate_path(&[0.3, -0.4], &controls, &net, &mut StreamRng::new(8)).unwrap();
        assert_eq!(pa, pb);
    }

    /// Replay invariant: each stored transition reproduces bit-exactly.
    #[test]
    fn replay_reproduces_states() {
        let net = NetConfig {
            width: 3,
            depth: 4,
            step_size: 1.0,
            input_dim: 2,
            label_dim: 1,
        };
        let mut rng = StreamRng::new(23);
        let controls = ControlPath {
            layers: (0..4)
                .map(|_| layer(
                    &(0..9).map(|_| rng.normal()).collect::<Vec<_>>(),
                    &[0.05; 3],
                    &[0.01; 3],
                ))
                .collect(),
        };
        let path = simulate_path(&[0.1, 0.9], &controls, &net, &mut rng).unwrap();
        for n in 0..net.depth {
            let redo = forward_step(
                &path.states[n],
                &controls.layers[n],
                &path.noises[n],
                net.step_size,
            )
            .unwrap();
            assert_eq!(redo, path.states[n + 1]);
        }
    }

    #[test]
    fn drift_outputs_within_unit_interval() {
        let mut rng = StreamRng::new(77);
        for _ in 0..50 {
            let ctrl = layer(
                &(0..4).map(|_| 10.0 * rng.normal()).collect::<Vec<_>>(),
                &(0..2).map(|_| 10.0 * rng.normal()).collect::<Vec<_>>(),
                &[0.0; 2],
            );
            let x = rng.normal_vec(2) * 10.0;
            let out = drift(&x, &ctrl).unwrap();
            assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}
