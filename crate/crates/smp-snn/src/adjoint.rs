//! Pathwise adjoint solver.
//!
//! Along one simulated state path the adjoint pair `(Y, Z)` solves the
//! backward recursion
//! `Y_n = Y_{n+1} + h * J^T Y_{n+1}`, `Z_n = Y_{n+1} (.) omega_n / sqrt(h)`,
//! started from the terminal condition `Y_N = Phi'_x(X_N, gamma)`. The
//! Jacobian `J` is evaluated either at the right point `(X_{n+1}, u_{n+1})`
//! (the default) or at the left point `(X_n, u_n)`, which makes the
//! assembled parameter gradient the exact derivative of the pathwise loss.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{drift_jacobian_state, ControlPath, LayerControl, StatePath};
use crate::error::{Result, SmpError};

/// Where the backward recursion evaluates the drift Jacobian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Jacobian at `(X_{n+1}, u_{n+1})`, with the control index clamped to
    /// `N-1` at the terminal step.
    #[default]
    RightPoint,
    /// Jacobian at `(X_n, u_n)`; exact discrete backpropagation.
    LeftPoint,
}

/// Quadratic loss on a fixed coordinate readout: `Phi(x, gamma) =
/// ||R x - gamma||^2` where `R` selects the first `label_dim` coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossSpec {
    pub label_dim: usize,
}

impl LossSpec {
    /// Apply the readout `R` to a state.
    pub fn readout(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.label_dim, |i, _| x[i])
    }

    /// Pathwise loss `||R x - gamma||^2`.
    pub fn loss(&self, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<f64> {
        self.check(x, gamma)?;
        let mut acc = 0.0;
        for i in 0..self.label_dim {
            let r = x[i] - gamma[i];
            acc += r * r;
        }
        Ok(acc)
    }

    fn check(&self, x: &DVector<f64>, gamma: &DVector<f64>) -> Result<()> {
        if gamma.len() != self.label_dim {
            return Err(SmpError::DimensionMismatch {
                context: "label vector",
                expected: self.label_dim,
                actual: gamma.len(),
            });
        }
        if x.len() < self.label_dim {
            return Err(SmpError::DimensionMismatch {
                context: "readout state",
                expected: self.label_dim,
                actual: x.len(),
            });
        }
        Ok(())
    }
}

/// Backward solution along one path: `Y_0..Y_N` and `Z_0..Z_{N-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointPath {
    pub y: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
}

/// Terminal condition `Y_N = Phi'_x(X_N, gamma) = 2 R^T (R x - gamma)`;
/// coordinates outside the readout are zero.
pub fn terminal_condition(
    x_terminal: &DVector<f64>,
    gamma: &DVector<f64>,
    loss: &LossSpec,
) -> Result<DVector<f64>> {
    loss.check(x_terminal, gamma)?;
    let mut y = DVector::zeros(x_terminal.len());
    for i in 0..loss.label_dim {
        y[i] = 2.0 * (x_terminal[i] - gamma[i]);
    }
    Ok(y)
}

/// One backward step `y + h * J^T y` with `J = f'_x(x_eval, ctrl)`.
pub fn backward_step(
    y_next: &DVector<f64>,
    x_eval: &DVector<f64>,
    ctrl: &LayerControl,
    h: f64,
) -> Result<DVector<f64>> {
    let jac = drift_jacobian_state(x_eval, ctrl)?;
    let y = y_next + h * jac.transpose() * y_next;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(SmpError::NonFinite {
            context: "backward step",
            iteration: None,
        });
    }
    Ok(y)
}

/// Martingale-term estimate `Z_n = Y_{n+1} sqrt(h) omega_n / h`,
/// componentwise under the diagonal diffusion.
pub fn z_estimate(y_next: &DVector<f64>, omega: &DVector<f64>, h: f64) -> DVector<f64> {
    let sqrt_h = h.sqrt();
    DVector::from_fn(y_next.len(), |i, _| y_next[i] * omega[i] / sqrt_h)
}

/// Solve the adjoint recursion backward along `path`.
pub fn solve_adjoint(
    path: &StatePath,
    controls: &ControlPath,
    gamma: &DVector<f64>,
    loss: &LossSpec,
    scheme: Scheme,
    h: f64,
) -> Result<AdjointPath> {
    let depth = path.depth();
    if controls.layers.len() != depth {
        return Err(SmpError::DimensionMismatch {
            context: "adjoint control depth",
            expected: depth,
            actual: controls.layers.len(),
        });
    }
    let mut y = vec![DVector::zeros(0); depth + 1];
    let mut z = vec![DVector::zeros(0); depth];
    y[depth] = terminal_condition(path.terminal(), gamma, loss)?;
    for n in (0..depth).rev() {
        let (x_eval, ctrl) = match scheme {
            // The right-point rule references u_{n+1}, which does not exist
            // at the terminal step; clamp to the last defined control.
            Scheme::RightPoint => (&path.states[n + 1], &controls.layers[(n + 1).min(depth - 1)]),
            Scheme::LeftPoint => (&path.states[n], &controls.layers[n]),
        };
        y[n] = backward_step(&y[n + 1], x_eval, ctrl, h)?;
        z[n] = z_estimate(&y[n + 1], &path.noises[n], h);
    }
    Ok(AdjointPath { y, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate_path, LayerControl, NetConfig};
    use crate::rng::StreamRng;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn layer(w: &[f64], b: &[f64], sigma: &[f64]) -> LayerControl {
        let d = b.len();
        LayerControl {
            weights: DMatrix::from_row_slice(d, d, w),
            biases: DVector::from_row_slice(b),
            sigma: DVector::from_row_slice(sigma),
        }
    }

    #[test]
    fn terminal_zero_residual_is_zero() {
        let loss = LossSpec { label_dim: 1 };
        let x = DVector::from_row_slice(&[0.5, 0.3]);
        let gamma = DVector::from_row_slice(&[0.5]);
        let y = terminal_condition(&x, &gamma, &loss).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn terminal_hand_evaluated() {
        let loss = LossSpec { label_dim: 1 };
        let x = DVector::from_row_slice(&[0.7, 0.3]);
        let gamma = DVector::from_row_slice(&[0.5]);
        let y = terminal_condition(&x, &gamma, &loss).unwrap();
        assert_relative_eq!(y[0], 0.4, max_relative = 1e-12);
        assert_eq!(y[1], 0.0);
    }

    #[test]
    fn terminal_is_linear_in_residual() {
        let loss = LossSpec { label_dim: 2 };
        let gamma = DVector::from_row_slice(&[0.1, -0.2]);
        let x1 = DVector::from_row_slice(&[0.4, 0.3, 9.0]);
        // Scale the residual by 3 around gamma.
        let x3 = DVector::from_row_slice(&[
            gamma[0] + 3.0 * (x1[0] - gamma[0]),
            gamma[1] + 3.0 * (x1[1] - gamma[1]),
            9.0,
        ]);
        let y1 = terminal_condition(&x1, &gamma, &loss).unwrap();
        let y3 = terminal_condition(&x3, &gamma, &loss).unwrap();
        for i in 0..2 {
            assert_relative_eq!(y3[i], 3.0 * y1[i], max_relative = 1e-12);
        }
    }

    #[test]
    fn backward_step_zero_adjoint_stays_zero() {
        let ctrl = layer(&[0.7, -0.1, 0.4, 0.2], &[0.1, 0.0], &[0.0; 2]);
        let y = backward_step(
            &DVector::zeros(2),
            &DVector::from_row_slice(&[0.3, -0.6]),
            &ctrl,
            1.0,
        )
        .unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_step_zero_jacobian_is_identity() {
        let ctrl = layer(&[0.0; 4], &[0.1, 0.2], &[0.0; 2]);
        let y_next = DVector::from_row_slice(&[1.5, -2.0]);
        let y = backward_step(&y_next, &DVector::zeros(2), &ctrl, 1.0).unwrap();
        assert_eq!(y, y_next);
    }

    #[test]
    fn backward_step_scalar_hand_evaluated() {
        // D=1, J = sigmoid'(0) * 1 = 0.25, h=1, y=1 -> 1.25
        let ctrl = layer(&[1.0], &[0.0], &[0.0]);
        let y = backward_step(
            &DVector::from_row_slice(&[1.0]),
            &DVector::zeros(1),
            &ctrl,
            1.0,
        )
        .unwrap();
        assert_relative_eq!(y[0], 1.25, max_relative = 1e-15);
    }

    #[test]
    fn z_estimate_zero_noise() {
        let z = z_estimate(
            &DVector::from_row_slice(&[1.0, -2.0]),
            &DVector::zeros(2),
            0.5,
        );
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn z_estimate_hand_evaluated() {
        let z = z_estimate(
            &DVector::from_row_slice(&[2.0]),
            &DVector::from_row_slice(&[0.5]),
            1.0,
        );
        assert_relative_eq!(z[0], 1.0, max_relative = 1e-15);
    }

    #[test]
    fn z_estimate_linear_in_adjoint() {
        let omega = DVector::from_row_slice(&[0.3, -1.2]);
        let y = DVector::from_row_slice(&[0.7, 0.4]);
        let z1 = z_estimate(&y, &omega, 0.25);
        let z2 = z_estimate(&(2.0 * &y), &omega, 0.25);
        for i in 0..2 {
            assert_relative_eq!(z2[i], 2.0 * z1[i], max_relative = 1e-15);
        }
    }

    fn small_net() -> (NetConfig, ControlPath) {
        let net = NetConfig {
            width: 2,
            depth: 3,
            step_size: 1.0,
            input_dim: 2,
            label_dim: 1,
        };
        let mut rng = StreamRng::new(31);
        let controls = ControlPath {
            layers: (0..3)
                .map(|_| layer(
                    &(0..4).map(|_| rng.normal()).collect::<Vec<_>>(),
                    &[0.05, 0.05],
                    &[0.02, 0.01],
                ))
                .collect(),
        };
        (net, controls)
    }

    #[test]
    fn zero_weights_transport_terminal_condition() {
        let net = NetConfig {
            width: 2,
            depth: 4,
            step_size: 1.0,
            input_dim: 2,
            label_dim: 1,
        };
        let controls = ControlPath {
            layers: vec![layer(&[0.0; 4], &[0.0; 2], &[0.05; 2]); 4],
        };
        let mut rng = StreamRng::new(2);
        let path = simulate_path(&[0.2, -0.1], &controls, &net, &mut rng).unwrap();
        let gamma = DVector::from_row_slice(&[1.0]);
        let loss = LossSpec { label_dim: 1 };
        let adj = solve_adjoint(&path, &controls, &gamma, &loss, Scheme::RightPoint, 1.0).unwrap();
        for n in 0..=4 {
            assert_eq!(adj.y[n], adj.y[4]);
        }
    }

    #[test]
    fn zero_terminal_residual_gives_zero_adjoint() {
        let (net, controls) = small_net();
        let mut rng = StreamRng::new(3);
        let path = simulate_path(&[0.1, 0.2], &controls, &net, &mut rng).unwrap();
        let gamma = DVector::from_row_slice(&[path.terminal()[0]]);
        let loss = LossSpec { label_dim: 1 };
        let adj = solve_adjoint(&path, &controls, &gamma, &loss, Scheme::RightPoint, 1.0).unwrap();
        assert!(adj.y.iter().all(|y| y.iter().all(|&v| v == 0.0)));
        assert!(adj.z.iter().all(|z| z.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn adjoint_scales_linearly_with_residual() {
        let (net, controls) = small_net();
        let mut rng = StreamRng::new(4);
        let path = simulate_path(&[0.1, 0.2], &controls, &net, &mut rng).unwrap();
        let loss = LossSpec { label_dim: 1 };
        let out = path.terminal()[0];
        let g1 = DVector::from_row_slice(&[out - 0.3]);
        let g2 = DVector::from_row_slice(&[out - 0.6]);
        let a1 = solve_adjoint(&path, &controls, &g1, &loss, Scheme::RightPoint, 1.0).unwrap();
        let a2 = solve_adjoint(&path, &controls, &g2, &loss, Scheme::RightPoint, 1.0).unwrap();
        for n in 0..=net.depth {
            for i in 0..net.width {
                assert_relative_eq!(a2.y[n][i], 2.0 * a1.y[n][i], max_relative = 1e-12);
            }
        }
        for n in 0..net.depth {
            for i in 0..net.width {
                assert_relative_eq!(a2.z[n][i], 2.0 * a1.z[n][i], max_relative = 1e-12);
            }
        }
    }

    /// `z[n] * sqrt(h) = y[n+1] (.) omega_n` as stored.
    #[test]
    fn z_identity_holds() {
        let (mut net, controls) = small_net();
        net.step_size = 0.5;
        let mut rng = StreamRng::new(5);
        let path = simulate_path(&[0.4, -0.2], &controls, &net, &mut rng).unwrap();
        let gamma = DVector::from_row_slice(&[0.9]);
        let loss = LossSpec { label_dim: 1 };
        let adj = solve_adjoint(&path, &controls, &gamma, &loss, Scheme::RightPoint, 0.5).unwrap();
        let sqrt_h = 0.5f64.sqrt();
        for n in 0..net.depth {
            for i in 0..net.width {
                assert_relative_eq!(
                    adj.z[n][i] * sqrt_h,
                    adj.y[n + 1][i] * path.noises[n][i],
                    max_relative = 1e-14,
                    epsilon = 1e-300
                );
            }
        }
    }

    /// Halving h roughly halves the right-vs-left scheme gap (first order).
    #[test]
    fn scheme_gap_is_first_order_in_h() {
        // Time-constant control and zero diffusion keep the continuous
        // problem fixed while h is refined.
        let mut rng = StreamRng::new(61);
        let base = layer(
            &(0..4).map(|_| 0.8 * rng.normal()).collect::<Vec<_>>(),
            &[0.05, 0.05],
            &[0.0, 0.0],
        );
        let gap = move |h: f64| -> f64 {
            let net = NetConfig {
                width: 2,
                depth: (1.2 / h).round() as usize,
                step_size: h,
                input_dim: 2,
                label_dim: 1,
            };
            let controls = ControlPath {
                layers: vec![base.clone(); net.depth],
            };
            let path = simulate_path(&[0.3, 0.1], &controls, &net, &mut StreamRng::new(9)).unwrap();
            let gamma = DVector::from_row_slice(&[2.0]);
            let loss = LossSpec { label_dim: 1 };
            let right =
                solve_adjoint(&path, &controls, &gamma, &loss, Scheme::RightPoint, h).unwrap();
            let left =
                solve_adjoint(&path, &controls, &gamma, &loss, Scheme::LeftPoint, h).unwrap();
            (0..net.width)
                .map(|i| (right.y[0][i] - left.y[0][i]).abs())
                .fold(0.0, f64::max)
        };
        let ratio = gap(0.2) / gap(0.1);
        assert!(
            (1.5..=2.5).contains(&ratio),
            "scheme gap ratio {ratio} not first order"
        );
    }
}
