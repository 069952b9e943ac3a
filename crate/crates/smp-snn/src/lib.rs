//! Stochastic neural networks trained by a stochastic-maximum-principle
//! method: forward Euler–Maruyama simulation of a controlled SDE, a
//! pathwise backward adjoint recursion, and single-sample stochastic
//! gradient descent on the layer controls.
//!
//! The crate is organized as:
//! - [`dynamics`]: network shape, controls, and the forward recursion;
//! - [`adjoint`]: the backward adjoint recursion and terminal condition;
//! - [`trainer`]: pathwise gradients, the SGD loop, and Monte Carlo
//!   gradient/cost estimators;
//! - [`tasks`]: synthetic dataset generators and the dataset file format;
//! - [`eval`]: predictive bands, classification metrics, weight surfaces,
//!   and parameter estimates;
//! - [`verify`]: finite-difference gradient verification;
//! - [`checkpoint`]: run configs and bit-exact training checkpoints;
//! - [`rng`]: seeded, substream-addressable random numbers.

pub mod adjoint;
pub mod checkpoint;
pub mod cli;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod rng;
pub mod tasks;
pub mod trainer;
pub mod verify;

pub use adjoint::{solve_adjoint, AdjointPath, LossSpec, Scheme};
pub use checkpoint::{Checkpoint, EvalConfig, PathsConfig, RunConfig};
pub use dynamics::{simulate_path, ControlPath, LayerControl, NetConfig, StatePath};
pub use error::{Result, SmpError};
pub use rng::{RngState, StreamRng};
pub use tasks::{generate, Dataset, Sample, TaskSpec};
pub use trainer::{
    evaluate_cost, init_controls, mc_gradient, train, ControlGradient, TrainConfig, TrainState,
};
pub use verify::{gradient_check, GradientCheck};
