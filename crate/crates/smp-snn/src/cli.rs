//! Command-line front end: `generate-data`, `train`, `evaluate`, and
//! `gradient-check`, wired around one JSON run config.
//!
//! Exit codes: 0 success, 1 verification/tolerance/numeric failure,
//! 2 usage or config error, 3 I/O or data error.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::adjoint::Scheme;
use crate::checkpoint::{read_json, write_json, Checkpoint, RunConfig};
use crate::error::{Result, SmpError};
use crate::eval::{
    band_on_interval, classification_metrics, curve_metrics, param_estimate, weight_surface, Band,
};
use crate::rng::StreamRng;
use crate::tasks::{self, param_model, TaskSpec};
use crate::trainer::{init_controls, train_steps, TrainState, TrainingLog, TrainingRecord};
use crate::verify::gradient_check;

#[derive(Parser)]
#[command(
    name = "smp-snn",
    about = "Train stochastic neural networks by stochastic-maximum-principle SGD",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SchemeArg {
    Right,
    Left,
}

impl From<SchemeArg> for Scheme {
    fn from(value: SchemeArg) -> Self {
        match value {
            SchemeArg::Right => Scheme::RightPoint,
            SchemeArg::Left => Scheme::LeftPoint,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the command-relevant seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides paths.out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; never changes numerical results.
    #[arg(long)]
    workers: Option<usize>,
    /// Backward-scheme override.
    #[arg(long)]
    scheme: Option<SchemeArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a task dataset file.
    GenerateData {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train a network on a dataset file and emit a checkpoint.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Dataset file (overrides paths.dataset).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Resume from a snapshot checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a trained checkpoint and write report files.
    Evaluate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Verify gradients against finite-difference oracles on a small instance.
    GradientCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Monte Carlo paths per dataset sample for the averaged check.
        #[arg(long, default_value_t = 10_000)]
        mc_paths: usize,
        /// Test-harness hook: corrupt the weight gradient before comparison.
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

fn exit_code(err: &SmpError) -> i32 {
    match err {
        SmpError::Config(_) | SmpError::DimensionMismatch { .. } => 2,
        SmpError::NonFinite { .. } => 1,
        SmpError::Io { .. } | SmpError::Parse { .. } => 3,
    }
}

fn error_class(err: &SmpError) -> &'static str {
    match err {
        SmpError::Config(_) | SmpError::DimensionMismatch { .. } => "config",
        SmpError::NonFinite { .. } => "numeric",
        SmpError::Io { .. } => "io",
        SmpError::Parse { .. } => "data",
    }
}

pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenerateData { common } => with_common(&common, cmd_generate_data),
        Command::Train {
            ref common,
            ref data,
            ref resume,
        } => with_common(common, |cfg, out| {
            cmd_train(cfg, out, data.as_deref(), resume.as_deref())
        }),
        Command::Evaluate {
            ref common,
            ref checkpoint,
        } => with_common(common, |cfg, out| cmd_evaluate(cfg, out, checkpoint)),
        Command::GradientCheck {
            ref common,
            mc_paths,
            inject_sign_flip,
        } => with_common(common, |cfg, out| {
            cmd_gradient_check(cfg, out, mc_paths, inject_sign_flip)
        }),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error[{}]: {err}", error_class(&err));
            exit_code(&err)
        }
    }
}

/// Load the config, apply flag overrides, set up the worker pool, and make
/// sure the output directory exists.
fn with_common(
    common: &CommonArgs,
    f: impl FnOnce(&RunConfig, &Path) -> Result<i32>,
) -> Result<i32> {
    if let Some(workers) = common.workers {
        // Ignore failure: the global pool can only be set once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    let mut config: RunConfig = read_json(&common.config)?;
    if let Some(scheme) = common.scheme {
        config.train.scheme = scheme.into();
    }
    if let Some(seed) = common.seed {
        apply_seed_override(&mut config, seed);
    }
    config.validate()?;
    let out_dir = common
        .out
        .clone()
        .or_else(|| config.paths.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| SmpError::io(out_dir.display().to_string(), e))?;
    f(&config, &out_dir)
}

fn apply_seed_override(config: &mut RunConfig, seed: u64) {
    config.train.seed = seed;
    match &mut config.task {
        TaskSpec::CircleClassification { seed: s, .. }
        | TaskSpec::CubicRegression { seed: s, .. }
        | TaskSpec::TanRegression { seed: s, .. }
        | TaskSpec::ParamEstimation { seed: s, .. } => *s = seed,
    }
}

fn dataset_path(config: &RunConfig, out_dir: &Path) -> PathBuf {
    config
        .paths
        .dataset
        .clone()
        .unwrap_or_else(|| out_dir.join("dataset.json"))
}

fn cmd_generate_data(config: &RunConfig, out_dir: &Path) -> Result<i32> {
    let dataset = tasks::generate(&config.task)?;
    let path = dataset_path(config, out_dir);
    tasks::write_dataset(&dataset, &path)?;
    println!(
        "wrote {} records (task={}, input_dim={}, label_dim={}, seed={}) to {}",
        dataset.len(),
        dataset.task.name(),
        dataset.input_dim,
        dataset.label_dim,
        dataset.task.seed(),
        path.display()
    );
    Ok(0)
}

fn write_training_log(log: &TrainingLog, path: &Path) -> Result<()> {
    let mut text = String::from("iteration,sample_index,loss,grad_norm,learning_rate\n");
    for TrainingRecord {
        iteration,
        sample_index,
        loss,
        grad_norm,
        learning_rate,
    } in log
    {
        writeln!(
            text,
            "{iteration},{sample_index},{loss},{grad_norm},{learning_rate}"
        )
        .expect("string write");
    }
    fs::write(path, text).map_err(|e| SmpError::io(path.display().to_string(), e))
}

fn checkpoint_from(state: &TrainState, config: &RunConfig) -> Checkpoint {
    Checkpoint {
        net: config.net.clone(),
        controls: state.controls.clone(),
        iteration: state.iteration,
        rng_state: state.rng.state(),
        config_hash: config.digest(),
    }
}

fn cmd_train(
    config: &RunConfig,
    out_dir: &Path,
    data: Option<&Path>,
    resume: Option<&Path>,
) -> Result<i32> {
    let data_path = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dataset_path(config, out_dir));
    let dataset = tasks::read_dataset(&data_path)?;
    let mut state = match resume {
        Some(path) => {
            let snapshot: Checkpoint = read_json(path)?;
            if snapshot.config_hash != config.digest() {
                return Err(SmpError::config(format!(
                    "snapshot {} was produced by a different config",
                    path.display()
                )));
            }
            TrainState::restore(snapshot.controls, snapshot.iteration, &snapshot.rng_state)
        }
        None => {
            let mut rng = StreamRng::substream(config.train.seed, u64::MAX);
            TrainState::new(&config.train, init_controls(&config.net, &mut rng))
        }
    };
    let mut log = TrainingLog::new();
    let result = train_steps(
        &mut state,
        &dataset,
        &config.net,
        &config.train,
        &mut log,
        |snapshot_state| {
            let path = out_dir.join(format!("snapshot_{:08}.json", snapshot_state.iteration));
            write_json(&checkpoint_from(snapshot_state, config), &path)
        },
    );
    // Preserve whatever log exists even when training aborts.
    write_training_log(&log, &out_dir.join("training_log.csv"))?;
    result?;
    let checkpoint = checkpoint_from(&state, config);
    write_json(&checkpoint, &out_dir.join("checkpoint.json"))?;
    println!(
        "trained {} iterations; checkpoint at {}",
        state.iteration,
        out_dir.join("checkpoint.json").display()
    );
    Ok(0)
}

fn write_band_csv(band: &Band, path: &Path) -> Result<()> {
    let mut text = String::from("x,mean,lower,upper\n");
    for i in 0..band.grid.len() {
        writeln!(
            text,
            "{},{},{},{}",
            band.grid[i], band.mean[i], band.lower[i], band.upper[i]
        )
        .expect("string write");
    }
    fs::write(path, text).map_err(|e| SmpError::io(path.display().to_string(), e))
}

fn regression_reference(task: &TaskSpec, grid: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(grid.len());
    let mut lower = Vec::with_capacity(grid.len());
    let mut upper = Vec::with_capacity(grid.len());
    for &x in grid {
        let (m, std) = match *task {
            TaskSpec::CubicRegression { noise_std, .. } => (2.0 + (1.0 + x).powi(3), noise_std),
            TaskSpec::TanRegression { sigma, .. } => {
                let m = 1.0 + (1.3 * x).tan();
                (m, sigma * m)
            }
            _ => unreachable!("regression reference for regression tasks only"),
        };
        mean.push(m);
        lower.push(m - 1.96 * std);
        upper.push(m + 1.96 * std);
    }
    (mean, lower, upper)
}

fn cmd_evaluate(config: &RunConfig, out_dir: &Path, checkpoint_path: &Path) -> Result<i32> {
    let checkpoint: Checkpoint = read_json(checkpoint_path)?;
    if checkpoint.net != config.net {
        return Err(SmpError::config(
            "checkpoint network shape does not match the config",
        ));
    }
    checkpoint.controls.conforms(&config.net)?;
    let eval = &config.eval;
    let controls = &checkpoint.controls;
    let net = &config.net;
    let metrics_path = out_dir.join("metrics.json");
    match &config.task {
        TaskSpec::CircleClassification {
            radius, noise_frac, ..
        } => {
            let testset = tasks::generate(&TaskSpec::CircleClassification {
                count: eval.test_count,
                seed: eval.seed.wrapping_add(0x7e57),
                radius: *radius,
                noise_frac: *noise_frac,
            })?;
            let metrics =
                classification_metrics(controls, net, &testset, eval.votes, 0.5, eval.seed)?;
            let surface = weight_surface(
                controls,
                net,
                eval.surface_resolution,
                eval.surface_samples,
                eval.seed.wrapping_add(1),
            )?;
            let mut text = String::from("x,y,mean_weight\n");
            for (idx, v) in surface.values.iter().enumerate() {
                let (iy, ix) = (idx / surface.resolution, idx % surface.resolution);
                writeln!(text, "{},{},{}", surface.xs[ix], surface.ys[iy], v)
                    .expect("string write");
            }
            let surface_path = out_dir.join("surface.csv");
            fs::write(&surface_path, text)
                .map_err(|e| SmpError::io(surface_path.display().to_string(), e))?;
            write_json(&metrics, &metrics_path)?;
            println!(
                "accuracy {:.4} (outside 2-sigma band {:.4}); reports in {}",
                metrics.accuracy,
                metrics.accuracy_outside_band,
                out_dir.display()
            );
        }
        task @ (TaskSpec::CubicRegression { .. } | TaskSpec::TanRegression { .. }) => {
            let band = band_on_interval(
                controls,
                net,
                (0.0, 1.0),
                eval.grid_resolution,
                eval.samples,
                eval.band_level,
                eval.seed,
            )?;
            let (true_mean, true_lower, true_upper) = regression_reference(task, &band.grid);
            let metrics = curve_metrics(&band, &true_mean, (&true_lower, &true_upper))?;
            write_band_csv(&band, &out_dir.join("band.csv"))?;
            write_json(&metrics, &metrics_path)?;
            println!(
                "rmse {:.4}, coverage {:.3}, mean half-width {:.4}; reports in {}",
                metrics.rmse,
                metrics.coverage,
                metrics.mean_half_width,
                out_dir.display()
            );
        }
        TaskSpec::ParamEstimation {
            model_noise_std,
            x_center,
            x_std,
            ..
        } => {
            let observations = generate_observations(
                eval.true_alpha,
                eval.observations,
                *model_noise_std,
                *x_center,
                *x_std,
                eval.seed.wrapping_add(0x0b5),
            );
            let estimate = param_estimate(controls, net, &observations, eval.samples, eval.seed)?;
            let mut sorted = estimate.pooled_samples.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = sorted[(0.025 * (sorted.len() - 1) as f64).round() as usize];
            let hi = sorted[(0.975 * (sorted.len() - 1) as f64).round() as usize];
            #[derive(serde::Serialize)]
            struct ParamReport {
                true_alpha: f64,
                point_estimate: f64,
                central_95_low: f64,
                central_95_high: f64,
                pooled_count: usize,
            }
            write_json(
                &ParamReport {
                    true_alpha: eval.true_alpha,
                    point_estimate: estimate.point_estimate,
                    central_95_low: lo,
                    central_95_high: hi,
                    pooled_count: sorted.len(),
                },
                &metrics_path,
            )?;
            let mut text = String::from("sample\n");
            for v in &estimate.pooled_samples {
                writeln!(text, "{v}").expect("string write");
            }
            let samples_path = out_dir.join("param_samples.csv");
            fs::write(&samples_path, text)
                .map_err(|e| SmpError::io(samples_path.display().to_string(), e))?;
            println!(
                "estimated alpha {:.4} (true {}); reports in {}",
                estimate.point_estimate,
                eval.true_alpha,
                out_dir.display()
            );
        }
    }
    Ok(0)
}

/// Noisy observations `(x, f_alpha(x) + noise)` at spatial points
/// `x_center + N(0, x_std^2)`.
pub fn generate_observations(
    alpha: f64,
    count: usize,
    model_noise_std: f64,
    x_center: f64,
    x_std: f64,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = StreamRng::new(seed);
    (0..count)
        .map(|_| {
            let x = x_center + x_std * rng.normal();
            let v = param_model(alpha, x) + model_noise_std * rng.normal();
            (x, v)
        })
        .collect()
}

fn cmd_gradient_check(
    config: &RunConfig,
    out_dir: &Path,
    mc_paths: usize,
    inject_sign_flip: bool,
) -> Result<i32> {
    let net = &config.net;
    let mut spec = config.task.clone();
    // A handful of data samples is enough for the oracle comparison.
    clamp_count(&mut spec, 3);
    let dataset = tasks::generate(&spec)?;
    let check = gradient_check(net, &dataset, config.train.seed, mc_paths, inject_sign_flip)?;
    for (name, report) in [
        ("pathwise", &check.pathwise),
        ("monte-carlo", &check.monte_carlo),
    ] {
        for err in &report.errors {
            println!(
                "{name} layer {} {}: max scaled err {:.3e} (tol {:.0e})",
                err.layer, err.block, err.max_scaled_err, report.tolerance
            );
        }
        match &report.worst {
            Some(worst) => println!("{name}: FAIL ({worst})"),
            None => println!("{name}: PASS"),
        }
    }
    write_json(
        &serde_json::json!({
            "pathwise": check.pathwise,
            "monte_carlo": check.monte_carlo,
            "pass": check.pass(),
        }),
        &out_dir.join("gradient_check.json"),
    )?;
    Ok(if check.pass() { 0 } else { 1 })
}

fn clamp_count(spec: &mut TaskSpec, max: usize) {
    match spec {
        TaskSpec::CircleClassification { count, .. }
        | TaskSpec::CubicRegression { count, .. }
        | TaskSpec::TanRegression { count, .. }
        | TaskSpec::ParamEstimation { count, .. } => *count = (*count).min(max),
    }
}
