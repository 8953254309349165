//! Command-line frontend: train, evaluate, visualize, gradient-check.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ramdqn::agents::{build_network, ArchitectureName, ArchitectureOptions, ScreenShape};
use ramdqn::envs::{AnyEnv, EnvName, Environment};
use ramdqn::gradcheck::{gradient_check, random_probes, GradCheckReport};
use ramdqn::harness::{
    run_test_period, Checkpoint, Experiment, ExperimentConfig, ExperimentSummary, TestReport,
};
use ramdqn::{Error, Mode, NetInputs, Network, Result, Tensor};

pub mod heatmap;

pub const GRADCHECK_TOLERANCE: f64 = 1e-5;
pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_PROBES: usize = 128;
/// Screen stack used when gradient-checking the convolutional networks.
pub const GRADCHECK_SCREEN: ScreenShape = ScreenShape {
    channels: 4,
    height: 32,
    width: 32,
};

#[derive(Debug, Parser)]
#[command(
    name = "ramdqn",
    version,
    about = "Deep Q-learning from RAM and screens"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a Q-network, writing curve.csv, checkpoints and summary.json.
    Train(TrainArgs),
    /// Run one test period with a saved network.
    Eval(EvalArgs),
    /// Write the first-layer weights as a P6 heatmap.
    Visualize(VisualizeArgs),
    /// Compare backpropagated and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "resume")]
    pub env: Option<EnvName>,
    #[arg(long, required_unless_present = "resume")]
    pub arch: Option<ArchitectureName>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub frame_skip: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps_per_epoch: Option<usize>,
    #[arg(long)]
    pub replay_capacity: Option<usize>,
    #[arg(long)]
    pub test_steps: Option<usize>,
    /// Continue from a `latest.ckpt`; hyperparameter flags are then ignored.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Defaults to the environment the network was trained on.
    #[arg(long)]
    pub env: Option<EnvName>,
    /// Test frames; defaults to the checkpoint's test_steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct VisualizeArgs {
    pub checkpoint: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GradcheckArgs {
    /// An architecture name or `all`.
    #[arg(long, default_value = "all")]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = GRADCHECK_PROBES)]
    pub probes: usize,
}

pub fn parse<I, S>(args: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    Cli::try_parse_from(args)
}

/// Parses `args` and runs the command. Returns the process exit code: 0 on
/// success, 2 for usage and configuration errors, 1 for everything else.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = write!(sink, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a, out, err).map(|_| true),
        Command::Eval(a) => cmd_eval(&a, out).map(|_| true),
        Command::Visualize(a) => cmd_visualize(&a, out),
        Command::Gradcheck(a) => cmd_gradcheck(&a, out).map(|reports| {
            reports
                .iter()
                .all(|(_, r)| r.max_relative_error < GRADCHECK_TOLERANCE)
        }),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn train_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let (Some(env), Some(arch)) = (args.env, args.arch) else {
        return Err(Error::Config("--env and --arch are required".into()));
    };
    let mut config = ExperimentConfig::new(env, arch);
    config.epochs = args.epochs;
    config.seed = args.seed;
    config.out_dir = Some(args.out.clone());
    let h = &mut config.hyper;
    if let Some(v) = args.frame_skip {
        h.frame_skip = v;
    }
    if let Some(v) = args.dropout {
        h.dropout_p = v;
    }
    if let Some(v) = args.learning_rate {
        h.learning_rate = v;
    }
    if let Some(v) = args.steps_per_epoch {
        h.steps_per_epoch = v;
    }
    if let Some(v) = args.replay_capacity {
        h.replay_capacity = v;
    }
    if let Some(v) = args.test_steps {
        h.test_steps = v;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(
    args: &TrainArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<ExperimentSummary> {
    let mut exp = match &args.resume {
        Some(path) => Experiment::resume(
            Checkpoint::load(path)?,
            Some(args.epochs),
            Some(args.out.clone()),
        )?,
        None => Experiment::new(train_config(args)?)?,
    };
    let epochs = exp.config().epochs;
    let summary = exp.run(|r| {
        let _ = writeln!(
            err,
            "epoch {}/{epochs} avg_score {} episodes {}{} steps {} mean_loss {}",
            r.epoch,
            r.avg_score,
            r.episodes,
            if r.truncated { " (truncated)" } else { "" },
            r.steps,
            r.mean_loss
        );
    })?;
    let _ = writeln!(
        out,
        "best epoch {} avg_score {} ({} on {}, frame_skip {}, dropout {}, learning_rate {}, seed {})",
        summary.best_epoch,
        summary.best_avg_score,
        summary.arch,
        summary.env,
        summary.hyper.frame_skip,
        summary.hyper.dropout_p,
        summary.hyper.learning_rate,
        summary.seed
    );
    Ok(summary)
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<TestReport> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = ckpt.network::<f32>()?;
    let env = args.env.unwrap_or(ckpt.header.env);
    let actions = AnyEnv::new(env).action_count();
    if actions != net.output_dim() {
        return Err(Error::Config(format!(
            "network has {} outputs, `{env}` has {actions} actions",
            net.output_dim()
        )));
    }
    let mut hyper = ckpt.header.hyper.clone();
    hyper.test_epsilon = args.epsilon;
    if let Some(steps) = args.steps {
        hyper.test_steps = steps;
    }
    hyper.validate()?;
    let report = run_test_period(&net, env, &hyper, args.seed)?;
    let _ = writeln!(
        out,
        "avg_score {} episodes {} frames {} truncated {} epsilon {}",
        report.avg_score, report.episodes, report.frames, report.truncated, hyper.test_epsilon
    );
    Ok(report)
}

pub fn cmd_visualize(args: &VisualizeArgs, out: &mut dyn Write) -> Result<bool> {
    let net = Checkpoint::load(&args.checkpoint)?.network::<f32>()?;
    let weights = heatmap::first_layer_weights(&net)?;
    let ppm = heatmap::heatmap_ppm(&weights)?;
    std::fs::write(&args.output, ppm).map_err(|e| Error::Io {
        path: args.output.clone(),
        source: e,
    })?;
    let _ = writeln!(
        out,
        "wrote {} ({}x{})",
        args.output.display(),
        weights.shape()[0],
        weights.shape()[1]
    );
    Ok(true)
}

/// Random batch of two states for every stream `net` reads.
fn random_inputs(net: &Network<f64>, rng: &mut ChaCha8Rng) -> Result<NetInputs<f64>> {
    let batch = 2;
    let mut sample = |shape: &[usize]| {
        let mut full = vec![batch];
        full.extend_from_slice(shape);
        let n = full.iter().product();
        Tensor::new(full, (0..n).map(|_| rng.gen_range(0.0..1.0)).collect())
    };
    let ram = match net.input_shape(ramdqn::InputStream::Ram) {
        Some(s) => Some(sample(s)?),
        None => None,
    };
    let screen = match net.input_shape(ramdqn::InputStream::Screen) {
        Some(s) => Some(sample(s)?),
        None => None,
    };
    Ok(NetInputs { ram, screen })
}

/// Gradient check of one architecture in 64-bit precision.
pub fn gradcheck_architecture(
    arch: ArchitectureName,
    seed: u64,
    probes: usize,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = ArchitectureOptions {
        screen: Some(GRADCHECK_SCREEN),
        dropout_p: 0.0,
    };
    let net: Network<f64> = build_network(arch, 4, opts, &mut rng)?;
    let inputs = random_inputs(&net, &mut rng)?;
    let weights = Tensor::new(
        vec![2, net.output_dim()],
        (0..2 * net.output_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect(),
    )?;
    let probes = random_probes(&net, probes, &mut rng);
    gradient_check(&net, &inputs, &weights, &probes, GRADCHECK_STEP, Mode::Eval)
}

pub fn cmd_gradcheck(
    args: &GradcheckArgs,
    out: &mut dyn Write,
) -> Result<Vec<(ArchitectureName, GradCheckReport)>> {
    let archs = if args.arch == "all" {
        ArchitectureName::ALL.to_vec()
    } else {
        vec![args.arch.parse()?]
    };
    if args.probes == 0 {
        return Err(Error::Config("--probes must be positive".into()));
    }
    let mut reports = Vec::new();
    for arch in archs {
        let r = gradcheck_architecture(arch, args.seed, args.probes)?;
        let verdict = if r.max_relative_error < GRADCHECK_TOLERANCE {
            "ok"
        } else {
            "FAILED"
        };
        let _ = writeln!(
            out,
            "{arch} max_relative_error {:.3e} probes {} {verdict}",
            r.max_relative_error, r.probes
        );
        reports.push((arch, r));
    }
    Ok(reports)
}
