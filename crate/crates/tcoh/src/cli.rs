//! `tcoh` command line.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 training
//! diverged, 4 gradient check failed, 1 any other failure (for example an
//! unwritable output path).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use tcoh_core::data::{gen_moving_square, gen_rotating_points, MovingSquareSpec, RotatingPointsSpec, Trajectory};
use tcoh_core::gradcheck::{self, GradcheckOptions, Suite};
use tcoh_core::spectral::{self, SpectralError};
use tcoh_core::ul::TrainError;

use crate::checkpoint::Checkpoint;
use crate::config::{EvalSpec, ExperimentConfig};
use crate::dataset_io::{self, format_csv};
use crate::experiment::{self, ChainOptions, ClosedFormError, EvalError, EvalOutcome, ExperimentError};

pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Train(TrainError::Diverged { .. }) => EXIT_DIVERGED,
            ExperimentError::Io { .. } => EXIT_FAILURE,
            _ => EXIT_USAGE,
        };
        Self::new(code, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "tcoh", version, about = "Temporal-coherence representation learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train a network online from a JSON experiment config.
    Train(TrainArgs),
    /// Closed-form embedding of a dataset's frame chain.
    ClosedForm(ClosedFormArgs),
    /// Finite-difference checks of every analytic gradient.
    Gradcheck(GradcheckArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
}

#[derive(Debug, Subcommand)]
pub enum GenKind {
    /// Rigid 2-D point cloud rotating about its centroid.
    Rotating(RotatingArgs),
    /// Bright square moving over a dark background.
    MovingSquare(SquareArgs),
}

fn noise_level(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=0.5).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 0.5]"))
    }
}

#[derive(Debug, Args)]
pub struct RotatingArgs {
    #[arg(long, default_value_t = 28)]
    pub points: usize,
    /// Rotation per frame in degrees; must divide 360.
    #[arg(long, default_value_t = 5.0)]
    pub deg: f64,
    #[arg(long, default_value_t = 1)]
    pub revolutions: usize,
    /// Noise std as a fraction of the clean coordinate std, in [0, 0.5].
    #[arg(long, default_value_t = 0.0, value_parser = noise_level)]
    pub noise: f64,
    #[arg(long, env = "TCOH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrajectoryArg {
    Bounce,
    Walk,
    Static,
}

#[derive(Debug, Args)]
pub struct SquareArgs {
    #[arg(long, default_value_t = 64)]
    pub height: usize,
    #[arg(long, default_value_t = 64)]
    pub width: usize,
    /// Side length of the square in pixels.
    #[arg(long, default_value_t = 8)]
    pub square: usize,
    #[arg(long, value_enum, default_value_t = TrajectoryArg::Bounce)]
    pub trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 25)]
    pub frames: usize,
    #[arg(long, default_value_t = 10)]
    pub sequences: usize,
    #[arg(long, env = "TCOH_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for checkpoint.bin, metrics.csv and config.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from this checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClosedFormArgs {
    /// Dataset directory or manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Output directory for embedding.csv and diagnostics.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Rotate a 2-D embedding by this many degrees.
    #[arg(long)]
    pub rotation_deg: Option<f64>,
    /// Treat exactly equal frames as one state.
    #[arg(long)]
    pub merge_identical: bool,
    /// Link each sequence's last frame back to its first.
    #[arg(long)]
    pub close_loop: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, env = "TCOH_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Instances per suite, the first one at fixed small sizes.
    #[arg(long, default_value_t = 50)]
    pub instances: usize,
    /// Perturb one suite's analytic gradient (harness self-test).
    #[arg(long, hide = true)]
    pub corrupt: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum EvalArg {
    DecodeAngle,
    Localize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub eval: EvalArg,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData { kind } => gen_data(kind),
        Command::Train(a) => train(a),
        Command::ClosedForm(a) => closed_form(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Eval(a) => eval(a),
    }
}

fn gen_data(kind: GenKind) -> Result<(), CliError> {
    let (ds, out) = match kind {
        GenKind::Rotating(a) => {
            let spec = RotatingPointsSpec {
                num_points: a.points,
                degrees_per_frame: a.deg,
                num_revolutions: a.revolutions,
                noise_level: a.noise,
                seed: a.seed,
            };
            (gen_rotating_points(&spec), a.out)
        }
        GenKind::MovingSquare(a) => {
            let spec = MovingSquareSpec {
                height: a.height,
                width: a.width,
                square: a.square,
                trajectory: match a.trajectory {
                    TrajectoryArg::Bounce => Trajectory::LinearBounce,
                    TrajectoryArg::Walk => Trajectory::RandomWalk,
                    TrajectoryArg::Static => Trajectory::Static,
                },
                frames_per_sequence: a.frames,
                sequences: a.sequences,
                seed: a.seed,
            };
            (gen_moving_square(&spec), a.out)
        }
    };
    let ds = ds.map_err(|e| CliError::usage(e.to_string()))?;
    dataset_io::save_dataset(&ds, &out).map_err(|e| CliError::new(EXIT_FAILURE, e.to_string()))?;
    println!(
        "wrote {} sequences, {} frames to {}",
        ds.sequences.len(),
        ds.num_frames(),
        out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(&a.config).map_err(|e| CliError::usage(e.to_string()))?;
    let base = experiment::config_base(&a.config);
    let outcome = experiment::run_training(&cfg, &base, &a.out, a.resume.as_deref())?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(last) = outcome.rows.last() {
        let metric = last.eval_metric.map_or("-".to_string(), |m| m.to_string());
        println!(
            "epoch {}: ul_grad_norms {:?}, eval_metric {metric}",
            last.epoch, last.ul_grad_norms
        );
    }
    println!(
        "checkpoint after {} epochs written to {}",
        outcome.checkpoint.epochs_completed,
        a.out.join(experiment::CHECKPOINT_NAME).display()
    );
    Ok(())
}

fn load_dataset(path: &Path) -> Result<tcoh_core::data::SequenceDataset, CliError> {
    dataset_io::load_image_sequence(path).map_err(|e| CliError::usage(e.to_string()))
}

fn closed_form(a: ClosedFormArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.dataset)?;
    let rotation = match a.rotation_deg {
        None => None,
        Some(_) if a.dim != 2 => return Err(CliError::usage("--rotation-deg needs --dim 2")),
        Some(deg) => Some(spectral::rotation_2d(deg.to_radians())),
    };
    let opts = ChainOptions {
        merge_identical: a.merge_identical,
        close_loop: a.close_loop,
    };
    let report = experiment::closed_form_for_dataset(&ds, a.dim, rotation.as_ref(), opts).map_err(|e| match e {
        ClosedFormError::Spectral(SpectralError::InsufficientSpectrum { requested, available, .. }) => CliError::usage(
            format!("--dim {requested} is too large: the chain has only {available} nonzero eigenvalues"),
        ),
        e => CliError::usage(e.to_string()),
    })?;
    let y = &report.result.y;
    let rows: Vec<&[f64]> = (0..y.rows()).map(|r| y.row(r)).collect();
    let diagnostics = serde_json::json!({
        "states": y.rows(),
        "frames": report.frame_states.len(),
        "dim": a.dim,
        "eigenvalues": report.result.lambdas,
        "j_opt": report.result.j_opt,
        "stationarity_residual": report.residual,
    });
    let io = |p: PathBuf, e: std::io::Error| CliError::new(EXIT_FAILURE, format!("{}: {e}", p.display()));
    std::fs::create_dir_all(&a.out).map_err(|e| io(a.out.clone(), e))?;
    let emb = a.out.join("embedding.csv");
    std::fs::write(&emb, format_csv(&rows)).map_err(|e| io(emb.clone(), e))?;
    let diag = a.out.join("diagnostics.json");
    let text = serde_json::to_string_pretty(&diagnostics).expect("json") + "\n";
    std::fs::write(&diag, text).map_err(|e| io(diag.clone(), e))?;
    println!("states {}", y.rows());
    println!("eigenvalues {:?}", report.result.lambdas);
    println!("j_opt {}", report.result.j_opt);
    println!("stationarity_residual {:e}", report.residual);
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let corrupt = match a.corrupt.as_deref() {
        None => None,
        Some(s) => Some(Suite::parse(s).ok_or_else(|| CliError::usage(format!("unknown suite {s:?}")))?),
    };
    if a.instances == 0 {
        return Err(CliError::usage("--instances must be positive"));
    }
    let opts = GradcheckOptions {
        seed: a.seed,
        instances: a.instances,
        corrupt,
    };
    let results = gradcheck::run_all(&opts);
    let limit = 1e-5;
    let mut offenders = Vec::new();
    for (suite, worst) in gradcheck::worst_per_suite(&results) {
        let ok = worst < limit;
        let operation = match suite {
            Suite::Linear => "linear backward",
            Suite::Conv2d => "conv2d backward",
            Suite::Tanh => "tanh backward",
            Suite::Batch => "batch_gradient vs batch_objective",
        };
        println!(
            "{operation:<34} max relative error {worst:.3e} over {} instances  {}",
            a.instances,
            if ok { "ok" } else { "FAILED" }
        );
        if !ok {
            offenders.extend(
                results
                    .iter()
                    .filter(|r| r.suite == suite && !(r.rel_error < limit))
                    .map(|r| format!("{} #{} {} ({:.3e})", suite.name(), r.instance, r.label, r.rel_error)),
            );
        }
    }
    if offenders.is_empty() {
        Ok(())
    } else {
        Err(CliError::new(
            EXIT_CHECK_FAILED,
            format!("gradient check failed (limit {limit:e}):\n  {}", offenders.join("\n  ")),
        ))
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let ck = Checkpoint::load(&a.checkpoint).map_err(|e| CliError::usage(e.to_string()))?;
    let ds = load_dataset(&a.dataset)?;
    let spec = match a.eval {
        EvalArg::DecodeAngle => EvalSpec::DecodeAngle,
        EvalArg::Localize => EvalSpec::Localize,
    };
    let outcome = experiment::evaluate(&ck.network, &ds, spec)
        .map_err(|e| match e {
            EvalError::Fit(_) => CliError::new(EXIT_FAILURE, e.to_string()),
            e => CliError::usage(e.to_string()),
        })?
        .expect("spec is not none");
    if let Some(w) = outcome.warning() {
        eprintln!("warning: {w}");
    }
    match &outcome {
        EvalOutcome::Decode(r) => {
            println!("sin total_abs_error {} r2 {}", r.sin.total_abs_error, r.sin.r2);
            println!("cos total_abs_error {} r2 {}", r.cos.total_abs_error, r.cos.r2);
            println!("total_abs_error {}", r.total_abs_error());
        }
        EvalOutcome::Localize(r) => {
            let show = |c: Option<f64>| c.map_or("undefined".to_string(), |v| v.to_string());
            println!("row_correlation {}", show(r.row_corr));
            println!("col_correlation {}", show(r.col_corr));
            println!("flat_frames {}", r.flat_frames);
            println!("correlation {}", r.correlation());
        }
    }
    Ok(())
}
