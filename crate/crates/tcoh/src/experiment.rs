//! Orchestration shared by the CLI and the acceptance run: loading data,
//! training with checkpoints and metrics, evaluation and the closed-form
//! embedding of a dataset.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcoh_core::data::{coordinate_std, gen_moving_square, gen_rotating_points, DataError, DatasetMeta, GroundTruth, SequenceDataset};
use tcoh_core::eval::{self, DecodeReport, LocalizeReport};
use tcoh_core::linalg::{LinalgError, Matrix};
use tcoh_core::markov::{self, MarkovError};
use tcoh_core::nn::{Network, NnError, Tensor};
use tcoh_core::spectral::{self, ClosedFormResult, SpectralError};
use tcoh_core::ul::{train_online, InputNoise, TrainConfig, TrainError};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{check_input_shape, ConfigError, DatasetSource, EvalSpec, ExperimentConfig, ResolvedSource};
use crate::dataset_io::{self, DatasetIoError};
use crate::metrics::{self, MetricsRow};

pub const CHECKPOINT_NAME: &str = "checkpoint.bin";
pub const METRICS_NAME: &str = "metrics.csv";
pub const CONFIG_NAME: &str = "config.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetIoError),
    #[error("dataset generation failed: {0}")]
    Generate(#[from] DataError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}")]
    Mismatch(String),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("sequence {0} has no ground truth")]
    MissingGroundTruth(usize),
    #[error("sequence {sequence} has {found} ground truth, {wanted} is needed")]
    WrongGroundTruth {
        sequence: usize,
        found: &'static str,
        wanted: &'static str,
    },
    #[error("dataset has no frames")]
    Empty,
    #[error("network output: {0}")]
    Forward(#[from] NnError),
    #[error("decoder fit failed: {0}")]
    Fit(#[from] LinalgError),
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    fs::write(path, contents).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Generates or loads a dataset.
pub fn load_source(src: &ResolvedSource) -> Result<SequenceDataset, ExperimentError> {
    Ok(match src {
        ResolvedSource::RotatingPoints(s) => gen_rotating_points(s)?,
        ResolvedSource::MovingSquare(s) => gen_moving_square(s)?,
        ResolvedSource::Manifest(p) => dataset_io::load_image_sequence(p)?,
    })
}

/// Result of one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Decode(DecodeReport),
    Localize(LocalizeReport),
}

impl EvalOutcome {
    /// The number recorded in the metrics: total absolute decoding error,
    /// or centroid correlation with undefined axes counted as 0.
    pub fn metric(&self) -> f64 {
        match self {
            EvalOutcome::Decode(r) => r.total_abs_error(),
            EvalOutcome::Localize(r) => r.correlation(),
        }
    }

    /// A message when the metric hides a degenerate case.
    pub fn warning(&self) -> Option<String> {
        match self {
            EvalOutcome::Localize(r) if r.is_degenerate() => Some(format!(
                "centroid correlation is undefined (constant predictions or ground truth on an axis; {} flat frames); reported as 0 for that axis",
                r.flat_frames
            )),
            _ => None,
        }
    }
}

fn labels<'a>(ds: &'a SequenceDataset, wanted: &'static str) -> Result<Vec<&'a GroundTruth>, EvalError> {
    ds.sequences
        .iter()
        .enumerate()
        .map(|(i, s)| match &s.ground_truth {
            None => Err(EvalError::MissingGroundTruth(i)),
            Some(gt) => {
                let found = match gt {
                    GroundTruth::Angles(_) => "angle",
                    GroundTruth::Centroids(_) => "centroid",
                };
                if found == wanted {
                    Ok(gt)
                } else {
                    Err(EvalError::WrongGroundTruth {
                        sequence: i,
                        found,
                        wanted,
                    })
                }
            }
        })
        .collect()
}

/// Network outputs for every frame, in dataset order.
pub fn outputs(net: &Network, ds: &SequenceDataset) -> Result<Vec<Tensor>, NnError> {
    ds.frames().map(|f| net.forward(f)).collect()
}

/// Outputs flattened into a matrix with one row per frame.
pub fn output_matrix(net: &Network, ds: &SequenceDataset) -> Result<Matrix, EvalError> {
    let outs = outputs(net, ds)?;
    let cols = outs.first().map(Tensor::len).ok_or(EvalError::Empty)?;
    let data = outs.into_iter().flat_map(Tensor::into_data).collect();
    Ok(Matrix::from_vec(ds.num_frames(), cols, data)?)
}

pub fn evaluate(net: &Network, ds: &SequenceDataset, spec: EvalSpec) -> Result<Option<EvalOutcome>, EvalError> {
    match spec {
        EvalSpec::None => Ok(None),
        EvalSpec::DecodeAngle => {
            let angles: Vec<f64> = labels(ds, "angle")?
                .into_iter()
                .flat_map(|gt| match gt {
                    GroundTruth::Angles(a) => a.iter().copied(),
                    GroundTruth::Centroids(_) => unreachable!("checked by labels"),
                })
                .collect();
            let x = output_matrix(net, ds)?;
            Ok(Some(EvalOutcome::Decode(eval::decode_angles(&x, &angles)?)))
        }
        EvalSpec::Localize => {
            let truth: Vec<(f64, f64)> = labels(ds, "centroid")?
                .into_iter()
                .flat_map(|gt| match gt {
                    GroundTruth::Centroids(c) => c.iter().copied(),
                    GroundTruth::Angles(_) => unreachable!("checked by labels"),
                })
                .collect();
            if truth.is_empty() {
                return Err(EvalError::Empty);
            }
            let outs = outputs(net, ds)?;
            Ok(Some(EvalOutcome::Localize(eval::localize(&outs, &truth))))
        }
    }
}

/// Seed of the per-epoch input-noise streams, kept apart from the
/// initialization stream.
pub fn noise_seed(seed: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng.next_u64()
}

/// Per-coordinate noise std for `level`, relative to the clean data.
fn input_noise(ds: &SequenceDataset, level: f64, seed: u64) -> Result<Option<InputNoise>, ExperimentError> {
    if level == 0.0 {
        return Ok(None);
    }
    let clean_std = match ds.meta {
        DatasetMeta::RotatingPoints(s) if s.noise_level > 0.0 => coordinate_std(&gen_rotating_points(&s.clean())?),
        _ => coordinate_std(ds),
    };
    Ok(Some(InputNoise {
        std: clean_std.iter().map(|s| s * level).collect(),
        seed: noise_seed(seed),
    }))
}

/// Everything a training run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// All metric rows in `metrics.csv`, including rows kept from before a resume.
    pub rows: Vec<MetricsRow>,
    /// Warnings raised by evaluation during training.
    pub warnings: Vec<String>,
}

/// Where relative dataset paths in a config are resolved.
pub fn config_base(config_path: &Path) -> PathBuf {
    config_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Loads train and evaluation data for `cfg`.
pub fn datasets(cfg: &ExperimentConfig, base: &Path) -> Result<(SequenceDataset, Option<SequenceDataset>), ExperimentError> {
    let train = load_source(&cfg.dataset.resolve(base))?;
    let test = match &cfg.test_dataset {
        Some(t) => Some(load_source(&t.resolve(base))?),
        None => None,
    };
    Ok((train, test))
}

/// Trains per `cfg`, writing `checkpoint.bin`, `metrics.csv` and the
/// effective `config.json` into `out_dir`.
///
/// `cfg.train.epochs` is the total epoch count. When resuming, training
/// continues from the checkpoint's epoch and metric rows of earlier epochs
/// already in `out_dir/metrics.csv` are kept.
pub fn run_training(
    cfg: &ExperimentConfig,
    base: &Path,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainOutcome, ExperimentError> {
    cfg.validate()?;
    let seed = cfg.effective_seed()?;
    let (train, test) = datasets(cfg, base)?;
    let shape = train
        .frame_shape()
        .ok_or_else(|| ExperimentError::Mismatch("training dataset has no frames".into()))?
        .to_vec();
    if let Some(t) = test.as_ref().and_then(|t| t.frame_shape()) {
        if t != shape.as_slice() {
            return Err(ExperimentError::Mismatch(format!(
                "test frames have shape {t:?}, training frames {shape:?}"
            )));
        }
    }

    let init = cfg.build_network(seed)?;
    check_input_shape(&init, &shape)?;
    let (mut net, start) = match resume {
        None => (init, 0),
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if !same_architecture(&ck.network, &init) {
                return Err(ExperimentError::Mismatch(format!(
                    "{}: checkpoint architecture differs from the config",
                    p.display()
                )));
            }
            (ck.network, ck.epochs_completed as usize)
        }
    };

    let tc = TrainConfig {
        sgd: cfg.train.sgd(),
        epochs: cfg.train.epochs.saturating_sub(start),
        start_epoch: start,
        input_noise: input_noise(&train, cfg.train.input_noise, seed)?,
    };

    fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let metrics_path = out_dir.join(METRICS_NAME);
    let mut rows: Vec<MetricsRow> = match resume {
        Some(_) if metrics_path.exists() => {
            let text = fs::read_to_string(&metrics_path).map_err(|source| ExperimentError::Io {
                path: metrics_path.clone(),
                source,
            })?;
            metrics::parse(&text)
                .map_err(|e| ExperimentError::Mismatch(format!("{}: {e}", metrics_path.display())))?
                .into_iter()
                .filter(|r| r.epoch < start)
                .collect()
        }
        _ => Vec::new(),
    };

    let eval_set = test.as_ref().unwrap_or(&train);
    let mut eval_error = None;
    let mut warnings = Vec::new();
    let mut times = Vec::new();
    let mut clock = Instant::now();
    let epochs = if tc.epochs == 0 {
        Vec::new()
    } else {
        train_online(&mut net, &train, &tc, |_, n| {
            let metric = match evaluate(n, eval_set, cfg.eval) {
                Ok(Some(o)) => {
                    warnings.extend(o.warning());
                    Some(o.metric())
                }
                Ok(None) => None,
                Err(e) => {
                    eval_error.get_or_insert(e);
                    None
                }
            };
            times.push(clock.elapsed().as_secs_f64());
            clock = Instant::now();
            metric
        })?
    };
    if let Some(e) = eval_error {
        return Err(e.into());
    }
    rows.extend(epochs.into_iter().zip(times).map(|(m, seconds)| MetricsRow {
        epoch: m.epoch,
        ul_grad_norms: m.ul_grad_norms,
        eval_metric: m.eval,
        seconds,
    }));

    let checkpoint = Checkpoint {
        network: net,
        epochs_completed: start.max(cfg.train.epochs) as u64,
    };
    checkpoint.save(&out_dir.join(CHECKPOINT_NAME))?;
    write_file(&metrics_path, metrics::to_csv(checkpoint.network.ul_count(), &rows))?;
    let effective = ExperimentConfig {
        seed: Some(seed),
        ..cfg.clone()
    };
    let mut json = effective.to_json();
    json.push('\n');
    write_file(&out_dir.join(CONFIG_NAME), json)?;
    Ok(TrainOutcome {
        checkpoint,
        rows,
        warnings,
    })
}

/// Same stages, layer shapes and UL attachment.
fn same_architecture(a: &Network, b: &Network) -> bool {
    use tcoh_core::nn::Layer;
    a.stages.len() == b.stages.len()
        && a.stages.iter().zip(&b.stages).all(|(x, y)| {
            let shapes = match (&x.layer, &y.layer) {
                (Layer::Linear(p), Layer::Linear(q)) => p.inputs() == q.inputs() && p.outputs() == q.outputs(),
                (Layer::Conv2d(p), Layer::Conv2d(q)) => {
                    p.in_channels() == q.in_channels()
                        && p.out_channels() == q.out_channels()
                        && p.kernel_size() == q.kernel_size()
                        && p.padding() == q.padding()
                }
                (Layer::Tanh, Layer::Tanh) => true,
                _ => false,
            };
            shapes && x.ul.is_some() == y.ul.is_some()
        })
}

/// How frames become chain states for the closed-form embedding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ChainOptions {
    /// One state per distinct frame instead of one per frame.
    pub merge_identical: bool,
    /// Add a transition from each sequence's last frame back to its first.
    pub close_loop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormReport {
    pub result: ClosedFormResult,
    /// State of every frame, in dataset order.
    pub frame_states: Vec<usize>,
    pub residual: f64,
}

#[derive(Debug, Error)]
pub enum ClosedFormError {
    #[error("dataset has no frames")]
    Empty,
    #[error(transparent)]
    Markov(#[from] MarkovError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Builds the chain of `ds` and embeds it into `d` dimensions.
///
/// By default every frame is its own state and each sequence is a path;
/// sequences are not linked to each other.
pub fn closed_form_for_dataset(
    ds: &SequenceDataset,
    d: usize,
    rotation: Option<&Matrix>,
    opts: ChainOptions,
) -> Result<ClosedFormReport, ClosedFormError> {
    if ds.is_empty() {
        return Err(ClosedFormError::Empty);
    }
    let (frame_states, n) = if opts.merge_identical {
        let all: Vec<&Tensor> = ds.frames().collect();
        markov::states_by_identity(&all)
    } else {
        (markov::path_states(ds.num_frames()), ds.num_frames())
    };
    let mut sequences = Vec::new();
    let mut offset = 0;
    for seq in &ds.sequences {
        let mut s = frame_states[offset..offset + seq.frames.len()].to_vec();
        offset += seq.frames.len();
        if opts.close_loop && s.len() > 1 {
            s.push(s[0]);
        }
        sequences.push(s);
    }
    let stats = markov::stats_from_sequences(&sequences, n)?;
    let result = spectral::closed_form_embedding(&stats, d, rotation)?;
    let residual = spectral::stationarity_residual(&result.y, &stats)?;
    Ok(ClosedFormReport {
        result,
        frame_states,
        residual,
    })
}

/// Dataset source of a `gen-data` style spec, for manifests and configs.
pub fn source_of(ds: &SequenceDataset) -> Option<DatasetSource> {
    match ds.meta {
        DatasetMeta::RotatingPoints(s) => Some(s.into()),
        DatasetMeta::MovingSquare(s) => Some(s.into()),
        DatasetMeta::External => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tcoh_core::data::{RotatingPointsSpec, Sequence};

    #[test]
    fn noise_seed_differs_from_init_stream() {
        let mut init = ChaCha8Rng::seed_from_u64(5);
        assert_ne!(noise_seed(5), init.next_u64());
        assert_eq!(noise_seed(5), noise_seed(5));
    }

    #[test]
    fn missing_ground_truth_is_reported() {
        let mut ds = gen_rotating_points(&RotatingPointsSpec::default()).unwrap();
        ds.sequences[0].ground_truth = None;
        let net = crate::config::rotation_experiment().build_network(0).unwrap();
        assert!(matches!(
            evaluate(&net, &ds, EvalSpec::DecodeAngle),
            Err(EvalError::MissingGroundTruth(0))
        ));
        assert!(matches!(evaluate(&net, &ds, EvalSpec::None), Ok(None)));
        assert!(matches!(
            evaluate(&net, &ds, EvalSpec::Localize),
            Err(EvalError::MissingGroundTruth(0))
        ));
    }

    #[test]
    fn closed_loop_path_is_a_cycle() {
        let ds = gen_rotating_points(&RotatingPointsSpec::default()).unwrap();
        let open = closed_form_for_dataset(&ds, 2, None, ChainOptions::default()).unwrap();
        let closed = closed_form_for_dataset(
            &ds,
            2,
            None,
            ChainOptions {
                close_loop: true,
                ..ChainOptions::default()
            },
        )
        .unwrap();
        assert!(open.residual < 1e-8 && closed.residual < 1e-8);
        let radius = |y: &Matrix, i: usize| y.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
        let r0 = radius(&closed.result.y, 0);
        assert!((0..72).all(|i| (radius(&closed.result.y, i) - r0).abs() < 1e-6));
        assert!((radius(&open.result.y, 0) - radius(&open.result.y, 36)).abs() > 1e-3);
    }

    #[test]
    fn sequences_are_not_linked() {
        let f = |v: f64| Tensor::from_vec(vec![v]);
        let seq = |a, b| Sequence {
            frames: vec![f(a), f(b)],
            ground_truth: None,
        };
        let ds = SequenceDataset::new(vec![seq(0.0, 1.0), seq(2.0, 3.0)], DatasetMeta::External).unwrap();
        // Two disconnected edges: the second-smallest eigenvalue is zero.
        let err = closed_form_for_dataset(&ds, 3, None, ChainOptions::default()).unwrap_err();
        assert!(matches!(err, ClosedFormError::Spectral(SpectralError::InsufficientSpectrum { .. })));
    }
}
