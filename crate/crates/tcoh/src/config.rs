//! Experiment configuration files (JSON).
//!
//! Unknown keys are rejected everywhere so a misspelled hyperparameter is an
//! error rather than a silently ignored default.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tcoh_core::data::{MovingSquareSpec, RotatingPointsSpec, Trajectory};
use tcoh_core::models::{self, ConvStackSpec};
use tcoh_core::nn::{Conv2dLayer, Layer, LinearLayer, Network, Padding, SgdConfig, Stage, Tensor};
use tcoh_core::ul::{depth_mu_schedule, ChannelCovariance, GradientSign, UlHyper, UlLayer};
use thiserror::Error;

/// Environment variable consulted when a config has no `seed`.
pub const SEED_ENV: &str = "TCOH_SEED";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds network initialization and input noise; falls back to `TCOH_SEED`, then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub network: NetworkConfig,
    pub dataset: DatasetSource,
    /// Held-out data for evaluation; the training data is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_dataset: Option<DatasetSource>,
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkConfig {
    /// Explicit layer list.
    Stages {
        stages: Vec<StageConfig>,
        /// Replace each UL layer's μ by the depth schedule anchored at the top UL layer's μ.
        #[serde(default)]
        depth_mu_schedule: bool,
    },
    /// `conv → tanh → UL` blocks with depth-scheduled μ.
    ConvStack {
        #[serde(default = "one")]
        in_channels: usize,
        #[serde(default = "default_channels")]
        channels: Vec<usize>,
        #[serde(default = "default_kernel")]
        kernel: usize,
        #[serde(default = "same")]
        padding: PaddingConfig,
        /// Settings of the top UL layer.
        #[serde(default)]
        ul: UlConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub layer: LayerConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ul: Option<UlConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "same")]
        padding: PaddingConfig,
    },
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingConfig {
    Valid,
    Same,
}

impl From<PaddingConfig> for Padding {
    fn from(p: PaddingConfig) -> Self {
        match p {
            PaddingConfig::Valid => Padding::Valid,
            PaddingConfig::Same => Padding::Same,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SignConfig {
    #[default]
    Descend,
    Ascend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceConfig {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UlConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_ridge")]
    pub ridge: f64,
    #[serde(default = "one_f")]
    pub combine_weight: f64,
    #[serde(default)]
    pub sign: SignConfig,
    #[serde(default = "one_f")]
    pub init_scale: f64,
    #[serde(default)]
    pub covariance: CovarianceConfig,
}

impl Default for UlConfig {
    fn default() -> Self {
        Self::from(UlHyper::default())
    }
}

impl From<UlHyper> for UlConfig {
    fn from(h: UlHyper) -> Self {
        Self {
            mu: h.mu,
            eps: h.eps,
            ridge: h.ridge,
            combine_weight: h.combine_weight,
            sign: match h.sign {
                GradientSign::Descend => SignConfig::Descend,
                GradientSign::Ascend => SignConfig::Ascend,
            },
            init_scale: h.init_scale,
            covariance: CovarianceConfig::Diagonal,
        }
    }
}

impl UlConfig {
    pub fn hyper(&self) -> UlHyper {
        UlHyper {
            mu: self.mu,
            eps: self.eps,
            ridge: self.ridge,
            combine_weight: self.combine_weight,
            sign: match self.sign {
                SignConfig::Descend => GradientSign::Descend,
                SignConfig::Ascend => GradientSign::Ascend,
            },
            init_scale: self.init_scale,
        }
    }

    pub fn channel_covariance(&self) -> ChannelCovariance {
        match self.covariance {
            CovarianceConfig::Diagonal => ChannelCovariance::Diagonal,
            CovarianceConfig::Full => ChannelCovariance::Full,
        }
    }
}

/// A generator spec or a manifest on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    RotatingPoints {
        #[serde(default = "default_points")]
        num_points: usize,
        #[serde(default = "default_degrees")]
        degrees_per_frame: f64,
        #[serde(default = "one")]
        num_revolutions: usize,
        #[serde(default)]
        noise_level: f64,
        #[serde(default)]
        seed: u64,
    },
    MovingSquare {
        #[serde(default = "default_image")]
        height: usize,
        #[serde(default = "default_image")]
        width: usize,
        #[serde(default = "default_square")]
        square: usize,
        #[serde(default)]
        trajectory: TrajectoryConfig,
        #[serde(default = "default_frames")]
        frames_per_sequence: usize,
        #[serde(default = "default_sequences")]
        sequences: usize,
        #[serde(default)]
        seed: u64,
    },
    /// Path to a manifest file or a directory holding `manifest.json`.
    /// Relative paths are resolved against the config file's directory.
    Manifest { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryConfig {
    #[default]
    LinearBounce,
    RandomWalk,
    Static,
}

impl From<RotatingPointsSpec> for DatasetSource {
    fn from(s: RotatingPointsSpec) -> Self {
        DatasetSource::RotatingPoints {
            num_points: s.num_points,
            degrees_per_frame: s.degrees_per_frame,
            num_revolutions: s.num_revolutions,
            noise_level: s.noise_level,
            seed: s.seed,
        }
    }
}

impl From<MovingSquareSpec> for DatasetSource {
    fn from(s: MovingSquareSpec) -> Self {
        DatasetSource::MovingSquare {
            height: s.height,
            width: s.width,
            square: s.square,
            trajectory: match s.trajectory {
                Trajectory::LinearBounce => TrajectoryConfig::LinearBounce,
                Trajectory::RandomWalk => TrajectoryConfig::RandomWalk,
                Trajectory::Static => TrajectoryConfig::Static,
            },
            frames_per_sequence: s.frames_per_sequence,
            sequences: s.sequences,
            seed: s.seed,
        }
    }
}

/// A dataset source resolved to either generator input or a file.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedSource {
    RotatingPoints(RotatingPointsSpec),
    MovingSquare(MovingSquareSpec),
    Manifest(PathBuf),
}

impl DatasetSource {
    pub fn resolve(&self, base: &Path) -> ResolvedSource {
        match *self {
            DatasetSource::RotatingPoints {
                num_points,
                degrees_per_frame,
                num_revolutions,
                noise_level,
                seed,
            } => ResolvedSource::RotatingPoints(RotatingPointsSpec {
                num_points,
                degrees_per_frame,
                num_revolutions,
                noise_level,
                seed,
            }),
            DatasetSource::MovingSquare {
                height,
                width,
                square,
                trajectory,
                frames_per_sequence,
                sequences,
                seed,
            } => ResolvedSource::MovingSquare(MovingSquareSpec {
                height,
                width,
                square,
                trajectory: match trajectory {
                    TrajectoryConfig::LinearBounce => Trajectory::LinearBounce,
                    TrajectoryConfig::RandomWalk => Trajectory::RandomWalk,
                    TrajectoryConfig::Static => Trajectory::Static,
                },
                frames_per_sequence,
                sequences,
                seed,
            }),
            DatasetSource::Manifest { ref path } => ResolvedSource::Manifest(base.join(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    /// Gaussian input noise redrawn every frame of every epoch, as a
    /// fraction of the clean per-coordinate standard deviation.
    #[serde(default)]
    pub input_noise: f64,
}

impl TrainSection {
    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalSpec {
    /// Linear readout of sin/cos of the rotation angle; metric is the total absolute error.
    DecodeAngle,
    /// Output-intensity centroid vs. ground truth; metric is the Pearson correlation.
    Localize,
    #[default]
    None,
}

fn one() -> usize {
    1
}
fn one_f() -> f64 {
    1.0
}
fn same() -> PaddingConfig {
    PaddingConfig::Same
}
fn default_channels() -> Vec<usize> {
    ConvStackSpec::default().channels
}
fn default_kernel() -> usize {
    ConvStackSpec::default().kernel
}
fn default_mu() -> f64 {
    UlHyper::default().mu
}
fn default_eps() -> f64 {
    UlHyper::default().eps
}
fn default_ridge() -> f64 {
    UlHyper::default().ridge
}
fn default_points() -> usize {
    RotatingPointsSpec::default().num_points
}
fn default_degrees() -> f64 {
    RotatingPointsSpec::default().degrees_per_frame
}
fn default_image() -> usize {
    MovingSquareSpec::default().height
}
fn default_square() -> usize {
    MovingSquareSpec::default().square
}
fn default_frames() -> usize {
    MovingSquareSpec::default().frames_per_sequence
}
fn default_sequences() -> usize {
    MovingSquareSpec::default().sequences
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The explicit seed, else `TCOH_SEED`, else 0.
    pub fn effective_seed(&self) -> Result<u64, ConfigError> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(0),
        }
    }

    /// Checks everything that does not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.train.sgd().validate().map_err(|e| invalid(e.to_string()))?;
        if !(0.0..=0.5).contains(&self.train.input_noise) {
            return Err(invalid("train.input_noise must lie in [0, 0.5]"));
        }
        match &self.network {
            NetworkConfig::Stages { stages, .. } => {
                if stages.is_empty() {
                    return Err(invalid("network needs at least one stage"));
                }
                if !stages.iter().any(|s| s.ul.is_some()) {
                    return Err(invalid("network needs at least one UL layer"));
                }
                for (i, s) in stages.iter().enumerate() {
                    if let Some(ul) = &s.ul {
                        ul.hyper().validate().map_err(|e| invalid(format!("stage {i}: {e}")))?;
                    }
                    let bad = match s.layer {
                        LayerConfig::Linear { inputs, outputs } => inputs == 0 || outputs == 0,
                        LayerConfig::Conv2d {
                            in_channels,
                            out_channels,
                            kernel,
                            padding,
                        } => {
                            in_channels == 0
                                || out_channels == 0
                                || kernel == 0
                                || (padding == PaddingConfig::Same && kernel % 2 == 0)
                        }
                        LayerConfig::Tanh => false,
                    };
                    if bad {
                        return Err(invalid(format!("stage {i}: invalid layer {:?}", s.layer)));
                    }
                }
            }
            NetworkConfig::ConvStack {
                in_channels,
                channels,
                kernel,
                padding,
                ul,
            } => {
                if channels.is_empty() || channels.contains(&0) || *in_channels == 0 {
                    return Err(invalid("conv_stack needs non-zero channel counts"));
                }
                if *kernel == 0 || (*padding == PaddingConfig::Same && kernel % 2 == 0) {
                    return Err(invalid("conv_stack kernel must be positive (and odd with same padding)"));
                }
                ul.hyper().validate().map_err(|e| invalid(e.to_string()))?;
            }
        }
        Ok(())
    }

    /// Initializes the network from `seed`.
    pub fn build_network(&self, seed: u64) -> Result<Network, ConfigError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match &self.network {
            NetworkConfig::Stages {
                stages,
                depth_mu_schedule: schedule,
            } => {
                let mut out = Vec::with_capacity(stages.len());
                for (i, s) in stages.iter().enumerate() {
                    let layer = match s.layer {
                        LayerConfig::Linear { inputs, outputs } => {
                            Layer::Linear(LinearLayer::new(inputs, outputs, &mut rng))
                        }
                        LayerConfig::Conv2d {
                            in_channels,
                            out_channels,
                            kernel,
                            padding,
                        } => Layer::Conv2d(
                            Conv2dLayer::new(in_channels, out_channels, kernel, padding.into(), &mut rng)
                                .map_err(|e| invalid(format!("stage {i}: {e}")))?,
                        ),
                        LayerConfig::Tanh => Layer::Tanh,
                    };
                    let ul = match &s.ul {
                        None => None,
                        Some(u) => Some(
                            UlLayer::new(u.hyper())
                                .map_err(|e| invalid(format!("stage {i}: {e}")))?
                                .with_covariance(u.channel_covariance()),
                        ),
                    };
                    out.push(Stage { layer, ul });
                }
                if *schedule {
                    let count = out.iter().filter(|s| s.ul.is_some()).count();
                    let top = out.iter().rev().find_map(|s| s.ul.as_ref()).map(|u| u.hyper.mu);
                    if let Some(top) = top {
                        let mus = depth_mu_schedule(top, count);
                        for (ul, mu) in out.iter_mut().filter_map(|s| s.ul.as_mut()).zip(mus) {
                            ul.hyper.mu = mu;
                            ul.hyper.validate().map_err(|e| invalid(e.to_string()))?;
                        }
                    }
                }
                Ok(Network::new(out))
            }
            NetworkConfig::ConvStack {
                in_channels,
                channels,
                kernel,
                padding,
                ul,
            } => {
                let spec = ConvStackSpec {
                    in_channels: *in_channels,
                    channels: channels.clone(),
                    kernel: *kernel,
                    padding: (*padding).into(),
                    covariance: ul.channel_covariance(),
                };
                models::conv_stack(&spec, ul.hyper(), &mut rng).map_err(|e| invalid(e.to_string()))
            }
        }
    }
}

/// Forwards one zero frame of `shape` to check that the layers fit together.
pub fn check_input_shape(net: &Network, shape: &[usize]) -> Result<Vec<usize>, ConfigError> {
    net.forward(&Tensor::zeros(shape))
        .map(|y| y.shape().to_vec())
        .map_err(|e| invalid(format!("network does not accept frames of shape {shape:?}: {e}")))
}

/// The rotating-points setup: 56 inputs → 2 outputs with a UL layer,
/// trained on one revolution and evaluated on an independent point cloud.
pub fn rotation_experiment() -> ExperimentConfig {
    let train = RotatingPointsSpec::default();
    ExperimentConfig {
        seed: Some(0),
        network: NetworkConfig::Stages {
            stages: vec![StageConfig {
                layer: LayerConfig::Linear {
                    inputs: 2 * train.num_points,
                    outputs: 2,
                },
                ul: Some(UlConfig {
                    mu: 0.5,
                    eps: 0.001,
                    ..UlConfig::default()
                }),
            }],
            depth_mu_schedule: false,
        },
        dataset: train.into(),
        test_dataset: Some(RotatingPointsSpec { seed: 1, ..train }.into()),
        train: TrainSection {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.1,
            epochs: 20,
            input_noise: 0.0,
        },
        eval: EvalSpec::DecodeAngle,
    }
}

/// The moving-square localization setup with the default conv stack.
pub fn localization_experiment() -> ExperimentConfig {
    let train = MovingSquareSpec {
        height: 32,
        width: 32,
        square: 4,
        ..MovingSquareSpec::default()
    };
    ExperimentConfig {
        seed: Some(0),
        network: NetworkConfig::ConvStack {
            in_channels: 1,
            channels: default_channels(),
            kernel: default_kernel(),
            padding: PaddingConfig::Same,
            ul: UlConfig::default(),
        },
        dataset: train.into(),
        test_dataset: Some(MovingSquareSpec { seed: 1, ..train }.into()),
        train: TrainSection {
            learning_rate: 1e-7,
            momentum: 0.9,
            weight_decay: 0.01,
            epochs: 5,
            input_noise: 0.0,
        },
        eval: EvalSpec::Localize,
    }
}
