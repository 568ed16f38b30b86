use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::UlError;
use crate::data::{add_gaussian_noise, SequenceDataset};
use crate::nn::{Network, NnError, SgdConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("dataset has no frames")]
    EmptyDataset,
    #[error("network has no UL layer attached")]
    NoUlLayer,
    #[error("training diverged at epoch {epoch}, sequence {sequence}, frame {frame}")]
    Diverged {
        epoch: usize,
        sequence: usize,
        frame: usize,
    },
    #[error("noise has {actual} coordinates, frames have {expected}")]
    NoiseShape { expected: usize, actual: usize },
    #[error(transparent)]
    Ul(#[from] UlError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Gaussian input noise redrawn for every frame of every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNoise {
    /// Per-coordinate standard deviation.
    pub std: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sgd: SgdConfig,
    pub epochs: usize,
    /// Index of the first epoch to run; nonzero when resuming.
    pub start_epoch: usize,
    pub input_noise: Option<InputNoise>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean local-gradient norm per UL layer, bottom to top.
    pub ul_grad_norms: Vec<f64>,
    pub eval: Option<f64>,
}

/// Online training: every sequence starts from fresh UL statistics and its
/// frames are fed one at a time, each followed by a parameter update.
///
/// `eval` runs after every epoch and its value is recorded in the metrics.
pub fn train_online<F>(
    net: &mut Network,
    data: &SequenceDataset,
    cfg: &TrainConfig,
    mut eval: F,
) -> Result<Vec<EpochMetrics>, TrainError>
where
    F: FnMut(usize, &Network) -> Option<f64>,
{
    cfg.sgd.validate()?;
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let ul_count = net.ul_count();
    if ul_count == 0 {
        return Err(TrainError::NoUlLayer);
    }
    for s in &net.stages {
        if let Some(ul) = &s.ul {
            ul.hyper.validate()?;
        }
    }
    if let Some(noise) = &cfg.input_noise {
        let expected = data.frame_shape().map_or(0, |s| s.iter().product());
        if noise.std.len() != expected {
            return Err(TrainError::NoiseShape {
                expected,
                actual: noise.std.len(),
            });
        }
    }

    let mut metrics = Vec::with_capacity(cfg.epochs);
    for epoch in cfg.start_epoch..cfg.start_epoch + cfg.epochs {
        let mut noise_rng = cfg.input_noise.as_ref().map(|n| {
            let mut rng = ChaCha8Rng::seed_from_u64(n.seed);
            rng.set_stream(epoch as u64);
            rng
        });
        let mut sums = alloc::vec![0.0; ul_count];
        let mut count = 0usize;
        for (si, seq) in data.sequences.iter().enumerate() {
            net.reset_ul();
            for (fi, frame) in seq.frames.iter().enumerate() {
                let report = match (&cfg.input_noise, noise_rng.as_mut()) {
                    (Some(n), Some(rng)) => {
                        let mut noisy = frame.clone();
                        add_gaussian_noise(&mut noisy, &n.std, rng);
                        net.train_step(&noisy, &cfg.sgd)
                    }
                    _ => net.train_step(frame, &cfg.sgd),
                };
                let diverged = TrainError::Diverged {
                    epoch,
                    sequence: si,
                    frame: fi,
                };
                // Overflowed statistics can surface as a failed solve, so any
                // error with a non-finite network counts as divergence.
                let report = match report {
                    Ok(r) => r,
                    Err(UlError::NonFinite) => return Err(diverged),
                    Err(_) if !net.is_finite() => return Err(diverged),
                    Err(e) => return Err(e.into()),
                };
                if !net.is_finite() || report.local_grad_norms.iter().any(|v| !v.is_finite()) {
                    return Err(diverged);
                }
                for (s, v) in sums.iter_mut().zip(&report.local_grad_norms) {
                    *s += v;
                }
                count += 1;
            }
        }
        let ul_grad_norms = sums.iter().map(|s| s / count as f64).collect();
        let value = eval(epoch, net);
        metrics.push(EpochMetrics {
            epoch,
            ul_grad_norms,
            eval: value,
        });
    }
    Ok(metrics)
}
