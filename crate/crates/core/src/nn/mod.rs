//! Regular layers with hand-written forward and backward passes.
//!
//! Frames go through the network one at a time, so every layer works on a
//! single [`Tensor`] and keeps no activation cache of its own; the caller
//! hands the forward input back to `backward`.

mod activation;
mod conv;
mod linear;
mod network;
mod tensor;

use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

pub use activation::{tanh_backward, tanh_forward};
pub use conv::{Conv2dGrads, Conv2dLayer, Padding};
pub use linear::{LinearGrads, LinearLayer};
pub use network::{Layer, LayerKind, Network, Stage, StepReport};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("non-finite value")]
    NonFinite,
    #[error("kernel size {0} must be odd for same padding")]
    EvenKernel(usize),
    #[error("invalid optimizer setting: {0}")]
    InvalidSgd(&'static str),
}

/// Plain SGD with heavy-ball momentum and coupled L2 weight decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(NnError::InvalidSgd("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NnError::InvalidSgd("momentum must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(NnError::InvalidSgd("weight decay must be non-negative"));
        }
        Ok(())
    }
}

/// One optimizer step on a flat parameter block:
/// `v ← momentum·v + grad + decay·θ`, `θ ← θ − lr·v`.
///
/// `decay` selects whether weight decay applies (biases are exempt).
pub fn sgd_step(
    params: &mut [f64],
    grads: &[f64],
    velocities: &mut [f64],
    cfg: &SgdConfig,
    decay: bool,
) -> Result<(), NnError> {
    if grads.len() != params.len() || velocities.len() != params.len() {
        return Err(NnError::ShapeMismatch {
            expected: alloc::vec![params.len()],
            actual: alloc::vec![grads.len(), velocities.len()],
        });
    }
    let wd = if decay { cfg.weight_decay } else { 0.0 };
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(velocities.iter_mut()) {
        *v = cfg.momentum * *v + g + wd * *p;
        *p -= cfg.learning_rate * *v;
    }
    Ok(())
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    len: usize,
    fan_in: usize,
    fan_out: usize,
) -> Vec<f64> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    (0..len).map(|_| rng.gen_range(-bound..=bound)).collect()
}
