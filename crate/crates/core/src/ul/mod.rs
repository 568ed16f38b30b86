//! Unsupervised-learning (UL) layers.
//!
//! A UL layer sits on the output `y_t` of a regular layer and keeps four
//! running statistics: a short-term average `ŷ` (rate `μ`), a long-term
//! average `ȳ` (rate `ε`), the short-term covariance `W` of `y − ŷ` and the
//! long-term covariance `B` of `ŷ − ȳ`. At forward time it emits the local
//! gradient
//!
//! ```text
//! ∂J/∂y_t = (W_t + δI)⁻¹ (y_t − ŷ_t) − (B_t + δI)⁻¹ (ŷ_t − ȳ_t)
//! ```
//!
//! which the backward pass adds (scaled by the combine weight) to whatever
//! gradient arrives from the layers above. Descending it contracts the
//! short-term spread of the output and expands its long-term spread.

mod batch;
mod conv;
mod train;
mod vector;

use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::LinalgError;
use crate::nn::{NnError, Tensor};

pub use batch::{batch_gradient, batch_objective};
pub use conv::{ChannelCovariance, ChannelStats, UlStateConv};
pub use train::{train_online, EpochMetrics, InputNoise, TrainConfig, TrainError};
pub use vector::UlStateVec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum UlError {
    #[error("invalid UL hyperparameter: {0}")]
    InvalidHyper(&'static str),
    #[error("output shape {actual:?} does not match UL state shape {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("non-finite layer output")]
    NonFinite,
    #[error("UL layers accept rank-1 or rank-3 outputs, got shape {0:?}")]
    UnsupportedRank(Vec<usize>),
    #[error("invalid segments: {0}")]
    BadSegments(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Which way the local gradient is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientSign {
    /// Treat the local gradient as `∂J/∂y` and descend it.
    #[default]
    Descend,
    /// Flip the local gradient (ascends `J`); kept for sign experiments.
    Ascend,
}

impl GradientSign {
    pub fn factor(self) -> f64 {
        match self {
            GradientSign::Descend => 1.0,
            GradientSign::Ascend => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UlHyper {
    /// Short-term rate μ.
    pub mu: f64,
    /// Long-term rate ε, strictly below μ.
    pub eps: f64,
    /// Ridge δ added to covariance diagonals at solve time only.
    pub ridge: f64,
    /// λ, scale of the local gradient when merged with the upstream one.
    pub combine_weight: f64,
    pub sign: GradientSign,
    /// `W₀ = B₀ = init_scale · I`.
    pub init_scale: f64,
}

impl Default for UlHyper {
    fn default() -> Self {
        Self {
            mu: 0.5,
            eps: 0.001,
            ridge: 1e-6,
            combine_weight: 1.0,
            sign: GradientSign::Descend,
            init_scale: 1.0,
        }
    }
}

impl UlHyper {
    pub fn validate(&self) -> Result<(), UlError> {
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return Err(UlError::InvalidHyper("mu must lie in (0, 1]"));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(UlError::InvalidHyper("eps must lie in (0, 1)"));
        }
        if !(self.eps < self.mu) {
            return Err(UlError::InvalidHyper("eps must be smaller than mu"));
        }
        if !(self.ridge > 0.0) || !self.ridge.is_finite() {
            return Err(UlError::InvalidHyper("ridge must be positive"));
        }
        if !(self.combine_weight >= 0.0) || !self.combine_weight.is_finite() {
            return Err(UlError::InvalidHyper("combine weight must be non-negative"));
        }
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(UlError::InvalidHyper("initial covariance scale must be positive"));
        }
        Ok(())
    }
}

/// Depth-dependent short-term rates, ordered from the input upwards.
///
/// The topmost layer gets `mu_top`; each step towards the input doubles it,
/// clamped to 1.
pub fn depth_mu_schedule(mu_top: f64, layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|i| {
            let depth_from_top = (layers - 1 - i) as i32;
            (mu_top * libm::pow(2.0, depth_from_top as f64)).min(1.0)
        })
        .collect()
}

/// Running statistics of either variant.
#[derive(Debug, Clone, PartialEq)]
pub enum UlState {
    Vector(UlStateVec),
    Conv(UlStateConv),
}

impl UlState {
    pub fn steps(&self) -> u64 {
        match self {
            UlState::Vector(s) => s.t,
            UlState::Conv(s) => s.t,
        }
    }
}

/// A UL layer attached to the output of a regular layer.
///
/// Statistics are created lazily from the first output after a reset.
#[derive(Debug, Clone, PartialEq)]
pub struct UlLayer {
    pub hyper: UlHyper,
    /// Only used when the attached output is a feature map.
    pub covariance: ChannelCovariance,
    pub state: Option<UlState>,
}

impl UlLayer {
    pub fn new(hyper: UlHyper) -> Result<Self, UlError> {
        hyper.validate()?;
        Ok(Self {
            hyper,
            covariance: ChannelCovariance::Diagonal,
            state: None,
        })
    }

    pub fn with_covariance(mut self, covariance: ChannelCovariance) -> Self {
        self.covariance = covariance;
        self
    }

    pub fn reset(&mut self) {
        self.state = None;
    }

    pub fn is_finite(&self) -> bool {
        let all = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match &self.state {
            None => true,
            Some(UlState::Vector(s)) => all(&s.y_hat) && all(&s.y_bar) && s.w.is_finite() && s.b.is_finite(),
            Some(UlState::Conv(s)) => {
                s.y_hat.is_finite()
                    && s.y_bar.is_finite()
                    && match &s.stats {
                        ChannelStats::Diagonal { w_var, b_var } => all(w_var) && all(b_var),
                        ChannelStats::Full { w, b } => w.is_finite() && b.is_finite(),
                    }
            }
        }
    }

    /// Updates the statistics with `y` and returns the local gradient.
    pub fn forward(&mut self, y: &Tensor) -> Result<Tensor, UlError> {
        if !y.is_finite() {
            return Err(UlError::NonFinite);
        }
        if self.state.is_none() {
            self.state = Some(match y.rank() {
                1 => UlState::Vector(UlStateVec::init(y.data(), self.hyper.init_scale)),
                3 => UlState::Conv(UlStateConv::init(y, self.covariance, self.hyper.init_scale)?),
                _ => return Err(UlError::UnsupportedRank(y.shape().to_vec())),
            });
        }
        match self.state.as_mut().expect("initialized above") {
            UlState::Vector(s) => {
                if y.rank() != 1 {
                    return Err(UlError::ShapeMismatch {
                        expected: alloc::vec![s.dim()],
                        actual: y.shape().to_vec(),
                    });
                }
                Ok(Tensor::from_vec(s.forward(y.data(), &self.hyper)?))
            }
            UlState::Conv(s) => s.forward(y, &self.hyper),
        }
    }
}

/// Updates fully-connected UL statistics and returns the local gradient.
pub fn ul_forward_vec(state: &mut UlStateVec, y: &[f64], hyper: &UlHyper) -> Result<Vec<f64>, UlError> {
    state.forward(y, hyper)
}

/// Updates convolutional UL statistics and returns the local gradient.
pub fn ul_forward_conv(state: &mut UlStateConv, y: &Tensor, hyper: &UlHyper) -> Result<Tensor, UlError> {
    state.forward(y, hyper)
}

/// Backward stage of a UL layer: `upstream + λ · local`, with the configured sign.
pub fn ul_backward(local: &Tensor, upstream: &Tensor, hyper: &UlHyper) -> Result<Tensor, UlError> {
    local.same_shape(upstream)?;
    let scale = hyper.combine_weight * hyper.sign.factor();
    let mut out = upstream.clone();
    for (o, &l) in out.data_mut().iter_mut().zip(local.data()) {
        *o += scale * l;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn hyper_validation() {
        assert!(UlHyper::default().validate().is_ok());
        let bad = |f: fn(&mut UlHyper)| {
            let mut h = UlHyper::default();
            f(&mut h);
            h.validate().is_err()
        };
        assert!(bad(|h| h.mu = 0.0));
        assert!(bad(|h| h.mu = 1.5));
        assert!(bad(|h| h.eps = 0.6));
        assert!(bad(|h| h.ridge = 0.0));
        assert!(bad(|h| h.combine_weight = -1.0));
    }

    #[test]
    fn schedule_doubles_towards_input() {
        assert_eq!(depth_mu_schedule(0.125, 3), vec![0.5, 0.25, 0.125]);
        assert_eq!(depth_mu_schedule(0.5, 3), vec![1.0, 1.0, 0.5]);
        assert_eq!(depth_mu_schedule(0.3, 1), vec![0.3]);
    }

    #[test]
    fn backward_combination() {
        let local = Tensor::from_vec(vec![1.0, -2.0]);
        let up = Tensor::from_vec(vec![0.5, 0.5]);
        let zero = Tensor::zeros(&[2]);
        let h = UlHyper {
            combine_weight: 2.0,
            ..UlHyper::default()
        };
        assert_eq!(ul_backward(&local, &zero, &h).unwrap().data(), &[2.0, -4.0]);
        let inert = UlHyper {
            combine_weight: 0.0,
            ..UlHyper::default()
        };
        assert_eq!(ul_backward(&local, &up, &inert).unwrap(), up);
        let unit = UlHyper::default();
        assert_eq!(ul_backward(&local, &up, &unit).unwrap().data(), &[1.5, -1.5]);
        let flipped = UlHyper {
            sign: GradientSign::Ascend,
            ..UlHyper::default()
        };
        assert_eq!(ul_backward(&local, &zero, &flipped).unwrap().data(), &[-1.0, 2.0]);
        assert!(ul_backward(&local, &Tensor::zeros(&[3]), &unit).is_err());
    }

    #[test]
    fn layer_picks_variant_by_rank() {
        let mut ul = UlLayer::new(UlHyper::default()).unwrap();
        ul.forward(&Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(ul.state, Some(UlState::Vector(_))));
        assert!(ul.forward(&Tensor::zeros(&[1, 2, 1])).is_err());
        ul.reset();
        ul.forward(&Tensor::zeros(&[2, 3, 3])).unwrap();
        assert!(matches!(ul.state, Some(UlState::Conv(_))));
        ul.reset();
        assert!(matches!(
            ul.forward(&Tensor::zeros(&[2, 3])),
            Err(UlError::UnsupportedRank(_))
        ));
    }
}
