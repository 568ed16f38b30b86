//! Ready-made network layouts for the rotation and localization tasks.

use alloc::vec::Vec;

use rand::Rng;

use crate::nn::{Conv2dLayer, Layer, LinearLayer, NnError, Padding, Network, Stage};
use crate::ul::{depth_mu_schedule, ChannelCovariance, UlError, UlHyper, UlLayer};

/// A single linear map with a UL layer on its output.
pub fn linear_ul<R: Rng + ?Sized>(
    inputs: usize,
    outputs: usize,
    hyper: UlHyper,
    rng: &mut R,
) -> Result<Network, UlError> {
    let layer = Layer::Linear(LinearLayer::new(inputs, outputs, rng));
    Ok(Network::new(alloc::vec![Stage::with_ul(layer, UlLayer::new(hyper)?)]))
}

/// Shape of a convolutional stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackSpec {
    pub in_channels: usize,
    /// Output channels of each convolution, bottom to top.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub padding: Padding,
    pub covariance: ChannelCovariance,
}

impl Default for ConvStackSpec {
    fn default() -> Self {
        Self {
            in_channels: 1,
            channels: alloc::vec![8, 16, 16],
            kernel: 5,
            padding: Padding::Same,
            covariance: ChannelCovariance::Diagonal,
        }
    }
}

/// `conv → tanh` blocks, each tanh output carrying a UL layer.
///
/// `hyper.mu` is the top layer's rate; lower layers follow
/// [`depth_mu_schedule`].
pub fn conv_stack<R: Rng + ?Sized>(
    spec: &ConvStackSpec,
    hyper: UlHyper,
    rng: &mut R,
) -> Result<Network, UlError> {
    if spec.channels.is_empty() {
        return Err(UlError::Nn(NnError::InvalidShape(Vec::new())));
    }
    let mus = depth_mu_schedule(hyper.mu, spec.channels.len());
    let mut stages = Vec::with_capacity(2 * spec.channels.len());
    let mut cin = spec.in_channels;
    for (&cout, &mu) in spec.channels.iter().zip(&mus) {
        let conv = Conv2dLayer::new(cin, cout, spec.kernel, spec.padding, rng)?;
        stages.push(Stage::plain(Layer::Conv2d(conv)));
        let ul = UlLayer::new(UlHyper { mu, ..hyper })?.with_covariance(spec.covariance);
        stages.push(Stage::with_ul(Layer::Tanh, ul));
        cin = cout;
    }
    Ok(Network::new(stages))
}
