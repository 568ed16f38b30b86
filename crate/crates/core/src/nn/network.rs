use alloc::vec::Vec;

use super::{tanh_backward, tanh_forward, Conv2dLayer, LinearLayer, NnError, SgdConfig, Tensor};
use crate::ul::{self, UlError, UlLayer};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(LinearLayer),
    Conv2d(Conv2dLayer),
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Linear,
    Conv2d,
    Tanh,
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::Tanh => LayerKind::Tanh,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        match self {
            Layer::Linear(l) => l.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::Tanh => Ok(tanh_forward(x)),
        }
    }

    fn is_finite(&self) -> bool {
        let all = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Layer::Linear(l) => l.weight.is_finite() && all(&l.bias) && all(&l.weight_velocity),
            Layer::Conv2d(c) => all(&c.kernels) && all(&c.bias) && all(&c.kernel_velocity),
            Layer::Tanh => true,
        }
    }
}

/// A regular layer, optionally followed by a UL layer on its output.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub layer: Layer,
    pub ul: Option<UlLayer>,
}

impl Stage {
    pub fn plain(layer: Layer) -> Self {
        Self { layer, ul: None }
    }

    pub fn with_ul(layer: Layer, ul: UlLayer) -> Self {
        Self { layer, ul: Some(ul) }
    }
}

/// Norms of the local gradients produced by one training step, one entry
/// per attached UL layer (bottom to top).
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub local_grad_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    pub stages: Vec<Stage>,
}

impl Network {
    pub fn new(stages: Vec<Stage>) -> Self {
        Self { stages }
    }

    pub fn ul_count(&self) -> usize {
        self.stages.iter().filter(|s| s.ul.is_some()).count()
    }

    /// Clears all UL statistics, e.g. at a sequence boundary.
    pub fn reset_ul(&mut self) {
        for s in &mut self.stages {
            if let Some(ul) = &mut s.ul {
                ul.reset();
            }
        }
    }

    /// Inference only; UL statistics are untouched.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let mut cur = x.clone();
        for s in &self.stages {
            cur = s.layer.forward(&cur)?;
        }
        Ok(cur)
    }

    /// Parameters, optimizer slots and UL statistics are all finite.
    pub fn is_finite(&self) -> bool {
        self.stages
            .iter()
            .all(|s| s.layer.is_finite() && s.ul.as_ref().map_or(true, UlLayer::is_finite))
    }

    /// One online step on a single frame.
    ///
    /// Forward through every regular layer, let each UL layer update its
    /// statistics and emit a local gradient, then walk back down merging
    /// local and upstream gradients and updating each layer's parameters.
    pub fn train_step(&mut self, x: &Tensor, sgd: &SgdConfig) -> Result<StepReport, UlError> {
        let n = self.stages.len();
        let mut acts: Vec<Tensor> = Vec::with_capacity(n + 1);
        acts.push(x.clone());
        for s in &self.stages {
            let out = s.layer.forward(acts.last().expect("non-empty"))?;
            acts.push(out);
        }

        let mut local: Vec<Option<Tensor>> = Vec::with_capacity(n);
        let mut norms = Vec::new();
        for (i, s) in self.stages.iter_mut().enumerate() {
            match &mut s.ul {
                Some(ul) => {
                    let g = ul.forward(&acts[i + 1])?;
                    norms.push(g.norm());
                    local.push(Some(g));
                }
                None => local.push(None),
            }
        }

        let Some(top) = acts.last() else {
            return Ok(StepReport { local_grad_norms: norms });
        };
        let mut grad = Tensor::zeros(top.shape());
        for i in (0..n).rev() {
            let stage = &mut self.stages[i];
            if let (Some(ul), Some(lg)) = (&stage.ul, &local[i]) {
                grad = ul::ul_backward(lg, &grad, &ul.hyper)?;
            }
            let input = &acts[i];
            grad = match &mut stage.layer {
                Layer::Linear(l) => {
                    let (gx, g) = l.backward(input, &grad)?;
                    l.apply(&g, sgd)?;
                    gx
                }
                Layer::Conv2d(c) => {
                    let (gx, g) = c.backward(input, &grad)?;
                    c.apply(&g, sgd)?;
                    gx
                }
                Layer::Tanh => tanh_backward(&acts[i + 1], &grad)?,
            };
        }
        Ok(StepReport { local_grad_norms: norms })
    }
}
