use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{glorot_uniform, sgd_step, NnError, SgdConfig, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding; each spatial axis shrinks by `k - 1`.
    Valid,
    /// Zero padding of `(k - 1) / 2`; spatial shape is preserved.
    Same,
}

/// Stride-1 2-D cross-correlation over `C × H × W` tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dLayer {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    padding: Padding,
    /// `out × in × k × k`, row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
    pub kernel_velocity: Vec<f64>,
    pub bias_velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dGrads {
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Output index range along one axis for kernel offset `koff`.
#[inline]
fn span(out_len: usize, in_len: usize, pad: usize, koff: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(koff);
    let hi = (in_len + pad).saturating_sub(koff).min(out_len);
    (lo, hi.max(lo))
}

impl Conv2dLayer {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Result<Self, NnError> {
        let area = kernel * kernel;
        let w = glorot_uniform(
            rng,
            out_channels * in_channels * area,
            in_channels * area,
            out_channels * area,
        );
        Self::from_parts(in_channels, out_channels, kernel, padding, w, vec![0.0; out_channels])
    }

    pub fn from_parts(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: Padding,
        kernels: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, NnError> {
        if in_channels == 0 || out_channels == 0 || kernel == 0 {
            return Err(NnError::InvalidShape(vec![out_channels, in_channels, kernel, kernel]));
        }
        if padding == Padding::Same && kernel % 2 == 0 {
            return Err(NnError::EvenKernel(kernel));
        }
        let n = out_channels * in_channels * kernel * kernel;
        if kernels.len() != n || bias.len() != out_channels {
            return Err(NnError::ShapeMismatch {
                expected: vec![n, out_channels],
                actual: vec![kernels.len(), bias.len()],
            });
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            padding,
            kernel_velocity: vec![0.0; n],
            bias_velocity: vec![0.0; out_channels],
            kernels,
            bias,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel
    }

    pub fn padding(&self) -> Padding {
        self.padding
    }

    fn pad(&self) -> usize {
        match self.padding {
            Padding::Valid => 0,
            Padding::Same => (self.kernel - 1) / 2,
        }
    }

    /// Output shape for an input of shape `C × H × W`.
    pub fn output_shape(&self, input: &[usize]) -> Result<[usize; 3], NnError> {
        if input.len() != 3 || input[0] != self.in_channels {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.in_channels, 0, 0],
                actual: input.to_vec(),
            });
        }
        let (h, w) = (input[1], input[2]);
        match self.padding {
            Padding::Same => Ok([self.out_channels, h, w]),
            Padding::Valid => {
                if h < self.kernel || w < self.kernel {
                    return Err(NnError::ShapeMismatch {
                        expected: vec![self.in_channels, self.kernel, self.kernel],
                        actual: input.to_vec(),
                    });
                }
                Ok([self.out_channels, h - self.kernel + 1, w - self.kernel + 1])
            }
        }
    }

    #[inline]
    fn weight_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        let [oc_n, ho, wo] = self.output_shape(x.shape())?;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let pad = self.pad();
        let k = self.kernel;
        let xin = x.data();
        let mut out = vec![0.0; oc_n * ho * wo];
        for oc in 0..oc_n {
            let plane = &mut out[oc * ho * wo..(oc + 1) * ho * wo];
            plane.iter_mut().for_each(|v| *v = self.bias[oc]);
            for ic in 0..self.in_channels {
                let src = &xin[ic * h * w..(ic + 1) * h * w];
                for ky in 0..k {
                    let (oy_lo, oy_hi) = span(ho, h, pad, ky);
                    for kx in 0..k {
                        let wt = self.kernels[self.weight_index(oc, ic, ky, kx)];
                        let (ox_lo, ox_hi) = span(wo, w, pad, kx);
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let dst = &mut plane[oy * wo + ox_lo..oy * wo + ox_hi];
                            let s0 = iy * w + ox_lo + kx - pad;
                            let row = &src[s0..s0 + dst.len()];
                            for (d, &s) in dst.iter_mut().zip(row) {
                                *d += wt * s;
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![oc_n, ho, wo], out)
    }

    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, Conv2dGrads), NnError> {
        let out_shape = self.output_shape(x.shape())?;
        if grad_y.shape() != out_shape {
            return Err(NnError::ShapeMismatch {
                expected: out_shape.to_vec(),
                actual: grad_y.shape().to_vec(),
            });
        }
        let [oc_n, ho, wo] = out_shape;
        let (h, w) = (x.shape()[1], x.shape()[2]);
        let pad = self.pad();
        let k = self.kernel;
        let xin = x.data();
        let gy = grad_y.data();
        let mut grad_x = vec![0.0; xin.len()];
        let mut grad_k = vec![0.0; self.kernels.len()];
        let mut grad_b = vec![0.0; oc_n];
        for oc in 0..oc_n {
            let gplane = &gy[oc * ho * wo..(oc + 1) * ho * wo];
            grad_b[oc] = gplane.iter().sum();
            for ic in 0..self.in_channels {
                let base = ic * h * w;
                for ky in 0..k {
                    let (oy_lo, oy_hi) = span(ho, h, pad, ky);
                    for kx in 0..k {
                        let widx = self.weight_index(oc, ic, ky, kx);
                        let wt = self.kernels[widx];
                        let (ox_lo, ox_hi) = span(wo, w, pad, kx);
                        let len = ox_hi - ox_lo;
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy + ky - pad;
                            let g = &gplane[oy * wo + ox_lo..oy * wo + ox_hi];
                            let s0 = base + iy * w + ox_lo + kx - pad;
                            let xs = &xin[s0..s0 + len];
                            acc += g.iter().zip(xs).map(|(a, b)| a * b).sum::<f64>();
                            let gx = &mut grad_x[s0..s0 + len];
                            for (d, &gv) in gx.iter_mut().zip(g) {
                                *d += wt * gv;
                            }
                        }
                        grad_k[widx] += acc;
                    }
                }
            }
        }
        Ok((
            Tensor::new(x.shape().to_vec(), grad_x)?,
            Conv2dGrads {
                kernels: grad_k,
                bias: grad_b,
            },
        ))
    }

    pub fn apply(&mut self, grads: &Conv2dGrads, cfg: &SgdConfig) -> Result<(), NnError> {
        sgd_step(&mut self.kernels, &grads.kernels, &mut self.kernel_velocity, cfg, true)?;
        sgd_step(&mut self.bias, &grads.bias, &mut self.bias_velocity, cfg, false)
    }
}
