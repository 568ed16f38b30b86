use alloc::vec;
use alloc::vec::Vec;

use super::{UlError, UlHyper};
use crate::linalg::{self, Matrix};
use crate::nn::Tensor;

/// How a convolutional UL layer pools second moments over feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelCovariance {
    /// One scalar variance per channel, averaged over spatial positions.
    #[default]
    Diagonal,
    /// Full `C × C` cross-channel covariance over spatial positions.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelStats {
    Diagonal { w_var: Vec<f64>, b_var: Vec<f64> },
    Full { w: Matrix, b: Matrix },
}

/// Statistics of a convolutional UL layer. Averages are kept per location,
/// covariances per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct UlStateConv {
    pub y_hat: Tensor,
    pub y_bar: Tensor,
    pub stats: ChannelStats,
    pub t: u64,
}

impl UlStateConv {
    pub fn init(y: &Tensor, mode: ChannelCovariance, scale: f64) -> Result<Self, UlError> {
        if y.rank() != 3 {
            return Err(UlError::UnsupportedRank(y.shape().to_vec()));
        }
        let c = y.shape()[0];
        let stats = match mode {
            ChannelCovariance::Diagonal => ChannelStats::Diagonal {
                w_var: vec![scale; c],
                b_var: vec![scale; c],
            },
            ChannelCovariance::Full => {
                let eye = Matrix::identity(c).scale(scale);
                ChannelStats::Full { w: eye.clone(), b: eye }
            }
        };
        Ok(Self {
            y_hat: y.clone(),
            y_bar: y.clone(),
            stats,
            t: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.y_hat.shape()[0]
    }

    pub fn forward(&mut self, y: &Tensor, h: &UlHyper) -> Result<Tensor, UlError> {
        if y.shape() != self.y_hat.shape() {
            return Err(UlError::ShapeMismatch {
                expected: self.y_hat.shape().to_vec(),
                actual: y.shape().to_vec(),
            });
        }
        if !y.is_finite() {
            return Err(UlError::NonFinite);
        }
        let (mu, eps) = (h.mu, h.eps);
        let c = self.channels();
        let hw = y.len() / c;
        let yv = y.data();
        {
            let yh = self.y_hat.data_mut();
            for (a, &v) in yh.iter_mut().zip(yv) {
                *a += mu * (v - *a);
            }
        }
        {
            let yb = self.y_bar.data_mut();
            for (a, &v) in yb.iter_mut().zip(yv) {
                *a += eps * (v - *a);
            }
        }
        let short: Vec<f64> = yv.iter().zip(self.y_hat.data()).map(|(a, b)| a - b).collect();
        let long: Vec<f64> = self
            .y_hat
            .data()
            .iter()
            .zip(self.y_bar.data())
            .map(|(a, b)| a - b)
            .collect();
        self.t += 1;

        let mut grad = vec![0.0; y.len()];
        match &mut self.stats {
            ChannelStats::Diagonal { w_var, b_var } => {
                for ch in 0..c {
                    let r = &short[ch * hw..(ch + 1) * hw];
                    let s = &long[ch * hw..(ch + 1) * hw];
                    let r2 = r.iter().map(|v| v * v).sum::<f64>() / hw as f64;
                    let s2 = s.iter().map(|v| v * v).sum::<f64>() / hw as f64;
                    w_var[ch] = (1.0 - mu) * w_var[ch] + mu * r2;
                    b_var[ch] = (1.0 - eps) * b_var[ch] + eps * s2;
                    let wd = w_var[ch] + h.ridge;
                    let bd = b_var[ch] + h.ridge;
                    for (k, g) in grad[ch * hw..(ch + 1) * hw].iter_mut().enumerate() {
                        *g = r[k] / wd - s[k] / bd;
                    }
                }
            }
            ChannelStats::Full { w, b } => {
                let rw = channel_second_moment(&short, c, hw);
                let sb = channel_second_moment(&long, c, hw);
                for i in 0..c {
                    for j in 0..c {
                        w[(i, j)] = (1.0 - mu) * w[(i, j)] + mu * rw[(i, j)];
                        b[(i, j)] = (1.0 - eps) * b[(i, j)] + eps * sb[(i, j)];
                    }
                }
                let gw = linalg::cholesky(&w.add_diagonal(h.ridge))?;
                let gb = linalg::cholesky(&b.add_diagonal(h.ridge))?;
                let mut rv = vec![0.0; c];
                let mut sv = vec![0.0; c];
                for p in 0..hw {
                    for ch in 0..c {
                        rv[ch] = short[ch * hw + p];
                        sv[ch] = long[ch * hw + p];
                    }
                    let a = linalg::cholesky_solve(&gw, &rv);
                    let bb = linalg::cholesky_solve(&gb, &sv);
                    for ch in 0..c {
                        grad[ch * hw + p] = a[ch] - bb[ch];
                    }
                }
            }
        }
        Ok(Tensor::new(y.shape().to_vec(), grad)?)
    }
}

/// `mean_p v[:, p] v[:, p]ᵀ` over spatial positions, exactly symmetric.
fn channel_second_moment(v: &[f64], c: usize, hw: usize) -> Matrix {
    let mut m = Matrix::zeros(c, c);
    for i in 0..c {
        for j in i..c {
            let a = &v[i * hw..(i + 1) * hw];
            let b = &v[j * hw..(j + 1) * hw];
            let s = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / hw as f64;
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    m
}
