use alloc::vec::Vec;

use super::{UlError, UlHyper};
use crate::linalg::{self, Matrix};

/// Statistics of a fully-connected UL layer; covariances are over the whole
/// output vector.
#[derive(Debug, Clone, PartialEq)]
pub struct UlStateVec {
    pub y_hat: Vec<f64>,
    pub y_bar: Vec<f64>,
    pub w: Matrix,
    pub b: Matrix,
    pub t: u64,
}

impl UlStateVec {
    /// `ŷ₀ = ȳ₀ = y`, `W₀ = B₀ = scale · I`.
    pub fn init(y: &[f64], scale: f64) -> Self {
        let d = y.len();
        let eye = Matrix::identity(d).scale(scale);
        Self {
            y_hat: y.to_vec(),
            y_bar: y.to_vec(),
            w: eye.clone(),
            b: eye,
            t: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.y_hat.len()
    }

    /// Averages first, then covariances, then the local gradient.
    pub fn forward(&mut self, y: &[f64], h: &UlHyper) -> Result<Vec<f64>, UlError> {
        let d = self.dim();
        if y.len() != d {
            return Err(UlError::ShapeMismatch {
                expected: alloc::vec![d],
                actual: alloc::vec![y.len()],
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(UlError::NonFinite);
        }
        let (mu, eps) = (h.mu, h.eps);
        for i in 0..d {
            // a + r(y − a) equals (1 − r)a + ry but leaves a fixed point exactly fixed.
            self.y_hat[i] += mu * (y[i] - self.y_hat[i]);
            self.y_bar[i] += eps * (y[i] - self.y_bar[i]);
        }
        let short: Vec<f64> = y.iter().zip(&self.y_hat).map(|(a, b)| a - b).collect();
        let long: Vec<f64> = self.y_hat.iter().zip(&self.y_bar).map(|(a, b)| a - b).collect();
        ema_outer(&mut self.w, &short, mu);
        ema_outer(&mut self.b, &long, eps);
        self.t += 1;

        let toward = linalg::solve(&self.w.add_diagonal(h.ridge), &short)?;
        let away = linalg::solve(&self.b.add_diagonal(h.ridge), &long)?;
        Ok(toward.iter().zip(&away).map(|(a, b)| a - b).collect())
    }
}

/// `M ← (1 − rate) M + rate · v vᵀ`, exactly symmetric.
fn ema_outer(m: &mut Matrix, v: &[f64], rate: f64) {
    let d = v.len();
    for i in 0..d {
        for j in 0..d {
            m[(i, j)] = (1.0 - rate) * m[(i, j)] + rate * (v[i] * v[j]);
        }
    }
}
