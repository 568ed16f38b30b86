use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{glorot_uniform, sgd_step, NnError, SgdConfig, Tensor};
use crate::linalg::Matrix;

/// Fully connected layer `y = W x + b`. Inputs of any rank are flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub weight_velocity: Vec<f64>,
    pub bias_velocity: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrads {
    /// Row-major `out × in`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearLayer {
    pub fn new<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let w = glorot_uniform(rng, inputs * outputs, inputs, outputs);
        Self::from_parts(Matrix::from_vec(outputs, inputs, w).expect("finite init"), vec![0.0; outputs])
    }

    /// # Panics
    /// If `bias.len() != weight.rows()`.
    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weight.rows(), bias.len());
        let n = weight.as_slice().len();
        let m = bias.len();
        Self {
            weight,
            bias,
            weight_velocity: vec![0.0; n],
            bias_velocity: vec![0.0; m],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor, NnError> {
        self.check_input(x)?;
        let mut y = self.weight.matvec(x.data());
        for (v, b) in y.iter_mut().zip(&self.bias) {
            *v += b;
        }
        Ok(Tensor::from_vec(y))
    }

    pub fn backward(&self, x: &Tensor, grad_y: &Tensor) -> Result<(Tensor, LinearGrads), NnError> {
        self.check_input(x)?;
        if grad_y.len() != self.outputs() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.outputs()],
                actual: grad_y.shape().to_vec(),
            });
        }
        let gy = grad_y.data();
        let grad_x = self.weight.tr_matvec(gy);
        let xin = x.data();
        let mut grad_w = Vec::with_capacity(self.weight.as_slice().len());
        for &g in gy {
            grad_w.extend(xin.iter().map(|&xv| g * xv));
        }
        let grad_x = Tensor::from_vec(grad_x).reshape(x.shape())?;
        Ok((
            grad_x,
            LinearGrads {
                weight: grad_w,
                bias: gy.to_vec(),
            },
        ))
    }

    pub fn apply(&mut self, grads: &LinearGrads, cfg: &SgdConfig) -> Result<(), NnError> {
        sgd_step(
            self.weight.as_mut_slice(),
            &grads.weight,
            &mut self.weight_velocity,
            cfg,
            true,
        )?;
        sgd_step(&mut self.bias, &grads.bias, &mut self.bias_velocity, cfg, false)
    }

    fn check_input(&self, x: &Tensor) -> Result<(), NnError> {
        if x.len() != self.inputs() {
            return Err(NnError::ShapeMismatch {
                expected: vec![self.inputs()],
                actual: x.shape().to_vec(),
            });
        }
        Ok(())
    }
}
