//! Sequence datasets and the synthetic generators.

mod moving_square;
mod rotating;

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::nn::Tensor;

pub use moving_square::{gen_moving_square, MovingSquareSpec, Trajectory};
pub use rotating::{gen_rotating_points, RotatingPointsSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DataError {
    #[error("invalid generator setting: {0}")]
    InvalidSpec(&'static str),
    #[error("frame {frame} of sequence {sequence} has shape {actual:?}, expected {expected:?}")]
    InconsistentShape {
        sequence: usize,
        frame: usize,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("sequence {sequence} has {frames} frames but {labels} ground-truth rows")]
    GroundTruthLength {
        sequence: usize,
        frames: usize,
        labels: usize,
    },
}

/// Per-frame labels of synthetic data.
#[derive(Debug, Clone, PartialEq)]
pub enum GroundTruth {
    /// Rotation angle in radians.
    Angles(Vec<f64>),
    /// Object centroid as `(row, col)`.
    Centroids(Vec<(f64, f64)>),
}

impl GroundTruth {
    pub fn len(&self) -> usize {
        match self {
            GroundTruth::Angles(a) => a.len(),
            GroundTruth::Centroids(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Tensor>,
    pub ground_truth: Option<GroundTruth>,
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum DatasetMeta {
    RotatingPoints(RotatingPointsSpec),
    MovingSquare(MovingSquareSpec),
    #[default]
    External,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SequenceDataset {
    pub sequences: Vec<Sequence>,
    pub meta: DatasetMeta,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Sequence>, meta: DatasetMeta) -> Result<Self, DataError> {
        let ds = Self { sequences, meta };
        ds.validate()?;
        Ok(ds)
    }

    /// All frames share one shape; label counts match frame counts.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut expected: Option<&[usize]> = None;
        for (si, seq) in self.sequences.iter().enumerate() {
            for (fi, f) in seq.frames.iter().enumerate() {
                match expected {
                    None => expected = Some(f.shape()),
                    Some(e) if e != f.shape() => {
                        return Err(DataError::InconsistentShape {
                            sequence: si,
                            frame: fi,
                            expected: e.to_vec(),
                            actual: f.shape().to_vec(),
                        })
                    }
                    _ => {}
                }
            }
            if let Some(gt) = &seq.ground_truth {
                if gt.len() != seq.frames.len() {
                    return Err(DataError::GroundTruthLength {
                        sequence: si,
                        frames: seq.frames.len(),
                        labels: gt.len(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> Option<&[usize]> {
        self.frames().next().map(|f| f.shape())
    }

    pub fn frames(&self) -> impl Iterator<Item = &Tensor> {
        self.sequences.iter().flat_map(|s| s.frames.iter())
    }

    pub fn num_frames(&self) -> usize {
        self.sequences.iter().map(|s| s.frames.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_frames() == 0
    }
}

/// Standard deviation of every coordinate over all frames of a dataset.
pub fn coordinate_std(ds: &SequenceDataset) -> Vec<f64> {
    let Some(shape) = ds.frame_shape() else {
        return Vec::new();
    };
    let len: usize = shape.iter().product();
    let n = ds.num_frames() as f64;
    let mut mean = alloc::vec![0.0; len];
    for f in ds.frames() {
        for (m, &v) in mean.iter_mut().zip(f.data()) {
            *m += v / n;
        }
    }
    let mut var = alloc::vec![0.0; len];
    for f in ds.frames() {
        for ((s, &v), &m) in var.iter_mut().zip(f.data()).zip(&mean) {
            *s += (v - m) * (v - m) / n;
        }
    }
    var.into_iter().map(libm::sqrt).collect()
}

/// Adds zero-mean Gaussian noise with per-coordinate standard deviation `std`.
pub fn add_gaussian_noise<R: Rng + ?Sized>(frame: &mut Tensor, std: &[f64], rng: &mut R) {
    for (v, &s) in frame.data_mut().iter_mut().zip(std) {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
}
