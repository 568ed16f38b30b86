use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{add_gaussian_noise, coordinate_std, DataError, DatasetMeta, GroundTruth, Sequence, SequenceDataset};
use crate::nn::Tensor;

/// Rigid point cloud rotating about its centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatingPointsSpec {
    pub num_points: usize,
    pub degrees_per_frame: f64,
    pub num_revolutions: usize,
    /// Noise standard deviation as a fraction of the clean per-coordinate std.
    pub noise_level: f64,
    pub seed: u64,
}

impl Default for RotatingPointsSpec {
    fn default() -> Self {
        Self {
            num_points: 28,
            degrees_per_frame: 5.0,
            num_revolutions: 1,
            noise_level: 0.0,
            seed: 0,
        }
    }
}

impl RotatingPointsSpec {
    pub fn frames_per_revolution(&self) -> usize {
        libm::round(360.0 / self.degrees_per_frame) as usize
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.num_points < 2 {
            return Err(DataError::InvalidSpec("need at least two points"));
        }
        if !(self.degrees_per_frame > 0.0 && self.degrees_per_frame <= 180.0) {
            return Err(DataError::InvalidSpec("degrees per frame must lie in (0, 180]"));
        }
        let per_rev = 360.0 / self.degrees_per_frame;
        if (per_rev - libm::round(per_rev)).abs() > 1e-9 {
            return Err(DataError::InvalidSpec("360 must be divisible by degrees per frame"));
        }
        if self.num_revolutions == 0 {
            return Err(DataError::InvalidSpec("need at least one revolution"));
        }
        if !(0.0..=0.5).contains(&self.noise_level) {
            return Err(DataError::InvalidSpec("noise level must lie in [0, 0.5]"));
        }
        Ok(())
    }

    /// Same spec without noise.
    pub fn clean(&self) -> Self {
        Self {
            noise_level: 0.0,
            ..*self
        }
    }
}

/// One sequence of `num_revolutions · 360 / degrees_per_frame` frames, each
/// the flattened `(x, y)` coordinates of all points.
pub fn gen_rotating_points(spec: &RotatingPointsSpec) -> Result<SequenceDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut pts: Vec<(f64, f64)> = (0..spec.num_points)
        .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
        .collect();
    let n = spec.num_points as f64;
    let cx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p.1).sum::<f64>() / n;
    for p in &mut pts {
        p.0 -= cx;
        p.1 -= cy;
    }

    let total = spec.frames_per_revolution() * spec.num_revolutions;
    let mut frames = Vec::with_capacity(total);
    let mut angles = Vec::with_capacity(total);
    for t in 0..total {
        // Reduce in degrees so that whole turns reproduce frame 0 exactly.
        let deg = (t as f64 * spec.degrees_per_frame) % 360.0;
        let theta = deg.to_radians();
        let (s, c) = (libm::sin(theta), libm::cos(theta));
        let mut data = Vec::with_capacity(2 * spec.num_points);
        for &(x, y) in &pts {
            data.push(c * x - s * y);
            data.push(s * x + c * y);
        }
        frames.push(Tensor::from_vec(data));
        angles.push(theta);
    }
    let mut ds = SequenceDataset {
        sequences: alloc::vec![Sequence {
            frames,
            ground_truth: Some(GroundTruth::Angles(angles)),
        }],
        meta: DatasetMeta::RotatingPoints(*spec),
    };
    if spec.noise_level > 0.0 {
        let std: Vec<f64> = coordinate_std(&ds).iter().map(|s| s * spec.noise_level).collect();
        // Noise draws come after the point draws, from the same stream.
        for f in ds.sequences[0].frames.iter_mut() {
            add_gaussian_noise(f, &std, &mut rng);
        }
    }
    Ok(ds)
}
