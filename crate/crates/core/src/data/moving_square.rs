use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, DatasetMeta, GroundTruth, Sequence, SequenceDataset};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Trajectory {
    /// Constant integer velocity, reflecting off the image border.
    #[default]
    LinearBounce,
    /// Independent integer steps in `[-2, 2]` per axis, reflected at the border.
    RandomWalk,
    /// The square never moves.
    Static,
}

/// White square on a black background.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MovingSquareSpec {
    pub height: usize,
    pub width: usize,
    pub square: usize,
    pub trajectory: Trajectory,
    pub frames_per_sequence: usize,
    pub sequences: usize,
    pub seed: u64,
}

impl Default for MovingSquareSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            square: 8,
            trajectory: Trajectory::LinearBounce,
            frames_per_sequence: 25,
            sequences: 10,
            seed: 0,
        }
    }
}

impl MovingSquareSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.square == 0 {
            return Err(DataError::InvalidSpec("square size must be positive"));
        }
        if self.square > self.height || self.square > self.width {
            return Err(DataError::InvalidSpec("square does not fit inside the image"));
        }
        if self.frames_per_sequence == 0 {
            return Err(DataError::InvalidSpec("need at least one frame per sequence"));
        }
        Ok(())
    }
}

/// Reflects `pos + step` into `[0, max]`, flipping `step` on a bounce.
fn reflect(pos: i64, step: &mut i64, max: i64) -> i64 {
    if max == 0 {
        return 0;
    }
    let mut p = pos + *step;
    loop {
        if p < 0 {
            p = -p;
            *step = -*step;
        } else if p > max {
            p = 2 * max - p;
            *step = -*step;
        } else {
            return p;
        }
    }
}

fn nonzero_velocity(rng: &mut ChaCha8Rng) -> i64 {
    let v: i64 = rng.gen_range(1..=3);
    if rng.gen_bool(0.5) {
        v
    } else {
        -v
    }
}

pub fn gen_moving_square(spec: &MovingSquareSpec) -> Result<SequenceDataset, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_r = (spec.height - spec.square) as i64;
    let max_c = (spec.width - spec.square) as i64;
    let half = (spec.square as f64 - 1.0) / 2.0;
    let mut sequences = Vec::with_capacity(spec.sequences);
    for _ in 0..spec.sequences {
        let mut r = rng.gen_range(0..=max_r);
        let mut c = rng.gen_range(0..=max_c);
        let (mut vr, mut vc) = (nonzero_velocity(&mut rng), nonzero_velocity(&mut rng));
        let mut frames = Vec::with_capacity(spec.frames_per_sequence);
        let mut centroids = Vec::with_capacity(spec.frames_per_sequence);
        for t in 0..spec.frames_per_sequence {
            if t > 0 {
                match spec.trajectory {
                    Trajectory::LinearBounce => {
                        r = reflect(r, &mut vr, max_r);
                        c = reflect(c, &mut vc, max_c);
                    }
                    Trajectory::RandomWalk => {
                        let mut sr = rng.gen_range(-2..=2);
                        let mut sc = rng.gen_range(-2..=2);
                        r = reflect(r, &mut sr, max_r);
                        c = reflect(c, &mut sc, max_c);
                    }
                    Trajectory::Static => {}
                }
            }
            frames.push(render(spec, r as usize, c as usize));
            centroids.push((r as f64 + half, c as f64 + half));
        }
        sequences.push(Sequence {
            frames,
            ground_truth: Some(GroundTruth::Centroids(centroids)),
        });
    }
    Ok(SequenceDataset {
        sequences,
        meta: DatasetMeta::MovingSquare(*spec),
    })
}

fn render(spec: &MovingSquareSpec, top: usize, left: usize) -> Tensor {
    let mut img = vec![0.0; spec.height * spec.width];
    for row in top..top + spec.square {
        img[row * spec.width + left..row * spec.width + left + spec.square]
            .iter_mut()
            .for_each(|v| *v = 1.0);
    }
    Tensor::new(vec![1, spec.height, spec.width], img).expect("consistent frame shape")
}
