//! Batch form of the UL cost, `J = ½ (log det(W + δI) − log det(B + δI))`,
//! with segment means standing in for the short-term average and the global
//! mean for the long-term one. Its gradient with respect to the outputs is
//! what the online rule approximates frame by frame.

use alloc::vec::Vec;
use core::ops::Range;

use super::UlError;
use crate::linalg::{self, Matrix};

struct Moments {
    seg_means: Vec<Vec<f64>>,
    mean: Vec<f64>,
    w: Matrix,
    b: Matrix,
}

fn check_segments(n: usize, segments: &[Range<usize>]) -> Result<(), UlError> {
    if segments.is_empty() {
        return Err(UlError::BadSegments("no segments"));
    }
    let mut next = 0;
    for s in segments {
        if s.start != next {
            return Err(UlError::BadSegments("segments must tile 0..N in order"));
        }
        if s.end < s.start + 2 {
            return Err(UlError::BadSegments("every segment needs at least two outputs"));
        }
        next = s.end;
    }
    if next != n {
        return Err(UlError::BadSegments("segments must cover every output"));
    }
    Ok(())
}

fn moments(outputs: &Matrix, segments: &[Range<usize>]) -> Result<Moments, UlError> {
    let n = outputs.rows();
    let d = outputs.cols();
    check_segments(n, segments)?;
    let nf = n as f64;
    let mut mean = alloc::vec![0.0; d];
    for r in 0..n {
        for (m, &v) in mean.iter_mut().zip(outputs.row(r)) {
            *m += v / nf;
        }
    }
    let mut seg_means = Vec::with_capacity(segments.len());
    let mut w = Matrix::zeros(d, d);
    let mut b = Matrix::zeros(d, d);
    for seg in segments {
        let len = seg.len() as f64;
        let mut m = alloc::vec![0.0; d];
        for r in seg.clone() {
            for (a, &v) in m.iter_mut().zip(outputs.row(r)) {
                *a += v / len;
            }
        }
        for r in seg.clone() {
            let row = outputs.row(r);
            for i in 0..d {
                for j in 0..d {
                    w[(i, j)] += (row[i] - m[i]) * (row[j] - m[j]) / nf;
                }
            }
        }
        for i in 0..d {
            for j in 0..d {
                b[(i, j)] += len * (m[i] - mean[i]) * (m[j] - mean[j]) / nf;
            }
        }
        seg_means.push(m);
    }
    Ok(Moments {
        seg_means,
        mean,
        w: w.symmetrized(),
        b: b.symmetrized(),
    })
}

/// Batch UL objective over `N × d` outputs split into contiguous segments.
pub fn batch_objective(outputs: &Matrix, segments: &[Range<usize>], ridge: f64) -> Result<f64, UlError> {
    let m = moments(outputs, segments)?;
    let lw = linalg::log_det_pd(&m.w.add_diagonal(ridge))?;
    let lb = linalg::log_det_pd(&m.b.add_diagonal(ridge))?;
    Ok(0.5 * (lw - lb))
}

/// Gradient of [`batch_objective`] with respect to every output row:
/// row `j` of segment `i` is `(1/N) [(W+δI)⁻¹(y_j − ŷ_i) − (B+δI)⁻¹(ŷ_i − ȳ)]`.
pub fn batch_gradient(outputs: &Matrix, segments: &[Range<usize>], ridge: f64) -> Result<Matrix, UlError> {
    let m = moments(outputs, segments)?;
    let n = outputs.rows();
    let d = outputs.cols();
    let gw = linalg::cholesky(&m.w.add_diagonal(ridge))?;
    let gb = linalg::cholesky(&m.b.add_diagonal(ridge))?;
    let mut grad = Matrix::zeros(n, d);
    for (seg, seg_mean) in segments.iter().zip(&m.seg_means) {
        let spread: Vec<f64> = seg_mean.iter().zip(&m.mean).map(|(a, b)| a - b).collect();
        let away = linalg::cholesky_solve(&gb, &spread);
        for r in seg.clone() {
            let dev: Vec<f64> = outputs.row(r).iter().zip(seg_mean).map(|(a, b)| a - b).collect();
            let toward = linalg::cholesky_solve(&gw, &dev);
            for k in 0..d {
                grad[(r, k)] = (toward[k] - away[k]) / n as f64;
            }
        }
    }
    Ok(grad)
}
