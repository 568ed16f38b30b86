//! Read-outs that measure what a trained network encodes: linear decoding of
//! rotation angles, mask-centroid localization, and orthogonal alignment of
//! two embeddings.

use alloc::vec::Vec;

use crate::linalg::{self, LinalgError, Matrix};
use crate::nn::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetFit {
    pub total_abs_error: f64,
    pub r2: f64,
}

/// Linear decoding of `sin θ` and `cos θ` from network outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeReport {
    pub sin: TargetFit,
    pub cos: TargetFit,
}

impl DecodeReport {
    /// Sum of both targets' total absolute errors.
    pub fn total_abs_error(&self) -> f64 {
        self.sin.total_abs_error + self.cos.total_abs_error
    }

    pub fn min_r2(&self) -> f64 {
        self.sin.r2.min(self.cos.r2)
    }
}

fn fit_target(x: &Matrix, target: &[f64]) -> Result<TargetFit, LinalgError> {
    let beta = linalg::least_squares(x, target)?;
    let pred = linalg::predict_linear(x, &beta);
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    let mut abs = 0.0;
    for (&t, &p) in target.iter().zip(&pred) {
        ss_res += (t - p) * (t - p);
        ss_tot += (t - mean) * (t - mean);
        abs += (t - p).abs();
    }
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(TargetFit {
        total_abs_error: abs,
        r2,
    })
}

/// Fits `sin θ` and `cos θ` by least squares on the outputs (one row per frame).
pub fn decode_angles(outputs: &Matrix, angles: &[f64]) -> Result<DecodeReport, LinalgError> {
    if outputs.rows() != angles.len() {
        return Err(LinalgError::DimensionMismatch {
            expected: outputs.rows(),
            actual: angles.len(),
        });
    }
    let sin: Vec<f64> = angles.iter().map(|&a| libm::sin(a)).collect();
    let cos: Vec<f64> = angles.iter().map(|&a| libm::cos(a)).collect();
    Ok(DecodeReport {
        sin: fit_target(outputs, &sin)?,
        cos: fit_target(outputs, &cos)?,
    })
}

/// Pearson correlation; `None` when either side has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / libm::sqrt(sxx * syy))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Centroid `(row, col)` of a mask-style output of shape `C × H × W`
/// (or `H × W`).
///
/// Each channel's background level is its median; the mask weight at a pixel
/// is the mean absolute deviation from that level across channels. Returns
/// `None` for a flat output.
pub fn intensity_centroid(output: &Tensor) -> Option<(f64, f64)> {
    let shape = output.shape();
    let (c, h, w) = match shape.len() {
        2 => (1, shape[0], shape[1]),
        3 => (shape[0], shape[1], shape[2]),
        _ => return None,
    };
    let hw = h * w;
    let mut weight = alloc::vec![0.0; hw];
    for ch in 0..c {
        let plane = &output.data()[ch * hw..(ch + 1) * hw];
        let mut sorted = plane.to_vec();
        let bg = median(&mut sorted);
        for (m, &v) in weight.iter_mut().zip(plane) {
            *m += (v - bg).abs() / c as f64;
        }
    }
    let total: f64 = weight.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let (mut r, mut col) = (0.0, 0.0);
    for (i, &m) in weight.iter().enumerate() {
        r += m * (i / w) as f64;
        col += m * (i % w) as f64;
    }
    Some((r / total, col / total))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizeReport {
    pub row_corr: Option<f64>,
    pub col_corr: Option<f64>,
    /// Frames whose output was flat and yielded no centroid.
    pub flat_frames: usize,
}

impl LocalizeReport {
    /// Mean of the per-axis correlations, with undefined ones counted as 0.
    pub fn correlation(&self) -> f64 {
        0.5 * (self.row_corr.unwrap_or(0.0) + self.col_corr.unwrap_or(0.0))
    }

    pub fn is_degenerate(&self) -> bool {
        self.row_corr.is_none() || self.col_corr.is_none()
    }
}

/// Correlates predicted output centroids with ground-truth centroids.
/// Flat outputs are skipped.
pub fn localize(outputs: &[Tensor], truth: &[(f64, f64)]) -> LocalizeReport {
    let mut pr = Vec::new();
    let mut pc = Vec::new();
    let mut tr = Vec::new();
    let mut tc = Vec::new();
    let mut flat = 0;
    for (o, &(r, c)) in outputs.iter().zip(truth) {
        match intensity_centroid(o) {
            Some((a, b)) => {
                pr.push(a);
                pc.push(b);
                tr.push(r);
                tc.push(c);
            }
            None => flat += 1,
        }
    }
    LocalizeReport {
        row_corr: pearson(&pr, &tr),
        col_corr: pearson(&pc, &tc),
        flat_frames: flat,
    }
}

fn centered(m: &Matrix) -> Matrix {
    let n = m.rows() as f64;
    let mut out = m.clone();
    for c in 0..m.cols() {
        let mean = m.column(c).iter().sum::<f64>() / n;
        for r in 0..m.rows() {
            out[(r, c)] -= mean;
        }
    }
    out
}

/// Result of aligning one embedding onto another.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// Centered source times `rotation`.
    pub aligned: Matrix,
    /// Orthogonal `d × d` map (reflections allowed).
    pub rotation: Matrix,
    /// Pearson correlation of each aligned column with the target column.
    pub correlations: Vec<f64>,
}

/// Orthogonal Procrustes: the orthogonal `Q` minimizing `‖S Q − T‖_F` over
/// centered embeddings, via the polar factor of `SᵀT`.
pub fn procrustes_align(source: &Matrix, target: &Matrix) -> Result<Alignment, LinalgError> {
    if source.rows() != target.rows() || source.cols() != target.cols() {
        return Err(LinalgError::DimensionMismatch {
            expected: target.rows() * target.cols(),
            actual: source.rows() * source.cols(),
        });
    }
    let s = centered(source);
    let t = centered(target);
    let m = s.transpose().matmul(&t);
    let q = m.matmul(&linalg::inv_sqrt_sym(&m.transpose().matmul(&m).symmetrized())?);
    let aligned = s.matmul(&q);
    let correlations = (0..t.cols())
        .map(|k| pearson(&aligned.column(k), &t.column(k)).unwrap_or(0.0))
        .collect();
    Ok(Alignment {
        aligned,
        rotation: q,
        correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn perfect_decoder() {
        let angles: Vec<f64> = (0..36).map(|k| k as f64 * 0.17).collect();
        let rows: Vec<Vec<f64>> = angles
            .iter()
            .map(|&a| vec![3.0 * libm::cos(a) + 1.0, -2.0 * libm::sin(a)])
            .collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let rep = decode_angles(&Matrix::from_rows(&refs), &angles).unwrap();
        assert!(rep.min_r2() > 1.0 - 1e-9);
        assert!(rep.total_abs_error() < 1e-6);
    }

    #[test]
    fn pearson_degenerate() {
        assert_eq!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), None);
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.5]).unwrap() - 0.9986).abs() < 1e-3);
    }

    #[test]
    fn centroid_of_block() {
        let mut t = Tensor::zeros(&[1, 6, 6]);
        for r in 1..3 {
            for c in 3..5 {
                t.data_mut()[r * 6 + c] = 1.0;
            }
        }
        assert_eq!(intensity_centroid(&t), Some((1.5, 3.5)));
        assert_eq!(intensity_centroid(&Tensor::zeros(&[1, 4, 4])), None);
    }

    #[test]
    fn constant_predictor_is_degenerate() {
        let outs = vec![Tensor::zeros(&[1, 4, 4]); 3];
        let rep = localize(&outs, &[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
        assert!(rep.is_degenerate());
        assert_eq!(rep.correlation(), 0.0);
        assert_eq!(rep.flat_frames, 3);
    }

    #[test]
    fn procrustes_recovers_rotation() {
        let src = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0], &[-1.0, 0.5], &[0.3, -1.0]]);
        let r = crate::spectral::rotation_2d(0.7);
        let tgt = src.matmul(&r);
        let al = procrustes_align(&src, &tgt).unwrap();
        assert!(al.rotation.sub(&r).frobenius_norm() < 1e-12);
        assert!(al.correlations.iter().all(|&c| c > 1.0 - 1e-12));
    }
}
