//! Closed-form minimizer of the temporal-coherence objective on a chain.
//!
//! The optimum is `Y = U (2 UᵀLU)^{-1/2} R` where the columns of `U` are the
//! generalized eigenvectors of `(L, D)` for the `d` smallest nonzero
//! eigenvalues and `R` is any orthonormal `d × d` matrix. At the optimum the
//! objective equals `d + log det(2Λ)`.

use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};
use crate::markov::{self, MarkovError, MarkovStats};

/// Eigenvalues at or below this fraction of the largest one are treated as
/// the kernel of `L`.
pub const ZERO_EIGENVALUE_REL: f64 = 1e-10;

const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpectralError {
    #[error("embedding dimension must be positive")]
    ZeroDimension,
    #[error("requested {requested} dimensions but only {available} nonzero eigenvalues exist (spectrum {spectrum:?})")]
    InsufficientSpectrum {
        requested: usize,
        available: usize,
        spectrum: Vec<f64>,
    },
    #[error("rotation must be {d}x{d} orthonormal (deviation {deviation:e})")]
    NotOrthonormal { d: usize, deviation: f64 },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Markov(#[from] MarkovError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedFormResult {
    /// `n × d` embedding, one row per state.
    pub y: Matrix,
    /// `n × d` selected generalized eigenvectors, D-orthonormal.
    pub u: Matrix,
    /// The `d` smallest nonzero generalized eigenvalues, ascending.
    pub lambdas: Vec<f64>,
    /// `d + log det(2Λ)`.
    pub j_opt: f64,
}

/// Closed-form embedding of a chain into `d` dimensions.
pub fn closed_form_embedding(
    stats: &MarkovStats,
    d: usize,
    rotation: Option<&Matrix>,
) -> Result<ClosedFormResult, SpectralError> {
    if d == 0 {
        return Err(SpectralError::ZeroDimension);
    }
    if let Some(r) = rotation {
        check_orthonormal(r, d)?;
    }
    let eig = linalg::eig_gen_sym(&stats.laplacian, &stats.diag)?;
    let max = eig.values.iter().cloned().fold(0.0f64, f64::max);
    let floor = ZERO_EIGENVALUE_REL * max;
    let nonzero: Vec<usize> = (0..eig.values.len())
        .filter(|&k| eig.values[k] > floor)
        .collect();
    if nonzero.len() < d || max <= 0.0 {
        return Err(SpectralError::InsufficientSpectrum {
            requested: d,
            available: nonzero.len(),
            spectrum: eig.values,
        });
    }
    let chosen = &nonzero[..d];
    let u = eig.vectors.select_columns(chosen);
    let lambdas: Vec<f64> = chosen.iter().map(|&k| eig.values[k]).collect();
    let y = embedding_from_basis(&u, &stats.laplacian, rotation)?;
    let j_opt = d as f64 + lambdas.iter().map(|l| libm::log(2.0 * l)).sum::<f64>();
    Ok(ClosedFormResult {
        y,
        u,
        lambdas,
        j_opt,
    })
}

/// `U (2 UᵀLU)^{-1/2} R` for an arbitrary basis `U`.
///
/// Any column scaling of `U` is absorbed by the inverse square root, so `U`
/// need not be normalized.
pub fn embedding_from_basis(
    u: &Matrix,
    laplacian: &Matrix,
    rotation: Option<&Matrix>,
) -> Result<Matrix, SpectralError> {
    let d = u.cols();
    let gram = u.transpose().matmul(&laplacian.matmul(u)).scale(2.0).symmetrized();
    let mut p = linalg::inv_sqrt_sym(&gram)?;
    if let Some(r) = rotation {
        check_orthonormal(r, d)?;
        p = p.matmul(r);
    }
    Ok(u.matmul(&p))
}

fn check_orthonormal(r: &Matrix, d: usize) -> Result<(), SpectralError> {
    if r.rows() != d || r.cols() != d {
        return Err(SpectralError::NotOrthonormal {
            d,
            deviation: f64::INFINITY,
        });
    }
    let deviation = r
        .matmul(&r.transpose())
        .sub(&Matrix::identity(d))
        .frobenius_norm();
    if deviation > ORTHONORMAL_TOL {
        return Err(SpectralError::NotOrthonormal { d, deviation });
    }
    Ok(())
}

/// Frobenius norm of the first-order optimality condition
/// `4LY − 2(D − ppᵀ) Y σ⁻¹` with `σ = YᵀDY − YᵀppᵀY`.
pub fn stationarity_residual(y: &Matrix, stats: &MarkovStats) -> Result<f64, SpectralError> {
    let sigma = markov::embedding_covariance(y, stats)?;
    let sigma_inv = linalg::inverse_pd(&sigma)?;
    let lead = stats.laplacian.matmul(y).scale(4.0);
    // (D − ppᵀ) Y = DY − p (pᵀY)
    let mean = y.tr_matvec(&stats.p);
    let mut centered = stats.diag.matmul(y);
    for i in 0..stats.n {
        for (k, &m) in mean.iter().enumerate() {
            centered[(i, k)] -= stats.p[i] * m;
        }
    }
    let tail = centered.matmul(&sigma_inv).scale(2.0);
    Ok(lead.sub(&tail).frobenius_norm())
}

/// Rotation by `angle` radians in the plane.
pub fn rotation_2d(angle: f64) -> Matrix {
    let (s, c) = (libm::sin(angle), libm::cos(angle));
    Matrix::from_rows(&[&[c, -s], &[s, c]])
}
