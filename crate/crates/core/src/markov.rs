//! Markov-chain statistics of an observed state sequence.
//!
//! A sequence `s_0, s_1, ..., s_{m-1}` over `n` states yields the empirical
//! adjacent-pair distribution `p_ij`, the stationary distribution `p_i`
//! (occupancy of pair endpoints) and from them the chain Laplacian `L` and
//! the diagonal `D = diag(p)`.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("need at least one transition, got {0} states")]
    TooShort(usize),
    #[error("state index {index} at position {position} is out of range for {n} states")]
    StateOutOfRange { position: usize, index: usize, n: usize },
    #[error("embedding has {rows} rows but the chain has {n} states")]
    RowMismatch { rows: usize, n: usize },
    #[error("embedding covariance is degenerate: {0}")]
    DegenerateCovariance(LinalgError),
}

/// Chain statistics; see the module docs for the construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovStats {
    pub n: usize,
    /// Stationary distribution.
    pub p: Vec<f64>,
    /// Adjacent-pair distribution, `pair[(i, j)]` for the transition `i -> j`.
    pub pair: Matrix,
    pub laplacian: Matrix,
    pub diag: Matrix,
}

impl MarkovStats {
    pub fn from_sequence(states: &[usize], n: usize) -> Result<Self, MarkovError> {
        stats_from_sequence(states, n)
    }
}

pub fn stats_from_sequence(states: &[usize], n: usize) -> Result<MarkovStats, MarkovError> {
    stats_from_sequences(&[states], n)
}

/// Pools the transitions of several independent sequences over one state set.
/// No transition links the end of one sequence to the start of the next.
pub fn stats_from_sequences<S: AsRef<[usize]>>(sequences: &[S], n: usize) -> Result<MarkovStats, MarkovError> {
    let mut count = 0usize;
    let mut position = 0usize;
    let mut pair = Matrix::zeros(n, n);
    for seq in sequences {
        let states = seq.as_ref();
        if let Some((i, &index)) = states.iter().enumerate().find(|(_, &s)| s >= n) {
            return Err(MarkovError::StateOutOfRange {
                position: position + i,
                index,
                n,
            });
        }
        for w in states.windows(2) {
            pair[(w[0], w[1])] += 1.0;
            count += 1;
        }
        position += states.len();
    }
    if count == 0 {
        return Err(MarkovError::TooShort(position));
    }
    let transitions = count as f64;
    let pair = pair.scale(1.0 / transitions);

    // p_i = Σ_j (p_ij + p_ji) / 2, so every pair contributes half a unit of
    // mass to each endpoint and Σ p = 1.
    let mut p = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let half = 0.5 * pair[(i, j)];
            p[i] += half;
            p[j] += half;
        }
    }

    let mut laplacian = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            laplacian[(i, j)] = if i == j {
                p[i] - pair[(i, i)]
            } else {
                -0.5 * (pair[(i, j)] + pair[(j, i)])
            };
        }
    }
    let diag = Matrix::from_diag(&p);
    Ok(MarkovStats {
        n,
        p,
        pair,
        laplacian,
        diag,
    })
}

/// Path chain over `m` distinct frames: `0, 1, ..., m-1`.
pub fn path_states(m: usize) -> Vec<usize> {
    (0..m).collect()
}

/// Assigns one state per distinct frame, in order of first appearance.
///
/// Frames compare by exact equality, so a noise-free periodic sequence
/// closes into a cycle while a sequence of distinct frames is a path.
/// Returns the state sequence and the number of states.
pub fn states_by_identity<F: AsRef<[f64]>>(frames: &[F]) -> (Vec<usize>, usize) {
    let mut reps: Vec<&[f64]> = Vec::new();
    let mut states = Vec::with_capacity(frames.len());
    for f in frames {
        let f = f.as_ref();
        let s = match reps.iter().position(|r| *r == f) {
            Some(s) => s,
            None => {
                reps.push(f);
                reps.len() - 1
            }
        };
        states.push(s);
    }
    (states, reps.len())
}

/// Covariance `YᵀDY − (Yᵀp)(Yᵀp)ᵀ` of an embedding under the stationary law.
pub fn embedding_covariance(y: &Matrix, stats: &MarkovStats) -> Result<Matrix, MarkovError> {
    if y.rows() != stats.n {
        return Err(MarkovError::RowMismatch {
            rows: y.rows(),
            n: stats.n,
        });
    }
    let d = y.cols();
    let mean = y.tr_matvec(&stats.p);
    let mut cov = Matrix::zeros(d, d);
    for i in 0..stats.n {
        let row = y.row(i);
        let w = stats.p[i];
        for a in 0..d {
            for b in 0..d {
                cov[(a, b)] += w * row[a] * row[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..d {
            cov[(a, b)] -= mean[a] * mean[b];
        }
    }
    Ok(cov.symmetrized())
}

/// Temporal-coherence objective in trace form,
/// `2 tr(YᵀLY) − log det(YᵀDY − YᵀppᵀY)`.
pub fn objective_on_chain(y: &Matrix, stats: &MarkovStats) -> Result<f64, MarkovError> {
    let cov = embedding_covariance(y, stats)?;
    let log_det = linalg::log_det_pd(&cov).map_err(MarkovError::DegenerateCovariance)?;
    let ly = stats.laplacian.matmul(y);
    let mut trace = 0.0;
    for i in 0..stats.n {
        trace += linalg::dot(y.row(i), ly.row(i));
    }
    Ok(2.0 * trace - log_det)
}

/// The same objective by direct summation over pairs,
/// `Σ_ij p_ij ‖y_j − y_i‖² − log det(cov)`.
pub fn objective_pairwise(y: &Matrix, stats: &MarkovStats) -> Result<f64, MarkovError> {
    let cov = embedding_covariance(y, stats)?;
    let log_det = linalg::log_det_pd(&cov).map_err(MarkovError::DegenerateCovariance)?;
    let mut coherence = 0.0;
    for i in 0..stats.n {
        for j in 0..stats.n {
            let pij = stats.pair[(i, j)];
            if pij == 0.0 {
                continue;
            }
            let dist: f64 = y
                .row(j)
                .iter()
                .zip(y.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            coherence += pij * dist;
        }
    }
    Ok(coherence - log_det)
}
