use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcoh_core::data::{gen_rotating_points, RotatingPointsSpec};
use tcoh_core::linalg::{self, Matrix};
use tcoh_core::markov::{self, MarkovStats};
use tcoh_core::spectral::{self, ClosedFormResult};

fn random_sequence(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<usize> {
    // Visit every state at least once so the covariance is non-degenerate.
    let mut s: Vec<usize> = (0..n).collect();
    s.extend((0..len).map(|_| rng.gen_range(0..n)));
    s
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn cycle_stats(n: usize) -> MarkovStats {
    let mut states: Vec<usize> = (0..n).collect();
    states.push(0);
    MarkovStats::from_sequence(&states, n).unwrap()
}

fn check_optimality(stats: &MarkovStats, d: usize) -> ClosedFormResult {
    let cf = spectral::closed_form_embedding(stats, d, None).unwrap();
    let res = spectral::stationarity_residual(&cf.y, stats).unwrap();
    assert!(res < 1e-8, "residual {res}");
    let j = markov::objective_on_chain(&cf.y, stats).unwrap();
    assert!((j - cf.j_opt).abs() < 1e-8, "J {j} vs {}", cf.j_opt);
    cf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn summation_and_trace_forms_agree(seed in any::<u64>(), n in 3usize..12, d in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = random_sequence(&mut rng, n, 40);
        let stats = MarkovStats::from_sequence(&states, n).unwrap();
        let y = random_matrix(&mut rng, n, d);
        let a = markov::objective_on_chain(&y, &stats).unwrap();
        let b = markov::objective_pairwise(&y, &stats).unwrap();
        prop_assert!((a - b).abs() < 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn laplacian_kills_constants(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = MarkovStats::from_sequence(&random_sequence(&mut rng, n, 30), n).unwrap();
        let ones = vec![1.0; n];
        prop_assert!(stats.laplacian.matvec(&ones).iter().all(|v| v.abs() < 1e-14));
        prop_assert!(stats.laplacian.tr_matvec(&ones).iter().all(|v| v.abs() < 1e-14));
        prop_assert!((stats.p.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn reversal_keeps_laplacian(seed in any::<u64>(), n in 2usize..15) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let states = random_sequence(&mut rng, n, 30);
        let rev: Vec<usize> = states.iter().rev().cloned().collect();
        let a = MarkovStats::from_sequence(&states, n).unwrap();
        let b = MarkovStats::from_sequence(&rev, n).unwrap();
        prop_assert!(a.laplacian.sub(&b.laplacian).frobenius_norm() < 1e-15);
        prop_assert!(a.diag.sub(&b.diag).frobenius_norm() < 1e-15);
    }

    #[test]
    fn closed_form_is_stationary_and_optimal(seed in any::<u64>(), n in 4usize..14, d in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = MarkovStats::from_sequence(&random_sequence(&mut rng, n, 60), n).unwrap();
        let cf = spectral::closed_form_embedding(&stats, d, None).unwrap();
        prop_assert!(cf.lambdas.iter().all(|&l| l > 0.0));
        prop_assert!(cf.lambdas.windows(2).all(|w| w[0] <= w[1]));

        let j = markov::objective_on_chain(&cf.y, &stats).unwrap();
        prop_assert!((j - cf.j_opt).abs() < 1e-8);
        prop_assert!(spectral::stationarity_residual(&cf.y, &stats).unwrap() < 1e-8);

        // σ = (2Λ)⁻¹
        let sigma = markov::embedding_covariance(&cf.y, &stats).unwrap();
        let expect = Matrix::from_diag(&cf.lambdas.iter().map(|l| 0.5 / l).collect::<Vec<_>>());
        prop_assert!(sigma.sub(&expect).frobenius_norm() < 1e-8 * (1.0 + expect.frobenius_norm()));

        // PPᵀ = (2UᵀLU)⁻¹, with P recovered from Y = U P.
        let p_mat = cf.u.transpose().matmul(&stats.diag).matmul(&cf.y);
        let gram = cf.u.transpose().matmul(&stats.laplacian).matmul(&cf.u).scale(2.0).symmetrized();
        let ppt = p_mat.matmul(&p_mat.transpose());
        prop_assert!(ppt.matmul(&gram).sub(&Matrix::identity(d)).frobenius_norm() < 1e-8);

        // The constant vector is excluded: columns are D-orthogonal to 1.
        let w = cf.y.tr_matvec(&stats.p);
        prop_assert!(w.iter().all(|v| v.abs() < 1e-8));

        // Column scaling of U is absorbed.
        let scales: Vec<f64> = (0..d).map(|_| rng.gen_range(0.2..5.0)).collect();
        let scaled = cf.u.matmul(&Matrix::from_diag(&scales));
        let y2 = spectral::embedding_from_basis(&scaled, &stats.laplacian, None).unwrap();
        prop_assert!(y2.sub(&cf.y).frobenius_norm() < 1e-8 * (1.0 + cf.y.frobenius_norm()));

        // Beats 100 random competitors rescaled to the same covariance.
        let half = sqrt_pd(&sigma);
        for _ in 0..100 {
            let mut z = random_matrix(&mut rng, n, d);
            let mean = z.tr_matvec(&stats.p);
            for i in 0..n {
                for k in 0..d {
                    z[(i, k)] -= mean[k];
                }
            }
            let Ok(cz) = markov::embedding_covariance(&z, &stats) else { continue };
            let Ok(white) = linalg::inv_sqrt_sym(&cz.symmetrized()) else { continue };
            let comp = z.matmul(&white).matmul(&half);
            prop_assert!(j <= markov::objective_on_chain(&comp, &stats).unwrap() + 1e-9);
        }
    }
}

fn sqrt_pd(s: &Matrix) -> Matrix {
    let e = linalg::eig_sym(&s.symmetrized()).unwrap();
    let root: Vec<f64> = e.values.iter().map(|v| v.sqrt()).collect();
    e.vectors.matmul(&Matrix::from_diag(&root)).matmul(&e.vectors.transpose())
}

/// Gradient descent on the pairwise objective over all `3 × 1` embeddings.
fn brute_force_three_state(stats: &MarkovStats) -> Vec<f64> {
    let obj = |y: &[f64]| {
        let m = Matrix::from_vec(3, 1, y.to_vec()).unwrap();
        markov::objective_pairwise(&m, stats).unwrap_or(f64::INFINITY)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut best = (f64::INFINITY, vec![0.0; 3]);
    for _ in 0..5 {
        let mut y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
        for _ in 0..20000 {
            let g = tcoh_core::gradcheck::numeric_gradient(&y, 1e-6, obj);
            for (v, gv) in y.iter_mut().zip(&g) {
                *v -= 0.05 * gv;
            }
        }
        let j = obj(&y);
        if j < best.0 {
            best = (j, y);
        }
    }
    let y = best.1;
    let mean: f64 = y.iter().zip(&stats.p).map(|(a, b)| a * b).sum();
    y.iter().map(|v| v - mean).collect()
}

#[test]
fn three_state_closed_form_matches_brute_force() {
    let stats = MarkovStats::from_sequence(&markov::path_states(3), 3).unwrap();
    let cf = check_optimality(&stats, 1);
    let bf = brute_force_three_state(&stats);
    let y = cf.y.column(0);
    let sign = if bf[0] * y[0] < 0.0 { -1.0 } else { 1.0 };
    for (a, b) in y.iter().zip(&bf) {
        assert!((a - sign * b).abs() < 1e-6, "{y:?} vs {bf:?}");
    }
    assert!((cf.j_opt - (1.0 + 2f64.ln())).abs() < 1e-12);
}

#[test]
fn rotation_sequence_path_chain_is_optimal() {
    let ds = gen_rotating_points(&RotatingPointsSpec::default()).unwrap();
    let (states, n) = markov::states_by_identity(&ds.sequences[0].frames);
    assert_eq!(n, 72);
    assert_eq!(states, markov::path_states(72));
    let stats = MarkovStats::from_sequence(&states, n).unwrap();
    check_optimality(&stats, 2);
}

#[test]
fn seventy_two_cycle_embeds_as_circle() {
    let stats = cycle_stats(72);
    let cf = check_optimality(&stats, 2);
    for l in &cf.lambdas {
        assert!((l - (1.0 - (2.0 * PI / 72.0).cos())).abs() < 1e-10, "{l}");
    }
    let norms: Vec<f64> = (0..72).map(|i| linalg::norm2(cf.y.row(i))).collect();
    for r in &norms {
        assert!((r - norms[0]).abs() < 1e-8);
    }
    for i in 0..72 {
        let a = cf.y.row(i);
        let b = cf.y.row((i + 1) % 72);
        let cos = linalg::dot(a, b) / (norms[0] * norms[0]);
        assert!((cos.clamp(-1.0, 1.0).acos() - 2.0 * PI / 72.0).abs() < 1e-8);
    }
}

#[test]
fn identical_frames_close_the_rotation_into_a_cycle() {
    let ds = gen_rotating_points(&RotatingPointsSpec {
        num_revolutions: 2,
        ..RotatingPointsSpec::default()
    })
    .unwrap();
    // One turn plus the frame that closes it.
    let frames = &ds.sequences[0].frames[..73];
    let (states, n) = markov::states_by_identity(frames);
    assert_eq!(n, 72);
    let stats = MarkovStats::from_sequence(&states, n).unwrap();
    let cycle = cycle_stats(72);
    assert!(stats.laplacian.sub(&cycle.laplacian).frobenius_norm() < 1e-15);
}

#[test]
fn rotation_matrix_rotates_the_embedding() {
    let stats = cycle_stats(12);
    let r = spectral::rotation_2d(PI / 2.0);
    let plain = spectral::closed_form_embedding(&stats, 2, None).unwrap();
    let turned = spectral::closed_form_embedding(&stats, 2, Some(&r)).unwrap();
    assert!(plain.y.matmul(&r).sub(&turned.y).frobenius_norm() < 1e-12);
    let ja = markov::objective_on_chain(&plain.y, &stats).unwrap();
    let jb = markov::objective_on_chain(&turned.y, &stats).unwrap();
    assert!((ja - jb).abs() < 1e-12);
}
