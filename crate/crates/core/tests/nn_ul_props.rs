use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tcoh_core::data::{gen_rotating_points, DatasetMeta, RotatingPointsSpec, Sequence, SequenceDataset};
use tcoh_core::gradcheck::{run_suite, GradcheckOptions, Suite};
use tcoh_core::linalg;
use tcoh_core::models;
use tcoh_core::nn::{Conv2dLayer, Layer, LinearLayer, Network, Padding, SgdConfig, Stage, Tensor};
use tcoh_core::ul::{
    train_online, ChannelCovariance, ChannelStats, TrainConfig, UlHyper, UlLayer, UlStateConv, UlStateVec,
};

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Direct cross-correlation with explicit zero padding.
fn naive_conv(layer: &Conv2dLayer, x: &Tensor) -> Vec<f64> {
    let (cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = layer.kernel_size();
    let pad = if layer.padding() == Padding::Same { (k / 2) as isize } else { 0 };
    let (oh, ow) = if pad > 0 { (h, w) } else { (h + 1 - k, w + 1 - k) };
    let mut out = Vec::new();
    for o in 0..layer.out_channels() {
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = layer.bias[o];
                for i in 0..cin {
                    for kr in 0..k {
                        for kc in 0..k {
                            let rr = r as isize + kr as isize - pad;
                            let cc = c as isize + kc as isize - pad;
                            if rr < 0 || cc < 0 || rr >= h as isize || cc >= w as isize {
                                continue;
                            }
                            let wv = layer.kernels[((o * cin + i) * k + kr) * k + kc];
                            acc += wv * x.data()[(i * h + rr as usize) * w + cc as usize];
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

#[test]
fn layer_gradients_match_finite_differences() {
    let opts = GradcheckOptions::default();
    for suite in [Suite::Linear, Suite::Conv2d, Suite::Tanh] {
        for r in run_suite(suite, &opts) {
            assert!(r.rel_error < suite.tolerance(), "{r:?}");
        }
    }
}

#[test]
fn batch_gradient_matches_finite_differences() {
    let results = run_suite(Suite::Batch, &GradcheckOptions::default());
    assert_eq!(results.len(), 50);
    for r in results {
        assert!(r.rel_error < 1e-5, "{r:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn linear_forward_matches_loops(seed in any::<u64>(), i in 1usize..10, o in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut l = LinearLayer::new(i, o, &mut rng);
        l.bias = uniform(&mut rng, o);
        let x = uniform(&mut rng, i);
        let y = l.forward(&Tensor::from_vec(x.clone())).unwrap();
        for r in 0..o {
            let expect: f64 = l.bias[r] + (0..i).map(|c| l.weight[(r, c)] * x[c]).sum::<f64>();
            prop_assert!((y.data()[r] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_forward_matches_loops(seed in any::<u64>(), cin in 1usize..4, cout in 1usize..4, k in prop::sample::select(vec![1usize, 3, 5]), h in 5usize..9, w in 5usize..9, same in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let padding = if same { Padding::Same } else { Padding::Valid };
        let mut l = Conv2dLayer::new(cin, cout, k, padding, &mut rng).unwrap();
        l.bias = uniform(&mut rng, cout);
        let x = Tensor::new(vec![cin, h, w], uniform(&mut rng, cin * h * w)).unwrap();
        let y = l.forward(&x).unwrap();
        let expect_shape = if same { vec![cout, h, w] } else { vec![cout, h + 1 - k, w + 1 - k] };
        prop_assert_eq!(y.shape(), &expect_shape[..]);
        let naive = naive_conv(&l, &x);
        for (a, b) in y.data().iter().zip(&naive) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(l.forward(&x).unwrap(), y);
    }

    #[test]
    fn vector_ul_statistics_stay_valid(seed in any::<u64>(), d in 1usize..5, steps in 1usize..40, mu in 0.05f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = UlHyper { mu, eps: mu * 0.01, ..UlHyper::default() };
        let first = uniform(&mut rng, d);
        let mut s = UlStateVec::init(&first, 1.0);
        let mut lo = first.clone();
        let mut hi = first.clone();
        for _ in 0..steps {
            let y = uniform(&mut rng, d);
            for k in 0..d {
                lo[k] = lo[k].min(y[k]);
                hi[k] = hi[k].max(y[k]);
            }
            s.forward(&y, &h).unwrap();
            prop_assert!(s.w.max_asymmetry() <= 1e-12);
            prop_assert!(s.b.max_asymmetry() <= 1e-12);
            prop_assert!(linalg::cholesky(&s.w.add_diagonal(h.ridge)).is_ok());
            prop_assert!(linalg::cholesky(&s.b.add_diagonal(h.ridge)).is_ok());
            for k in 0..d {
                let tol = 1e-12;
                prop_assert!(s.y_hat[k] >= lo[k] - tol && s.y_hat[k] <= hi[k] + tol);
                prop_assert!(s.y_bar[k] >= lo[k] - tol && s.y_bar[k] <= hi[k] + tol);
            }
        }
    }

    #[test]
    fn fixed_point_has_zero_gradient(seed in any::<u64>(), d in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = uniform(&mut rng, d);
        let mut s = UlStateVec::init(&y, 1.0);
        for _ in 0..5 {
            let g = s.forward(&y, &UlHyper::default()).unwrap();
            prop_assert!(g.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_pixel_conv_matches_vector(seed in any::<u64>(), steps in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = UlHyper { mu: 0.3, eps: 0.01, ..UlHyper::default() };
        let first = rng.gen_range(-1.0..1.0);
        let v = UlStateVec::init(&[first], 1.0);
        for mode in [ChannelCovariance::Diagonal, ChannelCovariance::Full] {
            let mut vv = v.clone();
            let mut c = UlStateConv::init(&Tensor::new(vec![1, 1, 1], vec![first]).unwrap(), mode, 1.0).unwrap();
            let mut r2 = ChaCha8Rng::seed_from_u64(seed ^ 1);
            for _ in 0..steps {
                let y: f64 = r2.gen_range(-1.0..1.0);
                let gv = vv.forward(&[y], &h).unwrap();
                let gc = c.forward(&Tensor::new(vec![1, 1, 1], vec![y]).unwrap(), &h).unwrap();
                prop_assert!((gv[0] - gc.data()[0]).abs() <= 1e-12 * (1.0 + gv[0].abs()));
                prop_assert!((vv.y_hat[0] - c.y_hat.data()[0]).abs() <= 1e-12);
                prop_assert!((vv.y_bar[0] - c.y_bar.data()[0]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn channel_permutation_is_equivariant(seed in any::<u64>(), steps in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, h, w) = (3, 4, 3);
        let perm = [2usize, 0, 1];
        let permute = |t: &Tensor| {
            let hw = h * w;
            let mut out = vec![0.0; t.len()];
            for (dst, &src) in perm.iter().enumerate() {
                out[dst * hw..(dst + 1) * hw].copy_from_slice(&t.data()[src * hw..(src + 1) * hw]);
            }
            Tensor::new(vec![c, h, w], out).unwrap()
        };
        for mode in [ChannelCovariance::Diagonal, ChannelCovariance::Full] {
            let first = Tensor::new(vec![c, h, w], uniform(&mut rng, c * h * w)).unwrap();
            let mut a = UlStateConv::init(&first, mode, 1.0).unwrap();
            let mut b = UlStateConv::init(&permute(&first), mode, 1.0).unwrap();
            for _ in 0..steps {
                let y = Tensor::new(vec![c, h, w], uniform(&mut rng, c * h * w)).unwrap();
                let ga = a.forward(&y, &UlHyper::default()).unwrap();
                let gb = b.forward(&permute(&y), &UlHyper::default()).unwrap();
                for (x, z) in permute(&ga).data().iter().zip(gb.data()) {
                    prop_assert!((x - z).abs() <= 1e-9 * (1.0 + x.abs()));
                }
                if let (ChannelStats::Diagonal { w_var: wa, .. }, ChannelStats::Diagonal { w_var: wb, .. }) = (&a.stats, &b.stats) {
                    for (dst, &src) in perm.iter().enumerate() {
                        prop_assert!((wa[src] - wb[dst]).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}

fn rotation_net(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    models::linear_ul(56, 2, UlHyper::default(), &mut rng).unwrap()
}

fn rotation_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        sgd: SgdConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 0.1,
        },
        epochs,
        start_epoch: 0,
        input_noise: None,
    }
}

#[test]
fn online_training_is_seed_deterministic() {
    let ds = gen_rotating_points(&RotatingPointsSpec::default()).unwrap();
    let run = || {
        let mut net = rotation_net(3);
        let m = train_online(&mut net, &ds, &rotation_config(3), |_, _| None).unwrap();
        (net, m)
    };
    let (na, ma) = run();
    let (nb, mb) = run();
    assert_eq!(na, nb);
    assert_eq!(ma, mb);
    let (nc, _) = {
        let mut net = rotation_net(4);
        let m = train_online(&mut net, &ds, &rotation_config(3), |_, _| None).unwrap();
        (net, m)
    };
    assert_ne!(na, nc);
}

fn repeated(frame: Tensor, n: usize) -> SequenceDataset {
    SequenceDataset::new(
        vec![Sequence {
            frames: vec![frame; n],
            ground_truth: None,
        }],
        DatasetMeta::External,
    )
    .unwrap()
}

#[test]
fn repeated_frame_without_decay_leaves_parameters_alone() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let frame = Tensor::from_vec(uniform(&mut rng, 56));
    let mut net = rotation_net(1);
    let before = net.clone();
    let mut cfg = rotation_config(2);
    cfg.sgd.weight_decay = 0.0;
    train_online(&mut net, &repeated(frame, 10), &cfg, |_, _| None).unwrap();
    for (a, b) in net.stages.iter().zip(&before.stages) {
        assert_eq!(a.layer, b.layer);
    }
}

#[test]
fn zero_frame_only_decays_weights() {
    let mut net = rotation_net(1);
    let w0 = match &net.stages[0].layer {
        Layer::Linear(l) => l.weight.clone(),
        _ => unreachable!(),
    };
    let cfg = TrainConfig {
        sgd: SgdConfig {
            learning_rate: 0.01,
            momentum: 0.0,
            weight_decay: 0.1,
        },
        ..rotation_config(1)
    };
    let steps = 5;
    train_online(&mut net, &repeated(Tensor::zeros(&[56]), steps), &cfg, |_, _| None).unwrap();
    let factor = (1.0f64 - 0.01 * 0.1).powi(steps as i32);
    match &net.stages[0].layer {
        Layer::Linear(l) => {
            assert!(l.weight.sub(&w0.scale(factor)).frobenius_norm() < 1e-12);
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
        _ => unreachable!(),
    }
}

#[test]
fn ul_layer_on_top_of_plain_stack() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::new(vec![
        Stage::plain(Layer::Linear(LinearLayer::new(4, 3, &mut rng))),
        Stage::plain(Layer::Tanh),
        Stage::with_ul(Layer::Linear(LinearLayer::new(3, 2, &mut rng)), UlLayer::new(UlHyper::default()).unwrap()),
    ]);
    let before = net.clone();
    let cfg = rotation_config(1);
    let frames: Vec<Tensor> = (0..6).map(|_| Tensor::from_vec(uniform(&mut rng, 4))).collect();
    let ds = SequenceDataset::new(
        vec![Sequence {
            frames,
            ground_truth: None,
        }],
        DatasetMeta::External,
    )
    .unwrap();
    let m = train_online(&mut net, &ds, &cfg, |_, _| None).unwrap();
    assert_eq!(m[0].ul_grad_norms.len(), 1);
    assert_ne!(net.stages[0].layer, before.stages[0].layer);
}
