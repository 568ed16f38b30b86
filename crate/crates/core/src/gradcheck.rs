//! Central finite-difference checks of every analytic gradient in the crate.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::Matrix;
use crate::nn::{tanh_backward, tanh_forward, Conv2dLayer, LinearLayer, Padding, Tensor};
use crate::ul::{batch_gradient, batch_objective};

/// Step for layer checks.
pub const LAYER_STEP: f64 = 1e-5;
/// Step for the batch objective check.
pub const BATCH_STEP: f64 = 1e-6;
/// Ridge used by the batch objective check.
pub const BATCH_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Linear,
    Conv2d,
    Tanh,
    Batch,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Linear, Suite::Conv2d, Suite::Tanh, Suite::Batch];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Linear => "linear",
            Suite::Conv2d => "conv2d",
            Suite::Tanh => "tanh",
            Suite::Batch => "batch",
        }
    }

    /// Tolerance this suite is held to on its own.
    pub fn tolerance(self) -> f64 {
        match self {
            Suite::Linear | Suite::Conv2d => 1e-6,
            Suite::Tanh => 1e-8,
            Suite::Batch => 1e-5,
        }
    }

    pub fn parse(s: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|x| x.name() == s)
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub suite: Suite,
    pub instance: usize,
    /// Human-readable shape of the instance.
    pub label: String,
    /// Worst relative error over all gradient groups of the instance.
    pub rel_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Random instances per suite. Instance 0 uses fixed reference sizes.
    pub instances: usize,
    /// Perturbs the analytic gradient of one suite, to prove the check bites.
    pub corrupt: Option<Suite>,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 50,
            corrupt: None,
        }
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_gradient(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn corrupt(grad: &mut [f64], on: bool) {
    if on {
        if let Some(g) = grad.first_mut() {
            *g += 1e-3 * (1.0 + g.abs());
        }
    }
}

fn check_linear(rng: &mut ChaCha8Rng, instance: usize, bad: bool) -> CheckResult {
    let (inputs, outputs) = if instance == 0 {
        (5, 3)
    } else {
        (rng.gen_range(1..=10), rng.gen_range(1..=10))
    };
    let mut layer = LinearLayer::new(inputs, outputs, rng);
    layer.bias = uniform(rng, outputs);
    let x = Tensor::from_vec(uniform(rng, inputs));
    let gy = uniform(rng, outputs);
    let (gx, grads) = layer
        .backward(&x, &Tensor::from_vec(gy.clone()))
        .expect("consistent shapes");
    let mut gx = gx.into_data();
    corrupt(&mut gx, bad);

    let loss = |l: &LinearLayer, x: &[f64]| dot(l.forward(&Tensor::from_vec(x.to_vec())).expect("shape").data(), &gy);
    let nx = numeric_gradient(x.data(), LAYER_STEP, |v| loss(&layer, v));
    let nw = numeric_gradient(layer.weight.as_slice(), LAYER_STEP, |w| {
        let mut l = layer.clone();
        l.weight.as_mut_slice().copy_from_slice(w);
        loss(&l, x.data())
    });
    let nb = numeric_gradient(&layer.bias, LAYER_STEP, |b| {
        let mut l = layer.clone();
        l.bias.copy_from_slice(b);
        loss(&l, x.data())
    });
    let err = relative_error(&gx, &nx)
        .max(relative_error(&grads.weight, &nw))
        .max(relative_error(&grads.bias, &nb));
    CheckResult {
        suite: Suite::Linear,
        instance,
        label: alloc::format!("{inputs}->{outputs}"),
        rel_error: err,
    }
}

fn check_conv(rng: &mut ChaCha8Rng, instance: usize, bad: bool) -> CheckResult {
    let (cin, cout, k, h, w) = if instance == 0 {
        (2, 3, 3, 6, 5)
    } else {
        let k = [1, 3, 5][rng.gen_range(0..3)];
        (
            rng.gen_range(1..=3),
            rng.gen_range(1..=3),
            k,
            rng.gen_range(k..=8),
            rng.gen_range(k..=8),
        )
    };
    let padding = if instance % 2 == 0 { Padding::Same } else { Padding::Valid };
    let mut layer = Conv2dLayer::new(cin, cout, k, padding, rng).expect("odd kernel");
    layer.bias = uniform(rng, cout);
    let x = Tensor::new(vec![cin, h, w], uniform(rng, cin * h * w)).expect("shape");
    let out = layer.output_shape(x.shape()).expect("fits");
    let gy = Tensor::new(out.to_vec(), uniform(rng, out.iter().product())).expect("shape");
    let (gx, grads) = layer.backward(&x, &gy).expect("consistent shapes");
    let mut gk = grads.kernels.clone();
    corrupt(&mut gk, bad);

    let loss = |l: &Conv2dLayer, xv: &[f64]| {
        let t = Tensor::new(vec![cin, h, w], xv.to_vec()).expect("shape");
        dot(l.forward(&t).expect("shape").data(), gy.data())
    };
    let nx = numeric_gradient(x.data(), LAYER_STEP, |v| loss(&layer, v));
    let nk = numeric_gradient(&layer.kernels, LAYER_STEP, |kv| {
        let mut l = layer.clone();
        l.kernels.copy_from_slice(kv);
        loss(&l, x.data())
    });
    let nb = numeric_gradient(&layer.bias, LAYER_STEP, |b| {
        let mut l = layer.clone();
        l.bias.copy_from_slice(b);
        loss(&l, x.data())
    });
    let err = relative_error(gx.data(), &nx)
        .max(relative_error(&gk, &nk))
        .max(relative_error(&grads.bias, &nb));
    CheckResult {
        suite: Suite::Conv2d,
        instance,
        label: alloc::format!("{cin}x{h}x{w} k{k} -> {cout} {padding:?}"),
        rel_error: err,
    }
}

fn check_tanh(rng: &mut ChaCha8Rng, instance: usize, bad: bool) -> CheckResult {
    let n = if instance == 0 { 7 } else { rng.gen_range(1..=10) };
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let gy = uniform(rng, n);
    let y = tanh_forward(&Tensor::from_vec(x.clone()));
    let mut gx = tanh_backward(&y, &Tensor::from_vec(gy.clone()))
        .expect("same shape")
        .into_data();
    corrupt(&mut gx, bad);
    let nx = numeric_gradient(&x, LAYER_STEP, |v| {
        dot(tanh_forward(&Tensor::from_vec(v.to_vec())).data(), &gy)
    });
    CheckResult {
        suite: Suite::Tanh,
        instance,
        label: alloc::format!("{n}"),
        rel_error: relative_error(&gx, &nx),
    }
}

/// Splits `0..n` into `k` contiguous ranges of length at least 2.
fn random_segments(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<Range<usize>> {
    let mut lens = vec![2usize; k];
    for _ in 0..n - 2 * k {
        lens[rng.gen_range(0..k)] += 1;
    }
    let mut start = 0;
    lens.iter()
        .map(|&l| {
            let r = start..start + l;
            start += l;
            r
        })
        .collect()
}

fn check_batch(rng: &mut ChaCha8Rng, instance: usize, bad: bool) -> CheckResult {
    let (n, d, k) = if instance == 0 {
        (12, 3, 3)
    } else {
        let d = rng.gen_range(1..=4);
        let k = rng.gen_range(2..=6);
        (rng.gen_range((2 * k).max(d + 2)..=20), d, k)
    };
    let segs = random_segments(rng, n, k);
    let y = Matrix::from_vec(n, d, uniform(rng, n * d)).expect("finite");
    let analytic = batch_gradient(&y, &segs, BATCH_RIDGE).expect("valid segments");
    let mut a = analytic.into_vec();
    corrupt(&mut a, bad);
    let num = numeric_gradient(y.as_slice(), BATCH_STEP, |v| {
        let m = Matrix::from_vec(n, d, v.to_vec()).expect("finite");
        batch_objective(&m, &segs, BATCH_RIDGE).expect("valid segments")
    });
    CheckResult {
        suite: Suite::Batch,
        instance,
        label: alloc::format!("N={n} d={d} segments={k}"),
        rel_error: relative_error(&a, &num),
    }
}

/// Runs `opts.instances` instances of one suite. Each suite draws from its own
/// stream, so suites are independent of each other and of run order.
pub fn run_suite(suite: Suite, opts: &GradcheckOptions) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(suite as u64);
    let bad = opts.corrupt == Some(suite);
    (0..opts.instances)
        .map(|i| match suite {
            Suite::Linear => check_linear(&mut rng, i, bad),
            Suite::Conv2d => check_conv(&mut rng, i, bad),
            Suite::Tanh => check_tanh(&mut rng, i, bad),
            Suite::Batch => check_batch(&mut rng, i, bad),
        })
        .collect()
}

pub fn run_all(opts: &GradcheckOptions) -> Vec<CheckResult> {
    Suite::ALL.into_iter().flat_map(|s| run_suite(s, opts)).collect()
}

/// Largest error per suite, in [`Suite::ALL`] order.
pub fn worst_per_suite(results: &[CheckResult]) -> Vec<(Suite, f64)> {
    Suite::ALL
        .into_iter()
        .filter_map(|s| {
            results
                .iter()
                .filter(|r| r.suite == s)
                .map(|r| r.rel_error)
                .fold(None, |acc: Option<f64>, e| Some(acc.map_or(e, |a| a.max(e))))
                .map(|e| (s, e))
        })
        .collect()
}
