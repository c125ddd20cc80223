//! Layer-by-layer and end-to-end finite-difference checks in 64-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caer::layers::*;
use caer::training::gradcheck::{gradient_check, gradient_check_fusion, relative_error, GradCheckOptions};
use caer::{AblationFlags, ModelConfig, Scale, Tensor, Variant};

const H: f64 = 1e-6;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Values spaced at least 1e-3 apart, so ±H nudges never reorder them.
fn distinct(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 1e-2).collect();
    for i in (1..n).rev() {
        v.swap(i, rng.random_range(0..=i));
    }
    Tensor::from_vec(shape, v).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Central differences of `f` with respect to every element of `x`.
fn numeric(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let up = f(&probe);
        probe.data_mut()[i] = orig - H;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * H));
    }
    Tensor::from_vec(x.shape(), out).unwrap()
}

fn assert_grad(what: &str, analytic: &Tensor<f64>, numeric: &Tensor<f64>) {
    assert_eq!(analytic.shape(), numeric.shape(), "{what}");
    let worst = analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max);
    assert!(worst < TOL, "{what}: max relative error {worst:e}");
}

#[test]
fn conv_gradients_rank5_and_rank4() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (shape, kernel, padding) in [
        (vec![2, 2, 3, 5, 4], [3, 3, 3], [1, 1, 1]),
        (vec![1, 3, 4, 3, 5], [2, 1, 3], [0, 0, 2]),
        (vec![2, 2, 6, 7], [1, 3, 3], [0, 1, 1]),
    ] {
        let x = random(&shape, &mut rng);
        let p = ConvParams::new(random(&[3, shape[1], kernel[0], kernel[1], kernel[2]], &mut rng), random(&[3], &mut rng), padding)
            .unwrap();
        let y = conv_forward(&x, &p).unwrap();
        let w = random(y.shape(), &mut rng);
        let g = conv_backward(&x, &p, &w).unwrap();
        assert_grad("conv input", &g.d_input, &numeric(&x, |x| dot(&conv_forward(x, &p).unwrap(), &w)));
        let weight = numeric(&p.weight, |k| {
            let q = ConvParams { weight: k.clone(), ..p.clone() };
            dot(&conv_forward(&x, &q).unwrap(), &w)
        });
        assert_grad("conv weight", &g.d_params.weight, &weight);
        let bias = numeric(&p.bias, |b| {
            let q = ConvParams { bias: b.clone(), ..p.clone() };
            dot(&conv_forward(&x, &q).unwrap(), &w)
        });
        assert_grad("conv bias", &g.d_params.bias, &bias);
    }
}

#[test]
fn batchnorm_train_mode_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[3, 2, 2, 3, 3], &mut rng);
    let mut s = BatchNormState::<f64>::new(2);
    s.gamma = Tensor::from_vec(&[2], vec![0.7, 1.3]).unwrap();
    s.beta = Tensor::from_vec(&[2], vec![0.1, -0.4]).unwrap();
    let (y, cache) = batchnorm_forward(&x, &s, Mode::Train).unwrap();
    let w = random(y.shape(), &mut rng);
    let g = batchnorm_backward(&cache, &s, &w).unwrap();
    let loss = |x: &Tensor<f64>, s: &BatchNormState<f64>| dot(&batchnorm_forward(x, s, Mode::Train).unwrap().0, &w);
    assert_grad("bn input", &g.d_input, &numeric(&x, |x| loss(x, &s)));
    let gamma = numeric(&s.gamma, |t| loss(&x, &BatchNormState { gamma: t.clone(), ..s.clone() }));
    assert_grad("bn gamma", &g.d_params.gamma, &gamma);
    let beta = numeric(&s.beta, |t| loss(&x, &BatchNormState { beta: t.clone(), ..s.clone() }));
    assert_grad("bn beta", &g.d_params.beta, &beta);
}

#[test]
fn batchnorm_eval_mode_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&[2, 3, 1, 2, 2], &mut rng);
    let mut s = BatchNormState::<f64>::new(3);
    s.running_mean = random(&[3], &mut rng);
    s.running_var = Tensor::from_vec(&[3], vec![0.5, 1.5, 2.0]).unwrap();
    let (y, cache) = batchnorm_forward(&x, &s, Mode::Eval).unwrap();
    let w = random(y.shape(), &mut rng);
    let g = batchnorm_backward(&cache, &s, &w).unwrap();
    let n = numeric(&x, |x| dot(&batchnorm_forward(x, &s, Mode::Eval).unwrap().0, &w));
    assert_grad("bn eval input", &g.d_input, &n);
}

#[test]
fn maxpool_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = distinct(&[2, 2, 4, 4, 6], &mut rng);
    for k in [[1, 2, 2], [2, 2, 2]] {
        let (y, idx) = maxpool_forward(&x, k, k).unwrap();
        let w = random(y.shape(), &mut rng);
        let dx = maxpool_backward(&idx, &w).unwrap();
        assert_grad("maxpool", &dx, &numeric(&x, |x| dot(&maxpool_forward(x, k, k).unwrap().0, &w)));
    }
}

#[test]
fn relu_gradient_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = distinct(&[1, 2, 1, 3, 5], &mut rng).map(|v| v - 0.295);
    let w = random(x.shape(), &mut rng);
    let dx = relu_backward(&x, &w).unwrap();
    assert_grad("relu", &dx, &numeric(&x, |x| dot(&relu(x), &w)));
}

#[test]
fn spatial_softmax_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&[2, 1, 3, 3, 4], &mut rng).scale(3.0);
    let p = spatial_softmax(&a).unwrap();
    let w = random(p.shape(), &mut rng);
    let da = spatial_softmax_backward(&p, &w).unwrap();
    assert_grad("spatial softmax", &da, &numeric(&a, |a| dot(&spatial_softmax(a).unwrap(), &w)));
}

#[test]
fn global_avg_pool_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = random(&[2, 3, 2, 3, 2], &mut rng);
    let w = random(&[2, 3], &mut rng);
    let dx = global_avg_pool_backward(x.shape(), &w).unwrap();
    assert_grad("gap", &dx, &numeric(&x, |x| dot(&global_avg_pool(x).unwrap(), &w)));
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&[4, 10], &mut rng);
    let w = random(&[4, 10], &mut rng);
    let run = |x: &Tensor<f64>| dropout(x, 0.5, Mode::Train, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    let (_, mask) = run(&x);
    let dx = dropout_backward(mask.as_ref(), &w).unwrap();
    assert_grad("dropout", &dx, &numeric(&x, |x| dot(&run(x).0, &w)));
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let logits = random(&[5, 7], &mut rng).scale(4.0);
    let labels = [0, 6, 3, 3, 1];
    let (_, d) = softmax_cross_entropy(&logits, &labels).unwrap();
    assert_grad("cross entropy", &d, &numeric(&logits, |l| softmax_cross_entropy(l, &labels).unwrap().0));
}

#[test]
fn static_tiny_model_end_to_end() {
    let config = ModelConfig::new(Variant::Static, Scale::Tiny);
    let report = gradient_check(&config, 3, GradCheckOptions::default()).unwrap();
    assert!(report.passed(1e-3), "max {:e}", report.max_relative_error);
    for prefix in ["face.", "context.attention.", "fusion.face_gate.", "fusion.context_gate.", "fusion.classifier"] {
        assert!(report.tensors.iter().any(|t| t.name.starts_with(prefix)), "{prefix} not checked");
    }
}

#[test]
fn static_ablated_models_end_to_end() {
    let config = ModelConfig::new(Variant::Static, Scale::Tiny);
    for flags in [AblationFlags::FACE_ONLY, AblationFlags::parse("C+cA").unwrap(), AblationFlags::parse("F+C").unwrap()] {
        let report = gradient_check(&config, 4, GradCheckOptions { flags, ..GradCheckOptions::default() }).unwrap();
        assert!(report.passed(1e-3), "{flags}: max {:e}", report.max_relative_error);
    }
}

#[test]
fn zero_input_degenerate_statistics() {
    // Constant inputs leave the first batch norm with zero variance; the
    // epsilon keeps everything finite and the gradients exact.
    let config = ModelConfig::new(Variant::Static, Scale::Tiny);
    let report = gradient_check(&config, 5, GradCheckOptions { zero_input: true, ..GradCheckOptions::default() }).unwrap();
    assert!(report.all_finite);
    assert!(report.passed(1e-3), "max {:e}", report.max_relative_error);
}

#[test]
fn fusion_gates_and_classifier() {
    let report = gradient_check_fusion(8, 6, 7, 11, caer::training::gradcheck::DEFAULT_STEP).unwrap();
    assert!(report.passed(TOL), "max {:e}", report.max_relative_error);
    assert!(report.tensors.iter().any(|t| t.name.contains("face_gate")));
}
