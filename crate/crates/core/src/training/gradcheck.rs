//! Central finite-difference verification of the hand-written backward passes.
//!
//! The model is cast to `f64`, each learnable scalar is nudged by `±step`, and
//! `(L(p+h) − L(p−h)) / 2h` is compared with the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::error::Result;
use crate::fusion::FusionParams;
use crate::layers::{softmax_cross_entropy, Mode};
use crate::model::{ablation_variant, init_params, model_backward, model_forward, AblationFlags, ModelParams};
use crate::params::{learnable, learnable_mut, Visit, VisitMut};
use crate::tensor::Tensor;

/// Small enough that a nudge rarely moves a ReLU input or a pooling winner
/// across a kink, large enough that 64-bit cancellation noise stays ~1e-11.
pub const DEFAULT_STEP: f64 = 1e-5;
pub const PASS_THRESHOLD: f64 = 1e-3;

/// Below this magnitude on both sides a gradient is compared absolutely: conv
/// biases feeding train-mode batch norm have a true gradient of exactly zero and
/// the finite difference returns pure rounding noise.
pub const GRADIENT_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / denom
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub elements: usize,
    pub max_relative_error: f64,
    pub max_abs_error: f64,
    pub max_abs_gradient: f64,
    /// Elements whose ±step nudge straddled a ReLU/max-pool kink.
    pub kinks: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_relative_error: f64,
    pub all_finite: bool,
    pub kinks: usize,
}

impl GradCheckReport {
    pub fn passed(&self, threshold: f64) -> bool {
        self.all_finite && self.max_relative_error < threshold
    }

    /// Worst error among tensors whose name starts with `prefix`.
    pub fn max_for(&self, prefix: &str) -> f64 {
        self.tensors
            .iter()
            .filter(|t| t.name.starts_with(prefix))
            .map(|t| t.max_relative_error)
            .fold(0.0, f64::max)
    }
}

/// Scores one element. When the central difference disagrees with the
/// analytic value the nudge may have straddled a kink; the analytic gradient
/// must then match the one-sided slope on the side that stayed smooth.
fn score(analytic: f64, base: f64, up: f64, down: f64, step: f64) -> (f64, f64, bool) {
    let central = (up - down) / (2.0 * step);
    let err = relative_error(analytic, central);
    if err < PASS_THRESHOLD {
        return (err, (analytic - central).abs(), false);
    }
    let side = [(up - base) / step, (base - down) / step]
        .into_iter()
        .min_by(|x, y| relative_error(analytic, *x).total_cmp(&relative_error(analytic, *y)))
        .unwrap();
    let side_err = relative_error(analytic, side);
    if side_err < err {
        (side_err, (analytic - side).abs(), side_err < PASS_THRESHOLD)
    } else {
        (err, (analytic - central).abs(), false)
    }
}

/// Compares analytic gradients of `tree` against central differences of `loss`.
pub fn check_tree<T, L>(tree: &mut T, analytic: &[(String, Tensor<f64>)], step: f64, mut loss: L) -> Result<GradCheckReport>
where
    T: Visit<f64> + VisitMut<f64>,
    L: FnMut(&T) -> Result<f64>,
{
    let names: Vec<(String, usize)> =
        learnable(tree).into_iter().map(|(n, t)| (n, t.numel())).collect();
    let base = loss(tree)?;
    let mut tensors = Vec::with_capacity(names.len());
    let mut all_finite = base.is_finite();
    for (ti, (name, numel)) in names.iter().enumerate() {
        let (aname, grad) = &analytic[ti];
        assert_eq!(aname, name, "gradient tree out of order");
        let mut check = TensorCheck {
            name: name.clone(),
            elements: *numel,
            max_relative_error: 0.0,
            max_abs_error: 0.0,
            max_abs_gradient: grad.max_abs(),
            kinks: 0,
        };
        for i in 0..*numel {
            let original = learnable_mut(tree)[ti].1.data()[i];
            learnable_mut(tree)[ti].1.data_mut()[i] = original + step;
            let up = loss(tree)?;
            learnable_mut(tree)[ti].1.data_mut()[i] = original - step;
            let down = loss(tree)?;
            learnable_mut(tree)[ti].1.data_mut()[i] = original;
            let a = grad.data()[i];
            all_finite &= up.is_finite() && down.is_finite() && a.is_finite();
            let (rel, abs, kink) = score(a, base, up, down, step);
            check.max_relative_error = check.max_relative_error.max(rel);
            check.max_abs_error = check.max_abs_error.max(abs);
            check.kinks += kink as usize;
        }
        tensors.push(check);
    }
    let max_relative_error = tensors.iter().map(|t| t.max_relative_error).fold(0.0, f64::max);
    let kinks = tensors.iter().map(|t| t.kinks).sum();
    Ok(GradCheckReport { tensors, max_relative_error, all_finite, kinks })
}

fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Moves BN affine parameters and biases away from their initial values so
/// their gradients are exercised at a generic point.
fn jitter_params(params: &mut ModelParams<f64>, rng: &mut ChaCha8Rng) {
    for (name, t) in learnable_mut(params) {
        if name.ends_with(".gamma") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if name.ends_with(".beta") || name.ends_with(".bias") {
            t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub flags: AblationFlags,
    pub batch: usize,
    pub step: f64,
    /// Zero inputs instead of random ones (degenerate-statistics case).
    pub zero_input: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { flags: AblationFlags::FULL, batch: 2, step: DEFAULT_STEP, zero_input: false }
    }
}

/// End-to-end check of every learnable tensor of a (shrunken) model with
/// train-mode batch norm and a fixed dropout mask.
pub fn gradient_check(config: &ModelConfig, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let full = init_params::<f32>(config, seed)?.cast::<f64>();
    let mut params = ablation_variant(&full, opts.flags)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    jitter_params(&mut params, &mut rng);
    let n = opts.batch;
    let (face, context) = if opts.zero_input {
        (Tensor::zeros(&config.face_input_shape(n)), Tensor::zeros(&config.context_input_shape(n)))
    } else {
        (
            random_tensor(&config.face_input_shape(n), 0.0, 1.0, &mut rng),
            random_tensor(&config.context_input_shape(n), 0.0, 1.0, &mut rng),
        )
    };
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..config.arch.classes)).collect();
    let dropout_seed = rng.random::<u64>();

    let loss = |p: &ModelParams<f64>| -> Result<(f64, crate::model::ModelOutput<f64>)> {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        let out = model_forward(p, &face, &context, Mode::Train, &mut drop_rng)?;
        let (l, _) = softmax_cross_entropy(&out.logits, &labels)?;
        Ok((l, out))
    };
    let (_, out) = loss(&params)?;
    let (_, d_logits) = softmax_cross_entropy(&out.logits, &labels)?;
    let grads = model_backward(&params, &out.cache, &d_logits)?;
    let analytic: Vec<(String, Tensor<f64>)> =
        learnable(&grads).into_iter().map(|(n, t)| (n, t.clone())).collect();
    check_tree(&mut params, &analytic, opts.step, |p| loss(p).map(|(l, _)| l))
}

/// Checks the fusion head alone on random stream features.
pub fn gradient_check_fusion(width: usize, hidden: usize, classes: usize, seed: u64, step: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut head = FusionParams::<f64>::new(width, width, true, hidden, classes, 0.5);
    for (_, t) in learnable_mut(&mut head) {
        let fan_in: usize = t.shape().get(1..).map_or(1, |s| s.iter().product());
        let scale = (2.0 / fan_in as f64).sqrt() * 1.7;
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
    }
    let n = 3;
    let x_f = random_tensor(&[n, width], -1.0, 1.0, &mut rng);
    let x_c = random_tensor(&[n, width], -1.0, 1.0, &mut rng);
    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
    let dropout_seed = rng.random::<u64>();
    let forward = |p: &FusionParams<f64>| {
        let mut drop_rng = ChaCha8Rng::seed_from_u64(dropout_seed);
        p.forward(Some(&x_f), Some(&x_c), Mode::Train, &mut drop_rng)
    };
    let out = forward(&head)?;
    let (_, d_logits) = softmax_cross_entropy(&out.logits, &labels)?;
    let (_, _, grads) = head.backward(&out.cache, &d_logits)?;
    let analytic: Vec<(String, Tensor<f64>)> =
        learnable(&grads).into_iter().map(|(n, t)| (n, t.clone())).collect();
    check_tree(&mut head, &analytic, step, |p| {
        let out = forward(p)?;
        softmax_cross_entropy(&out.logits, &labels).map(|(l, _)| l)
    })
}
