//! Optimisation: learning-rate schedule, SGD, augmentation, the training loop
//! and the finite-difference gradient check.

pub mod augment;
pub mod gradcheck;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{ModelGrads, ModelParams};
use crate::params::{learnable, learnable_mut};

pub use augment::{augment, AugmentConfig, Augmentation};
pub use trainer::{train, train_model, EpochMetrics, TrainState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    /// The learning rate drops tenfold every `decay_every` epochs.
    pub decay_every: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    /// Also measure eval-mode accuracy on the training clips each epoch.
    pub eval_train: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 5e-3,
            decay_every: 4,
            batch_size: 32,
            epochs: 12,
            seed: 0,
            augment: AugmentConfig::ALL,
            eval_train: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidConfig(format!("base learning rate {}", self.base_lr)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch size {} < 2 leaves batch norm without statistics",
                self.batch_size
            )));
        }
        if self.decay_every == 0 {
            return Err(Error::InvalidConfig("decay period of 0 epochs".into()));
        }
        Ok(())
    }
}

/// `base_lr · 10^(−⌊epoch / decay_every⌋)`, correctly rounded.
///
/// Multiplying by `10f64.powi(-k)` is off by an ulp for many `k`, so the
/// decimal exponent of `base_lr`'s shortest representation is shifted instead
/// and the result parsed back.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let k = (epoch / cfg.decay_every) as i64;
    let repr = format!("{:e}", cfg.base_lr);
    let (mantissa, exp) = repr.split_once('e').expect("`{:e}` always has an exponent");
    let exp: i64 = exp.parse().expect("integer exponent");
    format!("{mantissa}e{}", exp - k).parse().expect("valid float literal")
}

/// Plain SGD, `p ← p − lr·g`, on every learnable tensor. Running statistics
/// are not gradients and are left alone.
pub fn sgd_step(params: &mut ModelParams<f32>, grads: &ModelGrads<f32>, lr: f64) -> Result<()> {
    let grads = learnable(grads);
    let slots = learnable_mut(params);
    if grads.len() != slots.len() {
        return Err(shape_err(format!("{} gradient tensors for {} parameters", grads.len(), slots.len())));
    }
    for ((name, p), (gname, g)) in slots.into_iter().zip(grads) {
        if name != gname || p.shape() != g.shape() {
            return Err(shape_err(format!("gradient {gname} {:?} for parameter {name} {:?}", g.shape(), p.shape())));
        }
        let lr = lr as f32;
        for (v, d) in p.data_mut().iter_mut().zip(g.data()) {
            *v -= lr * d;
        }
    }
    params.step += 1;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ModelConfig, Scale, Variant};
    use crate::model::{init_params, AblationFlags};
    use rand::{Rng, SeedableRng};

    #[test]
    fn schedule_examples() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 5e-3);
        assert_eq!(lr_at(4, &cfg), 5e-4);
        assert_eq!(lr_at(11, &cfg), 5e-5);
        assert_eq!(lr_at(3, &cfg), lr_at(0, &cfg));
    }

    /// Real gradients for a random upstream signal.
    fn some_grads(params: &ModelParams<f32>) -> ModelGrads<f32> {
        let cfg = &params.config;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut rand = |shape: &[usize]| {
            let n = shape.iter().product();
            crate::Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap()
        };
        let (face, ctx) = (rand(&cfg.face_input_shape(2)), rand(&cfg.context_input_shape(2)));
        let d = rand(&[2, cfg.arch.classes]);
        let mut drop = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let out = crate::model_forward(params, &face, &ctx, crate::Mode::Train, &mut drop).unwrap();
        crate::model_backward(params, &out.cache, &d).unwrap()
    }

    #[test]
    fn zero_lr_changes_nothing_but_the_step() {
        let cfg = ModelConfig::new(Variant::Static, Scale::Tiny);
        let mut p = init_params::<f32>(&cfg, 1).unwrap();
        let before = p.clone();
        let g = some_grads(&p);
        sgd_step(&mut p, &g, 0.0).unwrap();
        assert_eq!(p.step, 1);
        p.step = 0;
        assert_eq!(p, before);
    }

    #[test]
    fn update_rule_and_mismatch() {
        let cfg = ModelConfig::new(Variant::Static, Scale::Tiny);
        let mut p = init_params::<f32>(&cfg, 1).unwrap();
        let before = p.clone();
        let g = some_grads(&p);
        sgd_step(&mut p, &g, 0.1).unwrap();
        for (((_, new), (_, old)), (_, d)) in learnable(&p).into_iter().zip(learnable(&before)).zip(learnable(&g)) {
            for ((n, o), d) in new.data().iter().zip(old.data()).zip(d.data()) {
                assert_eq!(*n, o - 0.1f32 * d);
            }
        }
        let face_only = crate::model::ablation_variant(&p, AblationFlags::FACE_ONLY).unwrap();
        let wrong = some_grads(&face_only);
        assert!(sgd_step(&mut p, &wrong, 0.1).is_err());
    }
}
