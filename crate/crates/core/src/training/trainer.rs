use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::ModelConfig;
use crate::data::dataset::ClipSet;
use crate::data::preprocess::{preprocess_window, ClipSample};
use crate::data::window::sample_training_window;
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::layers::{softmax_cross_entropy, Mode};
use crate::model::{ablation_variant, init_params, model_backward, model_forward, AblationFlags, ModelParams};
use crate::training::augment::augment;
use crate::training::{lr_at, sgd_step, TrainConfig};

/// One metrics record per epoch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Running accuracy of the train-mode forward passes.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    /// Eval-mode accuracy on the training clips, if requested.
    pub train_eval_acc: Option<f64>,
    pub steps: u64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams<f32>,
    pub epoch: usize,
    pub step: u64,
    /// Mean loss of every optimizer step, in order.
    pub losses: Vec<f64>,
    pub history: Vec<EpochMetrics>,
}

/// Independent generator per concern so that, e.g., toggling augmentation
/// does not shift the data order.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Initialises a model (ablated per `flags`) and trains it.
pub fn train(
    config: &ModelConfig,
    flags: AblationFlags,
    train_set: &ClipSet,
    val: Option<&ClipSet>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainState> {
    let params = ablation_variant(&init_params::<f32>(config, cfg.seed)?, flags)?;
    train_model(params, train_set, val, cfg, on_epoch)
}

/// Runs `cfg.epochs` epochs of SGD on `params`. Each epoch visits every
/// training clip once, as a single randomly placed window.
pub fn train_model(
    mut params: ModelParams<f32>,
    train_set: &ClipSet,
    val: Option<&ClipSet>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainState> {
    cfg.validate()?;
    if train_set.len() < 2 {
        return Err(Error::InvalidConfig(format!("training split has {} clips", train_set.len())));
    }
    if val.is_some_and(ClipSet::is_empty) {
        return Err(Error::InvalidConfig("validation split is empty".into()));
    }
    let config = params.config.clone();
    let mut order_rng = stream(cfg.seed, 1);
    let mut sample_rng = stream(cfg.seed, 2);
    let mut dropout_rng = stream(cfg.seed, 3);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut losses = Vec::new();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = params.step;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut seen, mut hits) = (0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let mut samples = Vec::with_capacity(batch.len());
            for &i in batch {
                let clip = &train_set.clips[i];
                let window = sample_training_window(clip.len(), config.geometry.frames, &mut sample_rng)?;
                let mut s = preprocess_window(clip, &window, &config, Mode::Train, &mut sample_rng)?;
                augment(&mut s, &cfg.augment, &mut sample_rng);
                samples.push(s);
            }
            let refs: Vec<&ClipSample> = samples.iter().collect();
            let (face, context) = ClipSample::batch(&refs)?;
            let labels: Vec<usize> = batch.iter().map(|&i| train_set.labels[i]).collect();

            let out = model_forward(&params, &face, &context, Mode::Train, &mut dropout_rng)?;
            let (loss, d_logits) = softmax_cross_entropy(&out.logits, &labels)?;
            let loss = loss as f64;
            if !loss.is_finite() {
                return Err(Error::Divergence { step: step as usize, loss });
            }
            let grads = model_backward(&params, &out.cache, &d_logits)?;
            sgd_step(&mut params, &grads, lr)?;
            params.update_running_stats(&out.cache)?;
            step += 1;

            let k = params.classes();
            for (row, &y) in out.logits.data().chunks(k).zip(&labels) {
                let pred = crate::eval::argmax(&row.iter().map(|&v| v as f64).collect::<Vec<_>>());
                hits += (pred == y) as usize;
            }
            losses.push(loss);
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        let val_acc = val.map(|v| evaluate(&params, v).map(|r| r.accuracy)).transpose()?;
        let train_eval_acc =
            if cfg.eval_train { Some(evaluate(&params, train_set)?.accuracy) } else { None };
        let m = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / seen.max(1) as f64,
            train_acc: hits as f64 / seen.max(1) as f64,
            val_acc,
            train_eval_acc,
            steps: step,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.1e} loss {:.4} train acc {:.3} val acc {:?}",
            m.train_loss,
            m.train_acc,
            m.val_acc
        );
        on_epoch(&m);
        history.push(m);
    }
    Ok(TrainState { params, epoch: cfg.epochs, step, losses, history })
}
