//! Accuracy and confusion matrices, sliding-window video inference, the
//! ablation harness and attention heatmaps.

pub mod ablation;
pub mod heatmap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::dataset::ClipSet;
use crate::data::preprocess::{preprocess_window, ClipSample, FrameClip};
use crate::data::window::{window_indices, window_starts};
use crate::error::{Error, Result};
use crate::layers::{softmax_rows, Mode};
use crate::model::{model_forward, ModelParams};

pub use ablation::{run_ablation, AblationReport, AblationRow};
pub use heatmap::{export_attention, heatmap_image};

/// Counts indexed `[truth][prediction]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_pairs(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.add(t, p)?;
        }
        Ok(m)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for label in [truth, predicted] {
            if label >= self.classes {
                return Err(Error::InvalidLabel { label, classes: self.classes });
            }
        }
        self.counts[truth * self.classes + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.chunks(self.classes).map(|r| r.iter().sum()).collect()
    }

    /// Recall per ground-truth class (`None` for classes with no samples).
    pub fn per_class_accuracy(&self) -> Vec<Option<f64>> {
        self.row_sums()
            .iter()
            .enumerate()
            .map(|(k, &n)| (n > 0).then(|| self.get(k, k) as f64 / n as f64))
            .collect()
    }

    /// Accuracy over samples whose true class is in `classes`.
    pub fn accuracy_on(&self, classes: &[usize]) -> f64 {
        let (hit, n) = classes.iter().fold((0, 0), |(h, n), &k| (h + self.get(k, k), n + self.row_sums()[k]));
        if n == 0 {
            0.0
        } else {
            hit as f64 / n as f64
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes).map(<[u64]>::to_vec).collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Class probabilities for a batch of preprocessed windows (eval mode).
pub fn window_probabilities(params: &ModelParams<f32>, samples: &[&ClipSample]) -> Result<Vec<Vec<f64>>> {
    let (face, context) = ClipSample::batch(samples)?;
    // Eval mode draws no random numbers; the generator only satisfies the signature.
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let out = model_forward(params, &face, &context, Mode::Eval, &mut unused)?;
    let probs = softmax_rows(&out.logits)?;
    let k = params.classes();
    Ok(probs.data().chunks(k).map(|r| r.iter().map(|&p| p as f64).collect()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VideoPrediction {
    pub starts: Vec<usize>,
    pub window_probs: Vec<Vec<f64>>,
    /// Mean of the per-window softmax outputs.
    pub probs: Vec<f64>,
    pub label: usize,
}

/// Slides a window of the model's length over the clip with half-window
/// stride, and averages the windows' class probabilities.
pub fn predict_video(params: &ModelParams<f32>, clip: &FrameClip) -> Result<VideoPrediction> {
    let cfg = &params.config;
    let frames = cfg.geometry.frames;
    let starts = window_starts(clip.len(), frames, cfg.geometry.window_stride())?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let samples = starts
        .iter()
        .map(|&s| preprocess_window(clip, &window_indices(s, frames, clip.len()), cfg, Mode::Eval, &mut unused))
        .collect::<Result<Vec<_>>>()?;
    let mut window_probs = Vec::with_capacity(samples.len());
    // Bounded batches keep memory flat on long clips.
    for chunk in samples.chunks(16) {
        let refs: Vec<&ClipSample> = chunk.iter().collect();
        window_probs.extend(window_probabilities(params, &refs)?);
    }
    let k = params.classes();
    let mut probs = vec![0.0; k];
    for w in &window_probs {
        for (acc, p) in probs.iter_mut().zip(w) {
            *acc += p;
        }
    }
    let n = window_probs.len() as f64;
    probs.iter_mut().for_each(|p| *p /= n);
    Ok(VideoPrediction { label: argmax(&probs), starts, window_probs, probs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Video-level accuracy of `params` on every clip of `set`.
pub fn evaluate(params: &ModelParams<f32>, set: &ClipSet) -> Result<EvalReport> {
    if set.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty split".into()));
    }
    let mut confusion = ConfusionMatrix::new(params.classes());
    let mut predictions = Vec::with_capacity(set.len());
    for (clip, &label) in set.clips.iter().zip(&set.labels) {
        let p = predict_video(params, clip)?.label;
        confusion.add(label, p)?;
        predictions.push(p);
    }
    Ok(EvalReport { accuracy: confusion.accuracy(), confusion, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn perfect_predictor() {
        let truth: Vec<usize> = (0..10).map(|i| i % 7).collect();
        let m = ConfusionMatrix::from_pairs(7, &truth, &truth).unwrap();
        assert_eq!(m.accuracy(), 1.0);
        for t in 0..7 {
            for p in 0..7 {
                assert!(t == p || m.get(t, p) == 0);
            }
        }
    }

    #[test]
    fn random_predictor_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let truth: Vec<usize> = (0..7000).map(|_| rng.random_range(0..7)).collect();
        let pred: Vec<usize> = (0..7000).map(|_| rng.random_range(0..7)).collect();
        let m = ConfusionMatrix::from_pairs(7, &truth, &pred).unwrap();
        assert!((m.accuracy() - 1.0 / 7.0).abs() < 0.02, "{}", m.accuracy());
        let mut counts = vec![0u64; 7];
        truth.iter().for_each(|&t| counts[t] += 1);
        assert_eq!(m.row_sums(), counts);
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(argmax(&[1.0; 7]), 0);
    }

    #[test]
    fn out_of_range_labels_rejected() {
        assert!(ConfusionMatrix::new(3).add(3, 0).is_err());
    }
}
