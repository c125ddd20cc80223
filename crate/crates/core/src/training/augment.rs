//! Train-time augmentation: horizontal flip, contrast and per-channel colour
//! jitter, applied identically to both streams of a sample.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::preprocess::ClipSample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip: bool,
    pub contrast: bool,
    pub color: bool,
}

impl AugmentConfig {
    pub const ALL: Self = Self { flip: true, contrast: true, color: true };
    pub const NONE: Self = Self { flip: false, contrast: false, color: false };
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self::ALL
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub flip: bool,
    pub contrast: f32,
    pub color: [f32; 3],
}

impl Augmentation {
    pub const IDENTITY: Self = Self { flip: false, contrast: 1.0, color: [1.0; 3] };

    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let flip = cfg.flip && rng.random_bool(0.5);
        let contrast = if cfg.contrast { rng.random_range(0.8..=1.2) } else { 1.0 };
        let color = if cfg.color { [(); 3].map(|_| rng.random_range(0.9..=1.1)) } else { [1.0; 3] };
        Self { flip, contrast, color }
    }

    /// Applies the draw in place. Hidden face regions are flipped with the
    /// image and stay exactly zero.
    pub fn apply(&self, sample: &mut ClipSample) {
        if self.flip {
            flip_width(&mut sample.face);
            flip_width(&mut sample.context);
            let w = sample.context.shape()[3];
            for r in &mut sample.hidden {
                *r = r.flipped(w);
            }
        }
        if self.contrast != 1.0 || self.color != [1.0; 3] {
            self.photometric(&mut sample.face);
            self.photometric(&mut sample.context);
            rezero_hidden(sample);
        }
    }

    fn photometric(&self, t: &mut Tensor<f32>) {
        let plane = t.numel() / 3;
        for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
            for v in chunk {
                *v = (((*v - 0.5) * self.contrast + 0.5) * self.color[c]).clamp(0.0, 1.0);
            }
        }
    }
}

pub fn augment<R: Rng + ?Sized>(sample: &mut ClipSample, cfg: &AugmentConfig, rng: &mut R) {
    Augmentation::draw(cfg, rng).apply(sample);
}

/// Mirrors a `(3, t, h, w)` tensor left-right.
fn flip_width(t: &mut Tensor<f32>) {
    let w = t.shape()[t.rank() - 1];
    for row in t.data_mut().chunks_mut(w) {
        row.reverse();
    }
}

fn rezero_hidden(sample: &mut ClipSample) {
    let s = sample.context.shape().to_vec();
    let (t, h, w) = (s[1], s[2], s[3]);
    let data = sample.context.data_mut();
    for (ti, r) in sample.hidden.iter().enumerate() {
        for c in 0..3 {
            for y in r.y0..r.y1 {
                let row = ((c * t + ti) * h + y) * w;
                data[row + r.x0..row + r.x1].fill(0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::preprocess::{hidden_mass, Region};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64) -> ClipSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
        };
        let mut s = ClipSample {
            face: t(&[3, 2, 4, 4]),
            context: t(&[3, 2, 6, 8]),
            hidden: vec![Region { y0: 1, y1: 3, x0: 0, x1: 3 }; 2],
            label: Some(2),
        };
        Augmentation { flip: false, contrast: 1.0, color: [0.999, 1.0, 1.0] }.apply(&mut s);
        s
    }

    #[test]
    fn disabled_and_neutral_draws_are_identity() {
        let orig = sample(1);
        let mut s = orig.clone();
        augment(&mut s, &AugmentConfig::NONE, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(s, orig);
        Augmentation::IDENTITY.apply(&mut s);
        assert_eq!(s, orig);
    }

    #[test]
    fn flip_is_an_involution_and_tracks_the_box() {
        let orig = sample(2);
        let mut s = orig.clone();
        let flip = Augmentation { flip: true, ..Augmentation::IDENTITY };
        flip.apply(&mut s);
        assert_eq!(s.hidden[0], Region { y0: 1, y1: 3, x0: 5, x1: 8 });
        assert_eq!(hidden_mass(&s), 0.0);
        flip.apply(&mut s);
        assert_eq!(s, orig);
    }

    #[test]
    fn jitter_keeps_range_label_and_hidden_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut s = sample(4);
            augment(&mut s, &AugmentConfig::ALL, &mut rng);
            assert_eq!(s.label, Some(2));
            assert_eq!(hidden_mass(&s), 0.0);
            assert!(s.context.data().iter().chain(s.face.data()).all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
