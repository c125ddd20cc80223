//! Synthetic stand-in corpus where context genuinely matters.
//!
//! Every clip shows a "face" glyph inside a recorded box over a class-coloured,
//! striped background. Classes 0 and 1 share the same glyph and the face
//! pixels carry no noise, so their face crops are pixel-identical: a face-only
//! model cannot beat a coin flip on that pair, while the background separates
//! every class. A share of clips in every class shows that same shared glyph
//! (an occluded or unreadable face), so the face is a strong but imperfect cue
//! everywhere rather than a perfect one on most classes.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::annotate::{split_dataset, Category};
use crate::data::image::RgbImage;
use crate::data::manifest::{frame_file_name, write_manifest, Manifest, ManifestEntry};
use crate::data::preprocess::{FaceBox, FrameClip};
use crate::error::{Error, Result};

/// Left-right symmetric 3×3 patterns, so horizontal flips keep them intact.
const GLYPHS: [[u8; 3]; 6] = [
    [0b010, 0b111, 0b010],
    [0b101, 0b010, 0b101],
    [0b111, 0b101, 0b111],
    [0b000, 0b111, 0b000],
    [0b111, 0b000, 0b111],
    [0b010, 0b010, 0b010],
];

const PALETTE: [[f64; 3]; 7] = [
    [200.0, 60.0, 60.0],
    [60.0, 60.0, 200.0],
    [60.0, 180.0, 60.0],
    [200.0, 200.0, 60.0],
    [140.0, 140.0, 140.0],
    [60.0, 180.0, 180.0],
    [180.0, 60.0, 180.0],
];

const GLYPH_INK: [u8; 3] = [240, 220, 200];
const GLYPH_PAPER: [u8; 3] = [70, 50, 40];

/// The two classes that only the context can tell apart.
pub const AMBIGUOUS_PAIR: [usize; 2] = [0, 1];

pub fn glyph_of(class: usize) -> usize {
    class.saturating_sub(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    /// Optional class shares (any positive scale) applied to `total_clips`
    /// instead of `clips_per_class`.
    pub distribution: Option<Vec<f64>>,
    pub total_clips: usize,
    pub width: usize,
    pub height: usize,
    pub clip_length: usize,
    pub face_size: usize,
    /// Std of additive Gaussian noise on background pixels, in 8-bit units.
    pub noise_std: f64,
    /// Probability that a frame's face box is recorded as missing.
    pub missing_box_rate: f64,
    /// Probability that a clip shows the shared glyph of [`AMBIGUOUS_PAIR`]
    /// whatever its class.
    pub occluded_face_rate: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: 7,
            clips_per_class: 100,
            distribution: None,
            total_clips: 0,
            width: 64,
            height: 48,
            clip_length: 16,
            face_size: 16,
            noise_std: 12.0,
            missing_box_rate: 0.1,
            occluded_face_rate: 0.3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(2..=7).contains(&self.classes) {
            return bad(format!("{} classes (need 2..=7)", self.classes));
        }
        if self.clip_length < 16 {
            return bad(format!("clip length {} < 16", self.clip_length));
        }
        if self.face_size < 3 || self.face_size > self.width.min(self.height) {
            return bad(format!("face size {} does not fit a {}x{} frame", self.face_size, self.width, self.height));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise std {}", self.noise_std));
        }
        if !(0.0..1.0).contains(&self.missing_box_rate) {
            return bad(format!("missing box rate {}", self.missing_box_rate));
        }
        if !(0.0..=1.0).contains(&self.occluded_face_rate) {
            return bad(format!("occluded face rate {}", self.occluded_face_rate));
        }
        if let Some(d) = &self.distribution {
            if d.len() != self.classes || d.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || d.iter().sum::<f64>() <= 0.0 {
                return bad(format!("distribution {d:?} does not weight {} classes", self.classes));
            }
        } else if self.clips_per_class == 0 {
            return bad("zero clips per class".into());
        }
        Ok(())
    }

    /// Clips per class; a distribution is turned into counts by
    /// largest-remainder rounding so they sum to `total_clips` exactly.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        self.validate()?;
        let Some(weights) = &self.distribution else {
            return Ok(vec![self.clips_per_class; self.classes]);
        };
        let sum: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / sum * self.total_clips as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
        let short = self.total_clips - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        Ok(counts)
    }
}

fn glyph_pixel(glyph: usize, size: usize, x: usize, y: usize) -> [u8; 3] {
    let row = GLYPHS[glyph][y * 3 / size];
    if row >> (2 - x * 3 / size) & 1 == 1 {
        GLYPH_INK
    } else {
        GLYPH_PAPER
    }
}

/// Renders one clip of class `class`. Pure function of `(spec, class, rng)`.
pub fn synth_clip<R: Rng + ?Sized>(spec: &SynthSpec, class: usize, source: &str, rng: &mut R) -> Result<FrameClip> {
    spec.validate()?;
    if class >= spec.classes {
        return Err(Error::InvalidLabel { label: class, classes: spec.classes });
    }
    let (w, h, s) = (spec.width, spec.height, spec.face_size);
    let fb = FaceBox::new(rng.random_range(0..=w - s), rng.random_range(0..=h - s), s, s);
    let noise = Normal::new(0.0, spec.noise_std.max(1e-12)).expect("validated std");
    let base = PALETTE[class];
    // Stripe period and drift speed vary per class; phase varies per clip.
    let period = 4.0 + class as f64;
    let phase = rng.random_range(0.0..period);
    let occluded = rng.random_bool(spec.occluded_face_rate);
    let glyph = if occluded { glyph_of(AMBIGUOUS_PAIR[0]) } else { glyph_of(class) };

    let mut frames = Vec::with_capacity(spec.clip_length);
    let mut boxes = Vec::with_capacity(spec.clip_length);
    for t in 0..spec.clip_length {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            let stripe = if ((y as f64 + phase + 0.5 * t as f64) / period).floor() as i64 % 2 == 0 { 30.0 } else { -30.0 };
            for x in 0..w {
                let inside = x >= fb.x && x < fb.x + s && y >= fb.y && y < fb.y + s;
                let px = if inside {
                    glyph_pixel(glyph, s, x - fb.x, y - fb.y)
                } else {
                    let mut px = [0u8; 3];
                    for c in 0..3 {
                        let n = if spec.noise_std > 0.0 { noise.sample(rng) } else { 0.0 };
                        px[c] = (base[c] + stripe + n).round().clamp(0.0, 255.0) as u8;
                    }
                    px
                };
                img.put(x, y, px);
            }
        }
        frames.push(img);
        boxes.push((!rng.random_bool(spec.missing_box_rate)).then_some(fb));
    }
    // A clip with no detection at all would be dropped; keep the first box.
    if boxes.iter().all(Option::is_none) {
        boxes[0] = Some(fb);
    }
    FrameClip::new(source, frames, boxes)
}

/// Per-clip seed, so a clip does not depend on how many were drawn before it.
fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Labels of the corpus in generation order.
pub fn corpus_labels(spec: &SynthSpec) -> Result<Vec<usize>> {
    Ok(spec.class_counts()?.iter().enumerate().flat_map(|(c, &n)| std::iter::repeat_n(c, n)).collect())
}

/// Clip `index` of the corpus, rendered in memory.
pub fn corpus_clip(spec: &SynthSpec, labels: &[usize], index: usize) -> Result<FrameClip> {
    synth_clip(spec, labels[index], &clip_dir_name(index, labels[index]), &mut clip_rng(spec.seed, index))
}

fn clip_dir_name(index: usize, class: usize) -> String {
    format!("clips/{index:05}_{}", Category::ALL[class])
}

/// Writes frames and `manifest.tsv` under `out`, with a seeded stratified split.
pub fn generate_synthetic_corpus(spec: &SynthSpec, out: &Path) -> Result<Manifest> {
    let labels = corpus_labels(spec)?;
    let categories: Vec<Category> = labels.iter().map(|&l| Category::ALL[l]).collect();
    let splits = split_dataset(&categories, spec.seed)?;
    let mut entries = Vec::with_capacity(labels.len());
    for (i, (&label, split)) in labels.iter().zip(splits).enumerate() {
        let clip = corpus_clip(spec, &labels, i)?;
        let dir = PathBuf::from(&clip.source);
        fs::create_dir_all(out.join(&dir))?;
        for (f, frame) in clip.frames.iter().enumerate() {
            frame.write_ppm(&out.join(&dir).join(frame_file_name(f)))?;
        }
        entries.push(ManifestEntry {
            clip_dir: dir,
            label: Category::ALL[label],
            frame_count: clip.len(),
            split,
            boxes: clip.boxes,
        });
    }
    write_manifest(&entries, &out.join("manifest.tsv"))?;
    Ok(Manifest { root: out.to_path_buf(), entries })
}
