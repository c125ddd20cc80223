//! Turning raw frames plus face boxes into the two network inputs: the face
//! crop and the context frame with the face zero-filled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::data::image::{Planar, RgbImage};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::tensor::Tensor;

/// Face bounding box in pixel coordinates of its frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaceBox {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl FaceBox {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self { x, y, width, height }
    }

    /// Clips the box to a `frame_w × frame_h` frame; `None` if nothing is left.
    pub fn clamped(self, frame_w: usize, frame_h: usize) -> Option<Self> {
        if self.x >= frame_w || self.y >= frame_h {
            return None;
        }
        let width = self.width.min(frame_w - self.x);
        let height = self.height.min(frame_h - self.y);
        (width > 0 && height > 0).then_some(Self { width, height, ..self })
    }

    /// Mirror image of the box in a frame of width `frame_w`.
    pub fn flipped(self, frame_w: usize) -> Self {
        Self { x: frame_w - self.x - self.width, ..self }
    }
}

/// Region `[y0, y1) × [x0, x1)` of a network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl Region {
    pub fn is_empty(&self) -> bool {
        self.y0 >= self.y1 || self.x0 >= self.x1
    }

    pub fn flipped(self, width: usize) -> Self {
        Self { x0: width - self.x1, x1: width - self.x0, ..self }
    }
}

/// A decoded clip: equally sized frames with an optional face box each.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClip {
    pub source: String,
    pub fps: f32,
    pub frames: Vec<RgbImage>,
    pub boxes: Vec<Option<FaceBox>>,
}

impl FrameClip {
    pub fn new(source: impl Into<String>, frames: Vec<RgbImage>, boxes: Vec<Option<FaceBox>>) -> Result<Self> {
        let source = source.into();
        let Some(first) = frames.first() else {
            return Err(Error::InvalidInput(format!("clip {source} has no frames")));
        };
        let (w, h) = (first.width(), first.height());
        if let Some(i) = frames.iter().position(|f| (f.width(), f.height()) != (w, h)) {
            return Err(Error::InvalidInput(format!(
                "clip {source}: frame {i} is {}x{}, frame 0 is {w}x{h}",
                frames[i].width(),
                frames[i].height()
            )));
        }
        if boxes.len() != frames.len() {
            return Err(Error::InvalidInput(format!(
                "clip {source}: {} boxes for {} frames",
                boxes.len(),
                frames.len()
            )));
        }
        Ok(Self { source, fps: 10.0, frames, boxes })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames[0].width(), self.frames[0].height())
    }

    /// One usable box per frame. Gaps take the nearest preceding detection;
    /// frames before the first detection take the first one.
    pub fn resolved_boxes(&self) -> Result<Vec<FaceBox>> {
        let (w, h) = self.frame_size();
        let clamped: Vec<Option<FaceBox>> =
            self.boxes.iter().map(|b| b.and_then(|b| b.clamped(w, h))).collect();
        let first = clamped.iter().flatten().next().copied().ok_or_else(|| Error::NoFace(self.source.clone()))?;
        let mut last = first;
        Ok(clamped
            .into_iter()
            .map(|b| {
                if let Some(b) = b {
                    last = b;
                }
                last
            })
            .collect())
    }
}

/// Network-ready inputs for one clip window, each laid out `(3, t, h, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub face: Tensor<f32>,
    pub context: Tensor<f32>,
    /// Per frame, the zero-filled face region in context-input coordinates.
    pub hidden: Vec<Region>,
    pub label: Option<usize>,
}

impl ClipSample {
    /// Stacks samples into `(n, 3, t, h, w)` batches for both streams.
    pub fn batch(samples: &[&ClipSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        fn join<'a>(parts: impl Iterator<Item = &'a Tensor<f32>>) -> Result<Tensor<f32>> {
            let mut shape = Vec::new();
            let mut data = Vec::new();
            let mut n = 0;
            for t in parts {
                if n == 0 {
                    shape = t.shape().to_vec();
                } else if t.shape() != shape.as_slice() {
                    return Err(crate::error::shape_err(format!("batch {shape:?} with {:?}", t.shape())));
                }
                data.extend_from_slice(t.data());
                n += 1;
            }
            if n == 0 {
                return Err(Error::InvalidInput("empty batch".into()));
            }
            shape.insert(0, n);
            Tensor::from_vec(&shape, data)
        }
        Ok((join(samples.iter().map(|s| &s.face))?, join(samples.iter().map(|s| &s.context))?))
    }
}

/// Projects a frame-space box onto the resized-and-cropped context input,
/// rounding outward so every pixel the face touched is covered.
fn hidden_region(b: FaceBox, frame: (usize, usize), resize: [usize; 2], offset: (usize, usize), crop: [usize; 2]) -> Region {
    let (fw, fh) = frame;
    let lo = |v: usize, r: usize, f: usize| v * r / f;
    let hi = |v: usize, r: usize, f: usize| (v * r).div_ceil(f);
    let shift = |v: usize, off: usize, max: usize| v.saturating_sub(off).min(max);
    Region {
        y0: shift(lo(b.y, resize[0], fh), offset.0, crop[0]),
        y1: shift(hi(b.y + b.height, resize[0], fh), offset.0, crop[0]),
        x0: shift(lo(b.x, resize[1], fw), offset.1, crop[1]),
        x1: shift(hi(b.x + b.width, resize[1], fw), offset.1, crop[1]),
    }
}

/// Preprocesses the frames at `indices` (which may repeat, for padding).
///
/// Face path: crop each frame to its box and resize to the face extent.
/// Context path: zero the box, resize the whole frame, then take a crop —
/// random in train mode, centered in eval mode, shared by all frames.
pub fn preprocess_window<R: Rng + ?Sized>(
    clip: &FrameClip,
    indices: &[usize],
    config: &ModelConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<ClipSample> {
    let g = &config.geometry;
    if indices.len() != g.frames {
        return Err(Error::InvalidInput(format!(
            "{} model consumes {} frames, got {}",
            config.variant,
            g.frames,
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= clip.len()) {
        return Err(Error::InvalidInput(format!("frame {bad} outside clip of {}", clip.len())));
    }
    let boxes = clip.resolved_boxes()?;
    let frame = clip.frame_size();
    let [rh, rw] = g.context_resize;
    let [ch, cw] = g.context;
    let offset = match mode {
        Mode::Train => (rng.random_range(0..=rh - ch), rng.random_range(0..=rw - cw)),
        Mode::Eval => ((rh - ch) / 2, (rw - cw) / 2),
    };

    let [fh, fw] = g.face;
    let t = indices.len();
    let mut face = vec![0f32; 3 * t * fh * fw];
    let mut context = vec![0f32; 3 * t * ch * cw];
    let mut hidden = Vec::with_capacity(t);
    for (ti, &fi) in indices.iter().enumerate() {
        let img = Planar::from_rgb(&clip.frames[fi]);
        let b = boxes[fi];

        let f = img.crop(b.y, b.x, b.height, b.width).resize(fh, fw);
        let mut c = img;
        c.fill_zero(b.y, b.y + b.height, b.x, b.x + b.width);
        let mut c = c.resize(rh, rw).crop(offset.0, offset.1, ch, cw);
        let region = hidden_region(b, frame, g.context_resize, offset, g.context);
        c.fill_zero(region.y0, region.y1, region.x0, region.x1);
        hidden.push(region);

        for chan in 0..3 {
            let dst = (chan * t + ti) * fh * fw;
            face[dst..dst + fh * fw].copy_from_slice(f.plane(chan));
            let dst = (chan * t + ti) * ch * cw;
            context[dst..dst + ch * cw].copy_from_slice(c.plane(chan));
        }
    }
    Ok(ClipSample {
        face: Tensor::from_vec(&[3, t, fh, fw], face)?,
        context: Tensor::from_vec(&[3, t, ch, cw], context)?,
        hidden,
        label: None,
    })
}

/// Preprocesses a clip whose length already equals the model's frame count.
pub fn preprocess_clip<R: Rng + ?Sized>(clip: &FrameClip, config: &ModelConfig, mode: Mode, rng: &mut R) -> Result<ClipSample> {
    let indices: Vec<usize> = (0..clip.len()).collect();
    preprocess_window(clip, &indices, config, mode, rng)
}

/// Sum of |v_c| over every hidden region; zero whenever hiding worked.
pub fn hidden_mass(sample: &ClipSample) -> f64 {
    let s = sample.context.shape();
    let (t, h, w) = (s[1], s[2], s[3]);
    let d = sample.context.data();
    let mut total = 0.0;
    for (ti, r) in sample.hidden.iter().enumerate() {
        for c in 0..3 {
            for y in r.y0..r.y1 {
                let row = ((c * t + ti) * h + y) * w;
                total += d[row + r.x0..row + r.x1].iter().map(|v| v.abs() as f64).sum::<f64>();
            }
        }
    }
    total
}
