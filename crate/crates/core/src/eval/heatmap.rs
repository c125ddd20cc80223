use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::image::{resize_bilinear, Planar, RgbImage};
use crate::data::preprocess::ClipSample;
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{model_forward, ModelParams};

/// Overlays one attention slice (`ah × aw`, summing to 1) on a context frame.
///
/// The map is upsampled bilinearly to the frame, scaled so that uniform
/// attention sits at the middle of a linear blue→red ramp, and blended 50/50.
pub fn heatmap_image(attention: &[f32], ah: usize, aw: usize, frame: &Planar) -> RgbImage {
    let (h, w) = (frame.height, frame.width);
    let up = resize_bilinear(attention, ah, aw, h, w);
    let gain = (ah * aw) as f32 / 2.0;
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = (up[y * w + x] * gain).clamp(0.0, 1.0);
            let ramp = [255.0 * v, 0.0, 255.0 * (1.0 - v)];
            let mut px = [0u8; 3];
            for c in 0..3 {
                let under = frame.plane(c)[y * w + x].clamp(0.0, 1.0) * 255.0;
                px[c] = (0.5 * ramp[c] + 0.5 * under).round() as u8;
            }
            img.put(x, y, px);
        }
    }
    img
}

/// Writes `<prefix>_t<j>.ppm` into `out_dir` for every temporal slice `j` of
/// the context attention map of a single preprocessed sample.
pub fn export_attention(params: &ModelParams<f32>, sample: &ClipSample, out_dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let (face, context) = ClipSample::batch(&[sample])?;
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    let out = model_forward(params, &face, &context, Mode::Eval, &mut unused)?;
    let map = out
        .attention
        .ok_or_else(|| Error::InvalidConfig("model has no context attention to export".into()))?;
    let s = map.normalized.shape().to_vec();
    let (slices, ah, aw) = (s[2], s[3], s[4]);
    let cs = sample.context.shape();
    let (frames, h, w) = (cs[1], cs[2], cs[3]);
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(slices);
    for j in 0..slices {
        // Each slice summarises `frames / slices` input frames; show the middle one.
        let span = frames / slices;
        let f = (j * span + span / 2).min(frames - 1);
        let mut under = Planar::zeros(h, w);
        for c in 0..3 {
            let src = &sample.context.data()[(c * frames + f) * h * w..(c * frames + f + 1) * h * w];
            under.data[c * h * w..(c + 1) * h * w].copy_from_slice(src);
        }
        let att = &map.normalized.data()[j * ah * aw..(j + 1) * ah * aw];
        let path = out_dir.join(format!("{prefix}_t{j}.ppm"));
        heatmap_image(att, ah, aw, &under).write_ppm(&path)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_attention_is_mid_ramp() {
        let frame = Planar::zeros(14, 14);
        let img = heatmap_image(&[0.25; 4], 2, 2, &frame);
        for y in 0..14 {
            for x in 0..14 {
                assert_eq!(img.get(x, y), [64, 0, 64]);
            }
        }
    }

    #[test]
    fn delta_attention_is_a_single_hotspot() {
        let mut att = vec![0.0f32; 49];
        att[3 * 7 + 5] = 1.0;
        let img = heatmap_image(&att, 7, 7, &Planar::zeros(112, 112));
        // Source cell (row 3, col 5) maps to output pixels 48..64 × 80..96.
        assert_eq!(img.get(88, 56), [128, 0, 0]);
        assert_eq!(img.get(5, 5), [0, 0, 128]);
        assert_eq!(img.get(20, 100), [0, 0, 128]);
        let red: Vec<(usize, usize)> = (0..112)
            .flat_map(|y| (0..112).map(move |x| (x, y)))
            .filter(|&(x, y)| img.get(x, y)[0] > img.get(x, y)[2])
            .collect();
        assert!(red.iter().all(|&(x, y)| (64..112).contains(&x) && (32..80).contains(&y)));
        assert_eq!((img.width(), img.height()), (112, 112));
    }
}
