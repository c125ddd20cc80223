//! 8-bit RGB frames, the binary PPM (P6) codec they are stored in, and the
//! planar float form preprocessing works on.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Interleaved RGB, row-major.
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![0; width * height * 3] }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::InvalidInput(format!(
                "{} bytes cannot form a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // Whitespace and `#` comments may separate header fields.
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(format!("unsupported magic {:?} (only binary P6 is read)", fields[0]));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| format!("bad header number {s:?}"));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(format!("maxval {maxval} unsupported (8-bit only)"));
        }
        // Exactly one whitespace byte precedes the raster.
        pos += 1;
        let len = width * height * 3;
        if width == 0 || height == 0 || bytes.len() < pos + len {
            return Err(format!("raster of {width}x{height} truncated"));
        }
        Ok(Self { width, height, data: bytes[pos..pos + len].to_vec() })
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)
            .map_err(|e| Error::Image { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::decode_ppm(&bytes).map_err(|reason| Error::Image { path: path.to_path_buf(), reason })
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.encode_ppm())?;
        Ok(())
    }
}

/// Channel-planar `(3, h, w)` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Planar {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, data: vec![0.0; 3 * height * width] }
    }

    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width(), img.height());
        let mut data = vec![0.0; 3 * w * h];
        for (i, px) in img.raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * w * h + i] = px[c] as f32 / 255.0;
            }
        }
        Self { height: h, width: w, data }
    }

    pub fn to_rgb(&self) -> RgbImage {
        let plane = self.height * self.width;
        let mut raw = Vec::with_capacity(plane * 3);
        for i in 0..plane {
            for c in 0..3 {
                raw.push((self.data[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        RgbImage { width: self.width, height: self.height, data: raw }
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Zeroes rows `y0..y1`, columns `x0..x1` (clipped to the image).
    pub fn fill_zero(&mut self, y0: usize, y1: usize, x0: usize, x1: usize) {
        let (y1, x1) = (y1.min(self.height), x1.min(self.width));
        let n = self.height * self.width;
        for c in 0..3 {
            for y in y0..y1 {
                let row = c * n + y * self.width;
                if x0 < x1 {
                    self.data[row + x0..row + x1].fill(0.0);
                }
            }
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, height: usize, width: usize) -> Self {
        let n = self.height * self.width;
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            for y in y0..y0 + height {
                let row = c * n + y * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + width]);
            }
        }
        Self { height, width, data }
    }

    pub fn resize(&self, height: usize, width: usize) -> Self {
        let mut data = Vec::with_capacity(3 * height * width);
        for c in 0..3 {
            data.extend(resize_bilinear(self.plane(c), self.height, self.width, height, width));
        }
        Self { height, width, data }
    }
}

/// Bilinear resampling with half-pixel centers: output pixel `o` samples the
/// source at `(o + 0.5)·in/out − 0.5`, clamped to the border.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f32> {
    if (h, w) == (oh, ow) {
        return src.to_vec();
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (taps(oh, h), taps(ow, w));
    let mut out = Vec::with_capacity(oh * ow);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = RgbImage::new(3, 2);
        img.put(2, 1, [10, 200, 255]);
        let back = RgbImage::decode_ppm(&img.encode_ppm()).unwrap();
        assert_eq!(back, img);
        assert_eq!(back.get(2, 1), [10, 200, 255]);
    }

    #[test]
    fn ppm_header_comments_and_errors() {
        let mut bytes = b"P6\n# made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3]);
        assert_eq!(RgbImage::decode_ppm(&bytes).unwrap().get(0, 0), [1, 2, 3]);
        assert!(RgbImage::decode_ppm(b"P3\n1 1\n255\n1 2 3").is_err());
        assert!(RgbImage::decode_ppm(b"P6\n2 2\n255\n\x01").is_err());
    }

    #[test]
    fn identity_and_constant_resize() {
        let src: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&src, 3, 4, 3, 4), src);
        let flat = vec![0.25f32; 20];
        assert!(resize_bilinear(&flat, 4, 5, 7, 3).iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn half_pixel_upsample() {
        // 2 → 4: samples at -0.25 (clamped), 0.25, 0.75, 1.25 (clamped).
        let out = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 4);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
        // 4 → 2 averages neighbouring pairs.
        let out = resize_bilinear(&[0.0, 1.0, 2.0, 3.0], 1, 4, 1, 2);
        assert_eq!(out, vec![0.5, 2.5]);
    }

    #[test]
    fn planar_round_trip_and_crop() {
        let mut img = RgbImage::new(4, 3);
        img.put(1, 2, [255, 0, 51]);
        let p = Planar::from_rgb(&img);
        assert_eq!(p.to_rgb(), img);
        let c = p.crop(1, 1, 2, 2);
        assert_eq!(c.to_rgb().get(0, 1), [255, 0, 51]);
    }
}
