//! Choosing which frames of a clip form a network input.

use rand::Rng;

use crate::error::{Error, Result};

/// Frame indices `start..start + frames`, padded by repeating the clip's last
/// frame when the clip is too short.
pub fn window_indices(start: usize, frames: usize, len: usize) -> Vec<usize> {
    (start..start + frames).map(|i| i.min(len - 1)).collect()
}

/// One training window with a uniformly random start in `[0, len − frames]`.
pub fn sample_training_window<R: Rng + ?Sized>(len: usize, frames: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::InvalidInput("cannot sample a window from an empty clip".into()));
    }
    let start = if len > frames { rng.random_range(0..=len - frames) } else { 0 };
    Ok(window_indices(start, frames, len))
}

/// Sliding-window starts for video inference: every `stride` frames while the
/// window fits; a single (padded) window for clips shorter than `frames`.
/// Trailing frames not covered by a full window are ignored.
pub fn window_starts(len: usize, frames: usize, stride: usize) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::InvalidInput("cannot predict on an empty clip".into()));
    }
    if len <= frames {
        return Ok(vec![0]);
    }
    Ok((0..=len - frames).step_by(stride.max(1)).collect())
}
