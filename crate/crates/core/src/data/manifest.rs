//! Line-oriented dataset manifest. One clip per line, tab-separated:
//!
//! ```text
//! clip_dir  label  frame_count  split  box_0 … box_{frame_count-1}
//! ```
//!
//! Each box is `x,y,w,h` in frame pixels or `-` when no face was detected.
//! Frames live at `<manifest dir>/<clip_dir>/frame_NNNN.ppm`. Lines starting
//! with `#` are comments.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::annotate::{Category, Split};
use crate::data::image::RgbImage;
use crate::data::preprocess::{FaceBox, FrameClip};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory.
    pub clip_dir: PathBuf,
    pub label: Category,
    pub frame_count: usize,
    pub split: Split,
    pub boxes: Vec<Option<FaceBox>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:04}.ppm")
}

impl Manifest {
    pub fn frame_path(&self, entry: &ManifestEntry, i: usize) -> PathBuf {
        self.root.join(&entry.clip_dir).join(frame_file_name(i))
    }

    pub fn split(&self, split: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn load_clip(&self, entry: &ManifestEntry) -> Result<FrameClip> {
        let frames = (0..entry.frame_count)
            .map(|i| RgbImage::read_ppm(&self.frame_path(entry, i)))
            .collect::<Result<Vec<_>>>()?;
        FrameClip::new(entry.clip_dir.display().to_string(), frames, entry.boxes.clone())
    }
}

fn format_box(b: &Option<FaceBox>) -> String {
    match b {
        Some(b) => format!("{},{},{},{}", b.x, b.y, b.width, b.height),
        None => "-".into(),
    }
}

fn parse_box(s: &str) -> std::result::Result<Option<FaceBox>, String> {
    if s == "-" {
        return Ok(None);
    }
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| format!("box {s:?} is not x,y,w,h or -"))?;
    match v[..] {
        [x, y, w, h] if w > 0 && h > 0 => Ok(Some(FaceBox::new(x, y, w, h))),
        [_, _, _, _] => Err(format!("box {s:?} has zero extent")),
        _ => Err(format!("box {s:?} is not x,y,w,h or -")),
    }
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    let mut out = String::from("# clip_dir\tlabel\tframe_count\tsplit\tboxes (x,y,w,h or -) per frame\n");
    for e in entries {
        write!(out, "{}\t{}\t{}\t{}", e.clip_dir.display(), e.label, e.frame_count, e.split).unwrap();
        for b in &e.boxes {
            out.push('\t');
            out.push_str(&format_box(b));
        }
        out.push('\n');
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, out)?;
    Ok(())
}

/// Parses without touching frame files.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Manifest { path: path.to_path_buf(), line: i + 1, reason };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 4 {
            return Err(err(format!("expected at least 4 tab-separated fields, found {}", fields.len())));
        }
        let label = fields[1].parse::<Category>().map_err(err)?;
        let frame_count = fields[2]
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| err(format!("frame count {:?} is not a positive integer", fields[2])))?;
        let split = fields[3].parse::<Split>().map_err(err)?;
        let boxes = fields[4..].iter().map(|b| parse_box(b.trim())).collect::<std::result::Result<Vec<_>, _>>().map_err(err)?;
        if boxes.len() != frame_count {
            return Err(err(format!("{} boxes for {frame_count} frames", boxes.len())));
        }
        entries.push(ManifestEntry { clip_dir: PathBuf::from(fields[0]), label, frame_count, split, boxes });
    }
    Ok(entries)
}

/// Loads a manifest and checks that every referenced frame file exists.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Manifest { path: path.to_path_buf(), line: 0, reason: e.to_string() })?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { root, entries: parse_manifest(&text, path)? };
    let mut line_of = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, _)| i + 1);
    for e in &manifest.entries {
        let line = line_of.next().unwrap_or(0);
        for f in 0..e.frame_count {
            let frame = manifest.frame_path(e, f);
            if !frame.is_file() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    line,
                    reason: format!("missing frame file {}", frame.display()),
                });
            }
        }
    }
    Ok(manifest)
}
