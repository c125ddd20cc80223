use crate::data::annotate::Split;
use crate::data::manifest::Manifest;
use crate::data::preprocess::FrameClip;
use crate::error::Result;

/// Decoded clips with their class indices, held in memory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipSet {
    pub clips: Vec<FrameClip>,
    pub labels: Vec<usize>,
}

impl ClipSet {
    pub fn new(clips: Vec<FrameClip>, labels: Vec<usize>) -> Self {
        assert_eq!(clips.len(), labels.len(), "one label per clip");
        Self { clips, labels }
    }

    pub fn from_manifest(manifest: &Manifest, split: Split) -> Result<Self> {
        let entries = manifest.split(split);
        let clips = entries.iter().map(|e| manifest.load_clip(e)).collect::<Result<Vec<_>>>()?;
        let labels = entries.iter().map(|e| e.label.index()).collect();
        Ok(Self { clips, labels })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            clips: indices.iter().map(|&i| self.clips[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}
