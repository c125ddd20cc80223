//! Emotion categories, three-annotator vote aggregation and the stratified
//! train/val/test split.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Anger,
    Disgust,
    Fear,
    Happy,
    Neutral,
    Sad,
    Surprise,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Anger,
        Category::Disgust,
        Category::Fear,
        Category::Happy,
        Category::Neutral,
        Category::Sad,
        Category::Surprise,
    ];

    /// Share of each category in the reference corpus, in percent, `ALL` order.
    pub const REFERENCE_DISTRIBUTION: [f64; 7] = [12.33, 5.44, 3.89, 20.64, 34.69, 11.16, 11.83];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Anger => "anger",
            Category::Disgust => "disgust",
            Category::Fear => "fear",
            Category::Happy => "happy",
            Category::Neutral => "neutral",
            Category::Sad => "sad",
            Category::Surprise => "surprise",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL.into_iter().find(|c| c.name() == lower).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|c| c.name()).collect();
            format!("unknown category {s:?}; expected one of {}", names.join(", "))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?}; expected train, val or test")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub clip: String,
    pub annotator: String,
    pub category: Category,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decision {
    pub keep: bool,
    /// Majority category, if two or more annotators agree.
    pub label: Option<Category>,
    pub mean_confidence: f64,
}

/// Keeps a clip iff at least two of its three annotators agree on a category
/// and their mean confidence is at least 0.5.
pub fn aggregate_annotations(records: &[AnnotationRecord]) -> Result<Decision> {
    let clip = records.first().map_or_else(String::new, |r| r.clip.clone());
    let malformed = |reason: String| Error::MalformedAnnotation { clip: clip.clone(), reason };
    if records.len() != 3 {
        return Err(malformed(format!("expected 3 annotations, found {}", records.len())));
    }
    if let Some(r) = records.iter().find(|r| r.clip != clip) {
        return Err(malformed(format!("record for clip {} mixed in", r.clip)));
    }
    if let Some(r) = records.iter().find(|r| !(0.0..=1.0).contains(&r.confidence)) {
        return Err(malformed(format!("confidence {} outside [0, 1]", r.confidence)));
    }
    let mut votes = [0usize; 7];
    for r in records {
        votes[r.category.index()] += 1;
    }
    let label = votes.iter().position(|&v| v >= 2).and_then(Category::from_index);
    let mean_confidence = records.iter().map(|r| r.confidence).sum::<f64>() / 3.0;
    // The slack absorbs rounding in sums such as 0.4 + 0.5 + 0.6.
    let keep = label.is_some() && mean_confidence >= 0.5 - 1e-12;
    Ok(Decision { keep, label, mean_confidence })
}

/// Groups records by clip id, preserving per-clip record order.
pub fn group_by_clip(records: Vec<AnnotationRecord>) -> BTreeMap<String, Vec<AnnotationRecord>> {
    let mut groups: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.clip.clone()).or_default().push(r);
    }
    groups
}

/// Reads `clip,annotator,category,confidence` lines; `#` starts a comment.
pub fn read_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| Error::Annotations { path: path.to_path_buf(), line: i + 1, reason };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [clip, annotator, category, confidence] = fields[..] else {
            return Err(err(format!("expected 4 comma-separated fields, found {}", fields.len())));
        };
        let category = category.parse::<Category>().map_err(err)?;
        let confidence = confidence
            .parse::<f64>()
            .ok()
            .filter(|c| (0.0..=1.0).contains(c))
            .ok_or_else(|| err(format!("confidence {confidence:?} is not a number in [0, 1]")))?;
        out.push(AnnotationRecord {
            clip: clip.to_string(),
            annotator: annotator.to_string(),
            category,
            confidence,
        });
    }
    Ok(out)
}

/// Per-category stratified split: `round(0.1 n)` validation, `round(0.2 n)`
/// test, the remainder training. Deterministic per seed.
pub fn split_dataset(labels: &[Category], seed: u64) -> Result<Vec<Split>> {
    if labels.len() < 10 {
        return Err(Error::InvalidInput(format!("need at least 10 clips to split, got {}", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![Split::Train; labels.len()];
    for cat in Category::ALL {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == cat).collect();
        if members.is_empty() {
            log::warn!("category {cat} has no clips; skipped in split");
            continue;
        }
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        let val = (0.1 * n).round() as usize;
        let test = (0.2 * n).round() as usize;
        for (rank, &i) in members.iter().enumerate() {
            out[i] = if rank < val {
                Split::Val
            } else if rank < val + test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(c: Category, conf: f64) -> AnnotationRecord {
        AnnotationRecord { clip: "c".into(), annotator: "a".into(), category: c, confidence: conf }
    }

    #[test]
    fn majority_with_enough_confidence_is_kept() {
        use Category::*;
        let d = aggregate_annotations(&[rec(Happy, 0.8), rec(Happy, 0.6), rec(Sad, 0.9)]).unwrap();
        assert!(d.keep);
        assert_eq!(d.label, Some(Happy));
        assert!((d.mean_confidence - 0.766_666_7).abs() < 1e-6);
    }

    #[test]
    fn no_majority_or_low_confidence_is_dropped() {
        use Category::*;
        let d = aggregate_annotations(&[rec(Happy, 0.9), rec(Sad, 0.9), rec(Fear, 0.9)]).unwrap();
        assert!(!d.keep && d.label.is_none());
        let d = aggregate_annotations(&[rec(Anger, 0.4), rec(Anger, 0.4), rec(Anger, 0.5)]).unwrap();
        assert!(!d.keep);
        assert!((d.mean_confidence - 0.4333).abs() < 1e-4);
    }

    #[test]
    fn wrong_vote_count_is_malformed() {
        let two = [rec(Category::Sad, 0.9), rec(Category::Sad, 0.9)];
        assert!(matches!(aggregate_annotations(&two), Err(Error::MalformedAnnotation { .. })));
    }

    #[test]
    fn category_names() {
        assert_eq!("Neutral".parse::<Category>(), Ok(Category::Neutral));
        let msg = "joy".parse::<Category>().unwrap_err();
        assert!(msg.contains("anger, disgust, fear, happy, neutral, sad, surprise"), "{msg}");
        let total: f64 = Category::REFERENCE_DISTRIBUTION.iter().sum();
        assert!((total - 99.98).abs() < 1e-9);
    }

    #[test]
    fn hundred_single_category_clips() {
        let splits = split_dataset(&[Category::Sad; 100], 3).unwrap();
        let count = |s| splits.iter().filter(|&&x| x == s).count();
        assert_eq!((count(Split::Train), count(Split::Val), count(Split::Test)), (70, 10, 20));
        assert_eq!(splits, split_dataset(&[Category::Sad; 100], 3).unwrap());
        assert_ne!(splits, split_dataset(&[Category::Sad; 100], 4).unwrap());
    }
}
