//! Clip ingestion, preprocessing, annotation aggregation and the synthetic corpus.

pub mod annotate;
pub mod dataset;
pub mod image;
pub mod manifest;
pub mod preprocess;
pub mod synth;
pub mod window;

pub use annotate::{aggregate_annotations, split_dataset, AnnotationRecord, Category, Decision, Split};
pub use dataset::ClipSet;
pub use image::{Planar, RgbImage};
pub use manifest::{load_manifest, write_manifest, Manifest, ManifestEntry};
pub use preprocess::{hidden_mass, preprocess_clip, preprocess_window, ClipSample, FaceBox, FrameClip, Region};
pub use synth::{generate_synthetic_corpus, SynthSpec};
pub use window::{sample_training_window, window_indices, window_starts};
