use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use caer::checkpoint::{load_checkpoint, save_checkpoint};
use caer::data::annotate::{aggregate_annotations, group_by_clip, read_annotations};
use caer::data::{
    generate_synthetic_corpus, load_manifest, preprocess_window, split_dataset, window_indices, write_manifest,
    Category, ClipSet, Manifest, Split, SynthSpec,
};
use caer::eval::{evaluate, export_attention, predict_video, run_ablation};
use caer::training::gradcheck::{gradient_check, GradCheckOptions, DEFAULT_STEP, PASS_THRESHOLD};
use caer::training::{train, AugmentConfig, EpochMetrics, TrainConfig};
use caer::{AblationFlags, Mode, ModelConfig, ModelParams, Scale, Variant};

#[derive(Parser)]
#[command(name = "caer", version, about = "Context-aware emotion recognition: data, training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "dynamic", value_parser = parse_variant)]
    variant: Variant,
    /// Model size: full, desk or tiny.
    #[arg(long, default_value = "desk", value_parser = parse_scale)]
    scale: Scale,
}

#[derive(Args, Clone)]
struct Training {
    #[arg(long, default_value_t = 12)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-3)]
    lr: f64,
    /// Epochs between tenfold learning-rate drops.
    #[arg(long, default_value_t = 4)]
    decay_every: usize,
    /// Disable flip / contrast / color augmentation.
    #[arg(long)]
    no_augment: bool,
}

impl Training {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            base_lr: self.lr,
            decay_every: self.decay_every,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            augment: if self.no_augment { AugmentConfig::NONE } else { AugmentConfig::ALL },
            eval_train: false,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus (PPM frames plus manifest.tsv).
    SynthGen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        clips_per_class: usize,
        /// Draw class sizes from the reference category distribution instead,
        /// with this many clips in total.
        #[arg(long)]
        reference_total: Option<usize>,
        #[arg(long, default_value_t = 16)]
        clip_length: usize,
        #[arg(long, default_value_t = 12.0)]
        noise_std: f64,
        /// Share of clips whose face shows the shared, class-neutral glyph.
        #[arg(long, default_value_t = 0.3)]
        occluded_face_rate: f64,
    },
    /// Aggregate three-annotator votes into labels and write a split manifest.
    Annotate {
        #[command(flatten)]
        common: Common,
        /// Candidate clips; labels and splits in it are replaced.
        #[arg(long)]
        manifest: PathBuf,
        /// CSV of `clip,annotator,category,confidence`, clip = manifest clip_dir.
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on the manifest's train split.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Ablation flags, e.g. `F+C+cA+fA`.
        #[arg(long, default_value = "F+C+cA+fA", value_parser = parse_flags)]
        flags: AblationFlags,
        /// Metrics file (JSON lines); defaults to `<out>.metrics.jsonl`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Video-level accuracy and confusion matrix on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sliding-window class probabilities for one clip.
    PredictVideo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// clip_dir of the manifest entry to predict.
        #[arg(long)]
        clip: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and test one model per ablation flag set.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        training: Training,
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated flag sets; defaults to the six standard rows.
        #[arg(long, value_delimiter = ',', value_parser = parse_flags)]
        flags: Vec<AblationFlags>,
        /// Report file (JSON lines, one per row).
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every gradient on a shrunken model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "dynamic", value_parser = parse_variant)]
        variant: Variant,
        #[arg(long, default_value = "F+C+cA+fA", value_parser = parse_flags)]
        flags: AblationFlags,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        /// Per-tensor report (JSON lines).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write attention heatmaps over the face-hidden context frames of a clip.
    VizAttn {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        clip: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    s.parse().map_err(|e: caer::Error| e.to_string())
}

fn parse_scale(s: &str) -> std::result::Result<Scale, String> {
    s.parse().map_err(|e: caer::Error| e.to_string())
}

fn parse_flags(s: &str) -> std::result::Result<AblationFlags, String> {
    AblationFlags::parse(s).map_err(|e| e.to_string())
}

/// Writes each record as one JSON line to stdout and to an optional file.
struct Records {
    file: Option<BufWriter<File>>,
}

impl Records {
    fn new(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(dir)?;
                }
                Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn emit<T: Serialize>(&mut self, record: &T) -> Result<()> {
        let line = serde_json::to_string(record)?;
        println!("{line}");
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(())
    }
}

fn load_split(manifest: &Manifest, split: Split) -> Result<ClipSet> {
    let set = ClipSet::from_manifest(manifest, split)?;
    if set.is_empty() {
        bail!("manifest has no {split} clips");
    }
    Ok(set)
}

fn load_model(common: &Common, path: &Path) -> Result<ModelParams<f32>> {
    let config = ModelConfig::new(common.variant, common.scale);
    load_checkpoint(path, &config).with_context(|| format!("loading {}", path.display()))
}

fn find_clip(manifest: &Manifest, clip: &str) -> Result<caer::data::FrameClip> {
    let entry = manifest
        .entries
        .iter()
        .find(|e| e.clip_dir == Path::new(clip))
        .with_context(|| format!("no clip {clip:?} in manifest"))?;
    Ok(manifest.load_clip(entry)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthGen { common, out, clips_per_class, reference_total, clip_length, noise_std, occluded_face_rate } => {
            let spec = SynthSpec {
                clips_per_class,
                distribution: reference_total.map(|_| Category::REFERENCE_DISTRIBUTION.to_vec()),
                total_clips: reference_total.unwrap_or(0),
                clip_length,
                noise_std,
                occluded_face_rate,
                seed: common.seed,
                ..SynthSpec::default()
            };
            let manifest = generate_synthetic_corpus(&spec, &out)?;
            let count = |s| manifest.split(s).len();
            println!(
                "{}",
                json!({
                    "manifest": out.join("manifest.tsv"),
                    "clips": manifest.entries.len(),
                    "train": count(Split::Train),
                    "val": count(Split::Val),
                    "test": count(Split::Test),
                })
            );
        }
        Command::Annotate { common, manifest, annotations, out } => {
            let input = load_manifest(&manifest)?;
            let groups = group_by_clip(read_annotations(&annotations)?);
            let mut kept = Vec::new();
            let mut dropped = 0usize;
            for entry in &input.entries {
                let key = entry.clip_dir.display().to_string();
                let Some(records) = groups.get(&key) else {
                    log::warn!("{key}: no annotations, dropped");
                    dropped += 1;
                    continue;
                };
                let decision = aggregate_annotations(records)?;
                match decision.label.filter(|_| decision.keep) {
                    Some(label) => kept.push(caer::data::ManifestEntry { label, ..entry.clone() }),
                    None => dropped += 1,
                }
            }
            let labels: Vec<Category> = kept.iter().map(|e| e.label).collect();
            let splits = split_dataset(&labels, common.seed)?;
            for (e, s) in kept.iter_mut().zip(splits) {
                e.split = s;
            }
            // Frames stay where they are; rebase clip paths onto the new manifest.
            let out_dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(out_dir)?;
            if fs::canonicalize(out_dir)? != fs::canonicalize(&input.root)? {
                let root = fs::canonicalize(&input.root)?;
                for e in &mut kept {
                    e.clip_dir = root.join(&e.clip_dir);
                }
            }
            write_manifest(&kept, &out)?;
            println!("{}", json!({ "kept": kept.len(), "dropped": dropped, "manifest": out }));
        }
        Command::Train { common, training, manifest, out, flags, metrics } => {
            let m = load_manifest(&manifest)?;
            let train_set = load_split(&m, Split::Train)?;
            let val = ClipSet::from_manifest(&m, Split::Val)?;
            let config = ModelConfig::new(common.variant, common.scale);
            let metrics_path = metrics.unwrap_or_else(|| out.with_extension("metrics.jsonl"));
            let mut records = Records::new(Some(&metrics_path))?;
            let mut sink_err = None;
            let state = train(
                &config,
                flags,
                &train_set,
                (!val.is_empty()).then_some(&val),
                &training.config(common.seed),
                &mut |e: &EpochMetrics| {
                    if let Err(err) = records.emit(e) {
                        sink_err.get_or_insert(err);
                    }
                },
            )?;
            if let Some(err) = sink_err {
                return Err(err);
            }
            save_checkpoint(&state.params, &out)?;
            log::info!("wrote {}", out.display());
        }
        Command::Eval { common, manifest, checkpoint, split, out } => {
            let params = load_model(&common, &checkpoint)?;
            let set = load_split(&load_manifest(&manifest)?, split)?;
            let report = evaluate(&params, &set)?;
            Records::new(out.as_deref())?.emit(&json!({
                "split": split.name(),
                "clips": set.len(),
                "accuracy": report.accuracy,
                "confusion": report.confusion.rows(),
            }))?;
        }
        Command::PredictVideo { common, manifest, checkpoint, clip, out } => {
            let params = load_model(&common, &checkpoint)?;
            let video = find_clip(&load_manifest(&manifest)?, &clip)?;
            let p = predict_video(&params, &video)?;
            Records::new(out.as_deref())?.emit(&json!({
                "clip": clip,
                "label": Category::ALL[p.label].name(),
                "probabilities": p.probs,
                "window_starts": p.starts,
            }))?;
        }
        Command::Ablate { common, training, manifest, flags, out } => {
            let m = load_manifest(&manifest)?;
            let train_set = load_split(&m, Split::Train)?;
            let test = load_split(&m, Split::Test)?;
            let flag_sets = if flags.is_empty() { AblationFlags::table_rows() } else { flags };
            let config = ModelConfig::new(common.variant, common.scale);
            let report = run_ablation(
                &config,
                &flag_sets,
                &train_set,
                None,
                &test,
                &training.config(common.seed),
                &mut |f, e| log::info!("{f} epoch {} loss {:.4} acc {:.3}", e.epoch, e.train_loss, e.train_acc),
            )?;
            let mut records = Records::new(Some(&out))?;
            for row in &report.rows {
                records.emit(&json!({
                    "flags": row.label,
                    "accuracy": row.accuracy,
                    "confusion": row.confusion.rows(),
                }))?;
            }
            eprint!("{}", report.table());
        }
        Command::Gradcheck { seed, variant, flags, step, out } => {
            let config = ModelConfig::new(variant, Scale::Tiny);
            let report = gradient_check(&config, seed, GradCheckOptions { flags, step, ..GradCheckOptions::default() })?;
            if let Some(path) = out {
                let mut f = BufWriter::new(File::create(&path)?);
                for t in &report.tensors {
                    writeln!(f, "{}", serde_json::to_string(t)?)?;
                }
                f.flush()?;
            }
            println!("max relative error {:.3e} ({} tensors, {} kinks)", report.max_relative_error, report.tensors.len(), report.kinks);
            if !report.passed(PASS_THRESHOLD) {
                let worst = report
                    .tensors
                    .iter()
                    .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
                    .map_or("-", |t| t.name.as_str());
                bail!("gradient check failed: worst tensor {worst}");
            }
        }
        Command::VizAttn { common, manifest, checkpoint, clip, out } => {
            let params = load_model(&common, &checkpoint)?;
            let video = find_clip(&load_manifest(&manifest)?, &clip)?;
            let frames = params.config.geometry.frames;
            let mut unused = ChaCha8Rng::seed_from_u64(common.seed);
            let sample = preprocess_window(&video, &window_indices(0, frames, video.len()), &params.config, Mode::Eval, &mut unused)?;
            let prefix = Path::new(&clip).file_name().map_or("clip".into(), |s| s.to_string_lossy().into_owned());
            for path in export_attention(&params, &sample, &out, &prefix)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
