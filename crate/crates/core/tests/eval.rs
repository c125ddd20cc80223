use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use caer::data::synth::{corpus_clip, corpus_labels};
use caer::data::{preprocess_window, window_indices, ClipSample, ClipSet, FrameClip, RgbImage, SynthSpec};
use caer::eval::{argmax, evaluate, export_attention, predict_video, run_ablation, window_probabilities, ConfusionMatrix};
use caer::training::TrainConfig;
use caer::{init_params, AblationFlags, Mode, ModelConfig, ModelParams, Scale, Variant};

fn desk() -> (ModelConfig, ModelParams<f32>) {
    let config = ModelConfig::new(Variant::Dynamic, Scale::Desk);
    let params = init_params::<f32>(&config, 17).unwrap();
    (config, params)
}

fn clip_of_length(len: usize, seed: u64) -> FrameClip {
    let spec = SynthSpec { clips_per_class: 1, clip_length: len.max(16), seed, ..SynthSpec::default() };
    let labels = corpus_labels(&spec).unwrap();
    let mut clip = corpus_clip(&spec, &labels, 3).unwrap();
    clip.frames.truncate(len);
    clip.boxes.truncate(len);
    clip
}

fn window_softmax(params: &ModelParams<f32>, clip: &FrameClip, start: usize) -> Vec<f64> {
    let config = &params.config;
    let idx = window_indices(start, config.geometry.frames, clip.len());
    let s = preprocess_window(clip, &idx, config, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    window_probabilities(params, &[&s as &ClipSample]).unwrap().remove(0)
}

#[test]
fn sixteen_frames_is_one_window() {
    let (_, params) = desk();
    let clip = clip_of_length(16, 1);
    let p = predict_video(&params, &clip).unwrap();
    assert_eq!(p.starts, vec![0]);
    assert_eq!(p.probs, window_softmax(&params, &clip, 0));
}

#[test]
fn twenty_four_frames_average_two_windows() {
    let (_, params) = desk();
    let clip = clip_of_length(24, 2);
    let p = predict_video(&params, &clip).unwrap();
    assert_eq!(p.starts, vec![0, 8]);
    let (a, b) = (window_softmax(&params, &clip, 0), window_softmax(&params, &clip, 8));
    for k in 0..7 {
        assert!((p.probs[k] - (a[k] + b[k]) / 2.0).abs() < 1e-12);
    }
    assert!((p.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert_eq!(p.label, argmax(&p.probs));
}

#[test]
fn longer_and_shorter_clips() {
    let (_, params) = desk();
    assert_eq!(predict_video(&params, &clip_of_length(40, 3)).unwrap().starts, vec![0, 8, 16, 24]);
    // Frames 34..40 are not covered by a full window beyond start 24.
    assert_eq!(predict_video(&params, &clip_of_length(41, 3)).unwrap().starts, vec![0, 8, 16, 24]);
    let short = clip_of_length(10, 4);
    let p = predict_video(&params, &short).unwrap();
    assert_eq!(p.starts, vec![0]);
    assert_eq!(p.probs, window_softmax(&params, &short, 0));
    assert!(FrameClip::new("empty", Vec::<RgbImage>::new(), vec![]).is_err());
}

#[test]
fn evaluate_matches_per_clip_prediction_and_ignores_order() {
    let (_, params) = desk();
    let spec = SynthSpec { clips_per_class: 2, seed: 8, ..SynthSpec::default() };
    let labels = corpus_labels(&spec).unwrap();
    let clips: Vec<FrameClip> = (0..labels.len()).map(|i| corpus_clip(&spec, &labels, i).unwrap()).collect();
    let set = ClipSet::new(clips.clone(), labels.clone());
    let report = evaluate(&params, &set).unwrap();
    for (i, clip) in clips.iter().enumerate() {
        assert_eq!(report.predictions[i], argmax(&window_softmax(&params, clip, 0)));
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.reverse();
    order.swap(0, 5);
    let shuffled = evaluate(&params, &set.subset(&order)).unwrap();
    assert_eq!(shuffled.confusion, report.confusion);
    assert_eq!(shuffled.accuracy, report.accuracy);
    assert_eq!(report.confusion.row_sums(), vec![2; 7]);
}

#[test]
fn uniform_random_predictor_scores_one_in_seven() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let truth: Vec<usize> = (0..7000).map(|_| rng.random_range(0..7)).collect();
    let guess: Vec<usize> = (0..7000).map(|_| rng.random_range(0..7)).collect();
    let m = ConfusionMatrix::from_pairs(7, &truth, &guess).unwrap();
    // Binomial std at n=7000, p=1/7 is about 0.0042; 0.02 is nearly 5 sigma.
    assert!((m.accuracy() - 1.0 / 7.0).abs() < 0.02, "{}", m.accuracy());
    let mut counts = vec![0u64; 7];
    truth.iter().for_each(|&t| counts[t] += 1);
    assert_eq!(m.row_sums(), counts);
    assert_eq!(m.total(), 7000);
}

#[test]
fn attention_heatmaps_cover_the_context_input() {
    let (config, params) = desk();
    let clip = clip_of_length(16, 5);
    let s = preprocess_window(&clip, &window_indices(0, 16, 16), &config, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_attention(&params, &s, dir.path(), "clip").unwrap();
    assert_eq!(files.len(), 2);
    for f in &files {
        let img = RgbImage::read_ppm(f).unwrap();
        assert_eq!((img.width(), img.height()), (32, 32));
    }
    let no_attention = caer::ablation_variant(&params, AblationFlags::FACE_ONLY).unwrap();
    assert!(export_attention(&no_attention, &s, dir.path(), "x").is_err());
}

#[test]
fn full_scale_heatmap_is_context_sized() {
    let config = ModelConfig::new(Variant::Dynamic, Scale::Full);
    let params = init_params::<f32>(&config, 3).unwrap();
    let clip = clip_of_length(16, 6);
    let s = preprocess_window(&clip, &window_indices(0, 16, 16), &config, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = export_attention(&params, &s, dir.path(), "p").unwrap();
    assert_eq!(files.len(), 2);
    let img = RgbImage::read_ppm(&files[0]).unwrap();
    assert_eq!((img.width(), img.height()), (112, 112));
}

#[test]
fn ablation_rows_follow_the_requested_flags() {
    let config = ModelConfig::new(Variant::Static, Scale::Tiny);
    let spec = SynthSpec { clips_per_class: 2, seed: 12, ..SynthSpec::default() };
    let labels = corpus_labels(&spec).unwrap();
    let clips = (0..labels.len()).map(|i| corpus_clip(&spec, &labels, i).unwrap()).collect();
    let set = ClipSet::new(clips, labels);
    let flags = AblationFlags::table_rows();
    let cfg = TrainConfig { batch_size: 7, epochs: 1, ..TrainConfig::default() };
    let mut epochs = Vec::new();
    let report = run_ablation(&config, &flags, &set, None, &set, &cfg, &mut |f, _| epochs.push(f)).unwrap();
    assert_eq!(report.rows.iter().map(|r| r.flags).collect::<Vec<_>>(), flags);
    assert_eq!(epochs, flags);
    let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["F", "C+cA", "F+C", "F+C+cA", "F+C+fA", "F+C+cA+fA"]);
    assert_eq!(report.table().lines().count(), 7);
}
