use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use caer::data::{
    aggregate_annotations, preprocess_window, split_dataset, window_indices, window_starts, AnnotationRecord,
    Category, FaceBox, FrameClip, RgbImage, Split,
};
use caer::eval::argmax;
use caer::fusion::fusion_softmax;
use caer::layers::{conv_forward, conv_forward_reference, softmax_rows, spatial_softmax, ConvParams};
use caer::training::{augment, AugmentConfig};
use caer::{Mode, ModelConfig, Scale, Tensor, Variant};

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn category() -> impl Strategy<Value = Category> {
    (0usize..7).prop_map(|i| Category::ALL[i])
}

proptest! {
    #[test]
    fn spatial_softmax_normalises_each_slice(
        (t, h, w, data) in (1usize..4, 1usize..6, 1usize..6)
            .prop_flat_map(|(t, h, w)| (Just(t), Just(h), Just(w), prop::collection::vec(-30.0f64..30.0, 2 * t * h * w))),
        shift in -50.0f64..50.0,
    ) {
        let a = tensor(&[2, 1, t, h, w], data);
        let p = spatial_softmax(&a).unwrap();
        for slice in p.data().chunks(h * w) {
            prop_assert!((slice.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(slice.iter().all(|&v| v >= 0.0));
        }
        let q = spatial_softmax(&a.map(|v| v + shift)).unwrap();
        for (x, y) in p.data().iter().zip(q.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn fusion_weights_form_a_distribution(s_f in prop::collection::vec(-80.0f64..80.0, 1..20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_c: Vec<f64> = s_f.iter().map(|_| rand::Rng::random_range(&mut rng, -80.0..80.0)).collect();
        let w = fusion_softmax(&s_f, &s_c);
        for (a, b) in w.lambda_f.iter().zip(&w.lambda_c) {
            prop_assert!((a + b - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(a) && (0.0..=1.0).contains(b));
        }
        let tied = fusion_softmax(&s_f, &s_f);
        prop_assert!(tied.lambda_f.iter().all(|&l| l == 0.5));
    }

    #[test]
    fn class_probabilities_ignore_logit_shifts(logits in prop::collection::vec(-20.0f64..20.0, 7), shift in -100.0f64..100.0) {
        let a = softmax_rows(&tensor(&[1, 7], logits.clone())).unwrap();
        let b = softmax_rows(&tensor(&[1, 7], logits.iter().map(|v| v + shift).collect())).unwrap();
        let (a, b): (Vec<f64>, Vec<f64>) = (a.data().to_vec(), b.data().to_vec());
        prop_assert_eq!(argmax(&a), argmax(&b));
        prop_assert_eq!(argmax(&a), argmax(&logits));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_prefers_lowest_index_on_ties(v in prop::collection::vec(0u8..4, 1..12)) {
        let values: Vec<f64> = v.iter().map(|&x| x as f64).collect();
        let max = values.iter().copied().fold(f64::MIN, f64::max);
        prop_assert_eq!(argmax(&values), values.iter().position(|&x| x == max).unwrap());
    }

    #[test]
    fn annotation_rule_matches_oracle(cats in prop::array::uniform3(category()), conf in prop::array::uniform3(0u32..=100)) {
        let records: Vec<AnnotationRecord> = (0..3)
            .map(|i| AnnotationRecord {
                clip: "c".into(),
                annotator: i.to_string(),
                category: cats[i],
                confidence: conf[i] as f64 / 100.0,
            })
            .collect();
        let d = aggregate_annotations(&records).unwrap();
        let majority = Category::ALL.into_iter().find(|&c| cats.iter().filter(|&&x| x == c).count() >= 2);
        prop_assert_eq!(d.label, majority);
        prop_assert_eq!(d.keep, majority.is_some() && conf.iter().sum::<u32>() >= 150);
        prop_assert!((d.mean_confidence - conf.iter().sum::<u32>() as f64 / 300.0).abs() < 1e-12);
    }

    #[test]
    fn splits_are_stratified_within_one_clip(labels in prop::collection::vec(category(), 10..400), seed in any::<u64>()) {
        let splits = split_dataset(&labels, seed).unwrap();
        prop_assert_eq!(&splits, &split_dataset(&labels, seed).unwrap());
        for cat in Category::ALL {
            let n = labels.iter().filter(|&&l| l == cat).count() as f64;
            for (split, share) in [(Split::Train, 0.7), (Split::Val, 0.1), (Split::Test, 0.2)] {
                let k = labels.iter().zip(&splits).filter(|(&l, &s)| l == cat && s == split).count() as f64;
                prop_assert!((k - share * n).abs() <= 1.0, "{cat} {split}: {k} of {n}");
            }
        }
    }

    #[test]
    fn inference_windows_tile_the_clip(len in 1usize..200, half in 1usize..12) {
        let frames = 2 * half;
        let starts = window_starts(len, frames, half).unwrap();
        if len <= frames {
            prop_assert_eq!(starts, vec![0]);
        } else {
            prop_assert_eq!(starts[0], 0);
            prop_assert!(starts.windows(2).all(|w| w[1] - w[0] == half));
            let last = *starts.last().unwrap();
            prop_assert!(last + frames <= len && last + half + frames > len);
        }
        let idx = window_indices(0, frames, len);
        prop_assert_eq!(idx.len(), frames);
        prop_assert!(idx.iter().all(|&i| i < len));
    }

    #[test]
    fn context_input_never_shows_the_face(
        w in 24usize..80,
        h in 24usize..80,
        seed in any::<u64>(),
        dynamic in any::<bool>(),
        train in any::<bool>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = rng.random_range(1..20);
        let frames: Vec<RgbImage> = (0..len)
            .map(|_| RgbImage::from_raw(w, h, (0..w * h * 3).map(|_| rng.random_range(1..=255u8)).collect()).unwrap())
            .collect();
        let boxes: Vec<Option<FaceBox>> = (0..len)
            .map(|i| {
                (i == 0 || rng.random_bool(0.7)).then(|| {
                    let bw = rng.random_range(1..=w / 2);
                    let bh = rng.random_range(1..=h / 2);
                    FaceBox::new(rng.random_range(0..=w - bw), rng.random_range(0..=h - bh), bw, bh)
                })
            })
            .collect();
        let clip = FrameClip::new("p", frames, boxes).unwrap();
        let variant = if dynamic { Variant::Dynamic } else { Variant::Static };
        let config = ModelConfig::new(variant, Scale::Desk);
        let mode = if train { Mode::Train } else { Mode::Eval };
        let idx = window_indices(0, config.geometry.frames, len);
        let mut s = preprocess_window(&clip, &idx, &config, mode, &mut rng).unwrap();
        if train {
            augment(&mut s, &AugmentConfig::ALL, &mut rng);
        }
        let (t, ch, cw) = (s.context.shape()[1], s.context.shape()[2], s.context.shape()[3]);
        // Eval mode has a known center crop, so check independently of the
        // reported regions: every pixel whose center maps into the box is zero.
        if !train {
            let boxes = clip.resolved_boxes().unwrap();
            let g = &config.geometry;
            let (oy, ox) = ((g.context_resize[0] - ch) / 2, (g.context_resize[1] - cw) / 2);
            for (f, &frame) in idx.iter().enumerate() {
                let b = boxes[frame];
                for y in 0..ch {
                    let sy = (y + oy) as f64 + 0.5;
                    let sy = sy * h as f64 / g.context_resize[0] as f64;
                    if sy < b.y as f64 || sy >= (b.y + b.height) as f64 {
                        continue;
                    }
                    for x in 0..cw {
                        let sx = ((x + ox) as f64 + 0.5) * w as f64 / g.context_resize[1] as f64;
                        if sx >= b.x as f64 && sx < (b.x + b.width) as f64 {
                            for c in 0..3 {
                                prop_assert_eq!(s.context.data()[((c * t + f) * ch + y) * cw + x], 0.0);
                            }
                        }
                    }
                }
            }
        }
        // A region is empty only when the crop cut the whole face out of view.
        for (f, r) in s.hidden.iter().enumerate() {
            for c in 0..3 {
                for y in r.y0..r.y1 {
                    for x in r.x0..r.x1 {
                        prop_assert_eq!(s.context.data()[((c * t + f) * ch + y) * cw + x], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn im2col_matches_naive_convolution(
        rank5 in any::<bool>(),
        dims in (1usize..=6, 1usize..=6, 1usize..=6),
        k in (1usize..=3, 1usize..=3, 1usize..=3),
        pad in (0usize..=2, 0usize..=2, 0usize..=2),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, hh, ww) = (if rank5 { dims.0 } else { 1 }, dims.1.max(k.1), dims.2.max(k.2));
        let kt = if rank5 { k.0.min(t) } else { 1 };
        let pt = if rank5 { pad.0 } else { 0 };
        let (n, cin, cout) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..4));
        let shape: Vec<usize> = if rank5 { vec![n, cin, t, hh, ww] } else { vec![n, cin, hh, ww] };
        let mut draw = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = tensor(&shape, draw(shape.iter().product()));
        let p = ConvParams::new(
            tensor(&[cout, cin, kt, k.1, k.2], draw(cout * cin * kt * k.1 * k.2)),
            tensor(&[cout], draw(cout)),
            [pt, pad.1, pad.2],
        ).unwrap();
        let fast = conv_forward(&x, &p).unwrap();
        let slow = conv_forward_reference(&x, &p).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
