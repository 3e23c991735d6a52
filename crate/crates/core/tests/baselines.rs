use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repgars::gar_model::{BaselineConfig, GroupActivityModel, KeypointClassifier};
use repgars::nn::Mode;
use repgars::{ClipSample, ClipTensor, Keypoint2D, LabelSpace, Pose17, TrackedDetection, Tracklet};

const FRAMES: usize = 10;
const SIZE: usize = 64;

fn person(rng: &mut ChaCha8Rng, id: u64, frames: std::ops::Range<usize>) -> Tracklet {
    let (x0, y0) = (rng.random_range(10.0..50.0), rng.random_range(10.0..50.0));
    let (vx, vy) = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
    let detections = frames
        .map(|t| {
            let kps = std::array::from_fn(|k| {
                Keypoint2D::new(x0 + vx * t as f64 + k as f64 * 0.3, y0 + vy * t as f64 - k as f64 * 0.5, 0.9)
            });
            TrackedDetection { frame_index: t, track_id: id, pose: Pose17(kps) }
        })
        .collect();
    Tracklet { track_id: id, detections }
}

fn clip(tracklets: Vec<Tracklet>) -> ClipSample {
    ClipSample {
        clip_id: "c".into(),
        frames: ClipTensor::zeros(FRAMES, 3, SIZE, SIZE),
        tracklets,
        label: 0,
        label_space: Arc::new(LabelSpace::netball()),
    }
}

fn models() -> Vec<(&'static str, KeypointClassifier)> {
    let cfg = BaselineConfig { num_classes: 3, hidden: 16, init_seed: 4, ..BaselineConfig::default() };
    vec![("early", KeypointClassifier::early(&cfg).unwrap()), ("late", KeypointClassifier::late(&cfg).unwrap())]
}

fn logits(model: &mut KeypointClassifier, c: &ClipSample) -> Vec<f32> {
    model.forward(&[c], Mode::Eval).unwrap().data().to_vec()
}

fn max_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

fn argmax(v: &[f32]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

#[test]
fn person_order_does_not_matter() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let people: Vec<Tracklet> = (0..5).map(|i| person(&mut rng, i, 0..FRAMES)).collect();
    // new ids reverse the slot order
    let relabeled: Vec<Tracklet> = people
        .iter()
        .map(|t| {
            let id = 10 - t.track_id;
            let detections = t.detections.iter().map(|d| TrackedDetection { track_id: id, ..d.clone() }).collect();
            Tracklet { track_id: id, detections }
        })
        .collect();
    for (name, mut model) in models() {
        let a = logits(&mut model, &clip(people.clone()));
        let b = logits(&mut model, &clip(relabeled.clone()));
        assert!(max_diff(&a, &b) <= 1e-5, "{name}: {a:?} vs {b:?}");
        assert_eq!(argmax(&a), argmax(&b), "{name}");
    }
}

#[test]
fn duplicating_a_person_changes_early_but_not_late_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let one = person(&mut rng, 0, 0..FRAMES);
    let twin = Tracklet {
        track_id: 1,
        detections: one.detections.iter().map(|d| TrackedDetection { track_id: 1, ..d.clone() }).collect(),
    };
    let mut models = models();
    let (early, late) = models.split_at_mut(1);
    let (single, double) = (clip(vec![one.clone()]), clip(vec![one, twin]));
    let early = &mut early[0].1;
    assert!(max_diff(&logits(early, &single), &logits(early, &double)) > 1e-4, "early fusion sums persons");
    let late = &mut late[0].1;
    assert!(max_diff(&logits(late, &single), &logits(late, &double)) <= 1e-5, "late fusion averages persons");
}

#[test]
fn fragmenting_a_track_changes_late_fusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let people: Vec<Tracklet> = (0..3).map(|i| person(&mut rng, i, 0..FRAMES)).collect();
    let mut broken = people.clone();
    let tail: Vec<TrackedDetection> = broken[0]
        .detections
        .split_off(FRAMES / 2)
        .into_iter()
        .map(|d| TrackedDetection { track_id: 99, ..d })
        .collect();
    broken.push(Tracklet { track_id: 99, detections: tail });
    let (_, mut late) = models().pop().unwrap();
    let a = logits(&mut late, &clip(people));
    let b = logits(&mut late, &clip(broken));
    assert!(max_diff(&a, &b) > 1e-5, "{a:?} vs {b:?}");
}

#[test]
fn empty_and_partial_clips_give_finite_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, mut model) in models() {
        for c in [clip(vec![]), clip(vec![person(&mut rng, 3, 2..4)])] {
            let l = logits(&mut model, &c);
            assert_eq!(l.len(), 3);
            assert!(l.iter().all(|v| v.is_finite()), "{name}: {l:?}");
        }
    }
}
