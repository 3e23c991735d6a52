//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! `REPGARS_ACCEPTANCE_ONLY=1,5,9` runs a subset. Criterion 12 needs
//! `REPGARS_VOLLEYBALL_MANIFEST` (and optionally `REPGARS_PRETRAINED`);
//! without it the criterion is reported as skipped.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repgars::coco::NUM_KEYPOINTS;
use repgars::corruptor::{corrupt, corrupt_clip, fragment_tracks, perturb_keypoints, ClipGeometry, CorruptionConfig};
use repgars::gar_model::{
    adapt_stem, build_backbone, keypoints_to_tensor, BaselineConfig, GroupActivityModel, InputSetting,
    KeypointClassifier, ModelConfig, RenderedPoseClassifier, ResNet3d,
};
use repgars::nn::{softmax_cross_entropy, Mode, Tensor};
use repgars::poserender::{fuse, render_clip, render_frame, track_color, RenderConfig};
use repgars::synthgen::{clip_seed, gen_clip, synth_label_space, SynthConfig};
use repgars::trackpose_io::{load_dataset, load_manifest, resize_clip, ClipLoadOptions, Split};
use repgars::train_eval::{evaluate, flip_augment, lr_at, train, TrainConfig};
use repgars::{ClipSample, Dataset, Keypoint2D, LabelSpace, Pose17, TrackedDetection, Tracklet};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- fixtures

fn random_pose(rng: &mut ChaCha8Rng, w: usize, h: usize, margin: f64) -> Pose17 {
    let kps = std::array::from_fn(|_| {
        Keypoint2D::new(
            rng.random_range(-margin..w as f64 + margin),
            rng.random_range(-margin..h as f64 + margin),
            rng.random_range(0.0..1.0),
        )
    });
    Pose17(kps)
}

fn synth_clip(rng: &mut ChaCha8Rng, h: usize, w: usize, frames: usize, persons: usize) -> ClipSample {
    let cfg = SynthConfig { height: h, width: w, frames, persons, ..SynthConfig::default() };
    gen_clip(rng.random_range(0..3), &cfg, rng.random()).expect("valid synthetic config")
}

// ---------------------------------------------------------------- 1

/// Exact point-to-segment test: compares squared distances without dividing,
/// by cases on where the projection falls.
fn within(px: f64, py: f64, a: &Keypoint2D, b: &Keypoint2D, r: f64) -> bool {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let (wx, wy) = (px - a.x, py - a.y);
    let vv = vx * vx + vy * vy;
    let dot = wx * vx + wy * vy;
    let r2 = r * r;
    if vv == 0.0 || dot <= 0.0 {
        wx * wx + wy * wy <= r2
    } else if dot >= vv {
        let (ux, uy) = (px - b.x, py - b.y);
        ux * ux + uy * uy <= r2
    } else {
        let cross = wx * vy - wy * vx;
        cross * cross <= r2 * vv
    }
}

fn oracle_frame(dets: &[TrackedDetection], cfg: &RenderConfig) -> Vec<f32> {
    let (h, w) = (cfg.height, cfg.width);
    let mut out = vec![0.0f32; 3 * h * w];
    let mut order: Vec<&TrackedDetection> = dets.iter().collect();
    order.sort_by_key(|d| d.track_id);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64, y as f64);
            for det in &order {
                let k = det.pose.keypoints();
                let on = |i: usize| k[i].confidence >= cfg.confidence_threshold;
                let limb = repgars::coco::SKELETON_EDGES
                    .iter()
                    .any(|&(a, b)| on(a) && on(b) && within(px, py, &k[a], &k[b], cfg.limb_thickness / 2.0));
                let joint = (0..NUM_KEYPOINTS).any(|i| on(i) && within(px, py, &k[i], &k[i], cfg.joint_radius));
                if limb || joint {
                    let c = track_color(det.track_id, &cfg.palette);
                    for ch in 0..3 {
                        out[ch * h * w + y * w + x] = c[ch];
                    }
                }
            }
        }
    }
    out
}

fn c1_rasterizer() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut lit = 0usize;
    for frame in 0..200 {
        let (h, w) = (rng.random_range(4..=32), rng.random_range(4..=32));
        let cfg = RenderConfig {
            limb_thickness: rng.random_range(1.0..5.0),
            joint_radius: rng.random_range(1.0..3.0),
            ..RenderConfig::with_size(h, w)
        };
        let n = rng.random_range(0..=3);
        let mut ids: Vec<u64> = Vec::new();
        while ids.len() < n {
            let id = rng.random_range(0..100);
            if !ids.contains(&id) {
                ids.push(id);
            }
        }
        let dets: Vec<TrackedDetection> = ids
            .iter()
            .map(|&track_id| TrackedDetection { frame_index: 0, track_id, pose: random_pose(&mut rng, w, h, 4.0) })
            .collect();
        let got = render_frame(&dets, &cfg);
        let want = oracle_frame(&dets, &cfg);
        let bad = got.iter().zip(&want).filter(|(a, b)| a.to_bits() != b.to_bits()).count();
        ensure(bad == 0, || format!("frame {frame} ({h}x{w}, {n} skeletons): {bad} values differ"))?;
        lit += got.iter().filter(|v| **v != 0.0).count();
    }
    Ok(format!("200/200 frames match the distance oracle ({lit} lit values)"))
}

// ---------------------------------------------------------------- 2

fn c2_fusion() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..50 {
        let (h, w, t) = (rng.random_range(16..=40), rng.random_range(16..=48), rng.random_range(1..=6));
        let persons = rng.random_range(1..=4);
        let clip = synth_clip(&mut rng, h, w, t, persons);
        let rendered = render_clip(&clip, &RenderConfig::with_size(h, w)).map_err(|e| e.to_string())?;
        let fused = fuse(&clip, &rendered).map_err(|e| e.to_string())?.tensor;
        ensure(fused.shape() == [t, 6, h, w], || format!("case {case}: shape {:?}", fused.shape()))?;
        let v = fused.channel_slice(0, 3).map_err(|e| e.to_string())?;
        let k = fused.channel_slice(3, 6).map_err(|e| e.to_string())?;
        let same = |a: &[f32], b: &[f32]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(same(v.data(), clip.frames.data()), || format!("case {case}: RGB channels differ"))?;
        ensure(same(k.data(), rendered.tensor.data()), || format!("case {case}: pose channels differ"))?;
    }
    Ok("50/50 random clips: F = (V | K') bit-exact, shape T x 6 x H x W".into())
}

// ---------------------------------------------------------------- 3

fn c3_stem() -> Check {
    let cfg = ModelConfig::tiny(3, 3, [4, 16, 24]);
    let mut rgb = build_backbone::<f32>(&cfg).map_err(|e| e.to_string())?;
    let adapted = adapt_stem(rgb.stem()).map_err(|e| e.to_string())?;
    let shape = adapted.weight.shape.clone();
    ensure(shape[1] == 6, || format!("adapted stem has {} input channels", shape[1]))?;
    let block: usize = shape[2..].iter().product();
    for o in 0..shape[0] {
        let filt = &adapted.weight.value[o * 6 * block..][..6 * block];
        ensure(filt[..3 * block] == filt[3 * block..], || format!("filter {o}: pose weights differ from RGB weights"))?;
        let orig = &rgb.stem().weight.value[o * 3 * block..][..3 * block];
        ensure(filt[..3 * block] == *orig, || format!("filter {o}: RGB weights changed"))?;
    }
    let mut fused: ResNet3d<f32> = rgb.clone();
    fused.replace_stem(adapted).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f32;
    for _ in 0..20 {
        let (b, per) = (2, 3 * 4 * 16 * 24);
        let x3: Vec<f32> = (0..b * per).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut x6 = vec![0.0f32; 2 * b * per];
        for i in 0..b {
            x6[i * 2 * per..][..per].copy_from_slice(&x3[i * per..][..per]);
        }
        let x3 = Tensor::from_vec(&[b, 3, 4, 16, 24], x3).unwrap();
        let x6 = Tensor::from_vec(&[b, 6, 4, 16, 24], x6).unwrap();
        let a = rgb.stem_features(&x3, Mode::Eval).map_err(|e| e.to_string())?;
        let f = fused.stem_features(&x6, Mode::Eval).map_err(|e| e.to_string())?;
        worst = a.data().iter().zip(f.data()).map(|(p, q)| (p - q).abs()).fold(worst, f32::max);
    }
    ensure(worst <= 1e-5, || format!("zero-pose stem output differs by {worst:e}"))?;
    Ok(format!("duplicated filters exact; zero-pose stem max |diff| {worst:e} over 20 inputs"))
}

// ---------------------------------------------------------------- 4

fn c4_schedule() -> Check {
    let cfg = TrainConfig::default();
    ensure(lr_at(0, &cfg) == 1e-3, || format!("lr at epoch 0 is {}", lr_at(0, &cfg)))?;
    for e in 0..=35usize {
        let want = 1e-3 * 0.1f64.powi((e / 10) as i32);
        ensure(lr_at(e, &cfg).to_bits() == want.to_bits(), || format!("epoch {e}: {} != {want}", lr_at(e, &cfg)))?;
    }
    Ok("lr = 1e-3 * 0.1^floor(e/10) exactly for e in 0..=35".into())
}

// ---------------------------------------------------------------- 5

fn c5_flip() -> Check {
    let vb = LabelSpace::volleyball();
    for (i, name) in vb.class_names().iter().enumerate() {
        let partner = match name.split_at(2) {
            ("l_", rest) => format!("r_{rest}"),
            ("r_", rest) => format!("l_{rest}"),
            _ => return Err(format!("unexpected class {name}")),
        };
        ensure(vb.name(vb.flip(i)) == Some(partner.as_str()), || format!("{name} flips to {:?}", vb.name(vb.flip(i))))?;
        ensure(vb.flip(vb.flip(i)) == i, || format!("{name} does not flip back"))?;
    }
    let vb = Arc::new(vb);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let (h, w) = (rng.random_range(16..=40), rng.random_range(16..=56));
        let (frames, persons) = (rng.random_range(1..=5), rng.random_range(1..=5));
        let mut clip = synth_clip(&mut rng, h, w, frames, persons);
        if case % 2 == 0 {
            clip.label_space = vb.clone();
            clip.label = rng.random_range(0..vb.len());
        }
        let flipped = flip_augment(&clip);
        ensure(flipped.label == clip.label_space.flip(clip.label), || format!("case {case}: label not remapped"))?;
        ensure(flip_augment(&flipped) == clip, || format!("case {case}: flip is not an involution"))?;
        let cfg = RenderConfig::with_size(h, w);
        let a = render_clip(&flipped, &cfg).map_err(|e| e.to_string())?.tensor;
        let b = render_clip(&clip, &cfg).map_err(|e| e.to_string())?.tensor.mirrored();
        ensure(a == b, || format!("case {case}: render(flip) != mirror(render)"))?;
    }
    Ok("volleyball flip map pairs l_/r_; 50/50 involutions; render∘flip == mirror∘render".into())
}

// ---------------------------------------------------------------- 6

fn straight_tracks(n: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Tracklet> {
    (0..n as u64)
        .map(|track_id| Tracklet {
            track_id,
            detections: (0..len)
                .map(|frame_index| TrackedDetection { frame_index, track_id, pose: random_pose(rng, 1000, 1000, 0.0) })
                .collect(),
        })
        .collect()
}

fn c6_corruption_stats() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let tracks = straight_tracks(1000, 10, &mut rng);
    let mut notes = Vec::new();
    for p in [0.1, 0.5] {
        let out = fragment_tracks(&tracks, p, &mut ChaCha8Rng::seed_from_u64(60));
        let k = out.len() - tracks.len();
        let (mean, sd) = (1000.0 * p, (1000.0 * p * (1.0 - p)).sqrt());
        ensure((k as f64 - mean).abs() <= 3.0 * sd, || format!("p={p}: {k} fragmented, expected {mean} ± {:.1}", 3.0 * sd))?;
        notes.push(format!("p={p}: {k}/1000"));
    }

    let sigma = 2.0;
    let base = straight_tracks(40, 15, &mut rng);
    let moved = perturb_keypoints(&base, sigma, 0.0, &mut ChaCha8Rng::seed_from_u64(61));
    let mut deltas = Vec::new();
    for (a, b) in base.iter().zip(&moved) {
        for (da, db) in a.detections.iter().zip(&b.detections) {
            for (ka, kb) in da.pose.keypoints().iter().zip(db.pose.keypoints()) {
                deltas.push(kb.x - ka.x);
                deltas.push(kb.y - ka.y);
            }
        }
    }
    let keypoints = deltas.len() / 2;
    ensure(keypoints >= 10_000, || format!("only {keypoints} keypoints"))?;
    let m = deltas.iter().sum::<f64>() / deltas.len() as f64;
    let sd = (deltas.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (deltas.len() - 1) as f64).sqrt();
    ensure((sd - sigma).abs() <= 0.04 * sigma, || format!("jitter std {sd:.4} vs sigma {sigma}"))?;

    let geometry = ClipGeometry { frames: 15, width: 1000, height: 1000 };
    let (same, report) = corrupt(&base, &CorruptionConfig { seed: 9, ..CorruptionConfig::default() }, geometry)
        .map_err(|e| e.to_string())?;
    ensure(same == base, || "zero-config corruption changed the tracks".into())?;
    ensure(report.fragmented_tracks + report.id_switches + report.jittered_keypoints == 0, || {
        "zero-config corruption reported changes".into()
    })?;
    Ok(format!("fragmented {}; jitter std {sd:.3} (sigma 2, {keypoints} keypoints); zero config is identity", notes.join(", ")))
}

// ---------------------------------------------------------------- 7

fn c7_geometry_invariance() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut slot_changes = 0;
    for case in 0..50u64 {
        let persons = rng.random_range(2..=6);
        let clip = synth_clip(&mut rng, 32, 56, 12, persons);
        let cfg = CorruptionConfig { fragmentation_prob: 0.5, id_switch_prob: 0.3, seed: case, ..CorruptionConfig::default() };
        ensure(cfg.is_identity_only(), || "config is not identity-only".into())?;
        let (bad, _) = corrupt_clip(&clip, &cfg).map_err(|e| e.to_string())?;
        let rcfg = RenderConfig::with_size(32, 56);
        let a = render_clip(&clip, &rcfg).map_err(|e| e.to_string())?.tensor.nonzero_support();
        let b = render_clip(&bad, &rcfg).map_err(|e| e.to_string())?.tensor.nonzero_support();
        ensure(a == b, || format!("case {case}: rendered support changed"))?;
        let (ka, kb) = (keypoints_to_tensor(&clip, 12), keypoints_to_tensor(&bad, 12));
        if ka.coords != kb.coords || ka.mask != kb.mask {
            slot_changes += 1;
        }
    }
    ensure(slot_changes >= 1, || "no clip changed its keypoint-tensor slots".into())?;
    Ok(format!("support unchanged in 50/50 clips; slot assignment changed in {slot_changes}/50"))
}

// ---------------------------------------------------------------- 8

/// Probes where the central difference at eps=1e-3 disagrees with eps=1e-4
/// by more than 1e-3 relative have a ReLU crossing inside the stencil and
/// are discarded; at least ten probes must survive.
fn c8_gradients() -> Check {
    let rel = |a: f64, b: f64| {
        let d = (a - b).abs();
        if d == 0.0 {
            0.0
        } else {
            d / a.abs().max(b.abs())
        }
    };
    let cfg = ModelConfig { base_width: 4, stage_blocks: vec![1, 1], ..ModelConfig::tiny(3, 6, [8, 16, 16]) };
    let mut net = build_backbone::<f64>(&cfg).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..2 * 6 * 8 * 16 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
    let x = Tensor::from_vec(&[2, 6, 8, 16, 16], x).unwrap();
    let labels = [0usize, 2];
    let loss = |net: &mut ResNet3d<f64>| {
        let logits = net.forward(&x, Mode::Train).unwrap();
        softmax_cross_entropy(&logits, &labels).unwrap()
    };
    let (_, grad) = loss(&mut net);
    net.backward(&grad).map_err(|e| e.to_string())?;
    let mut params = Vec::new();
    net.visit_params(&mut |name, p| {
        if p.trainable {
            params.push((name.to_string(), p.value.len()))
        }
    });
    let (mut kept, mut discarded, mut worst) = (0, 0, 0.0f64);
    for _ in 0..60 {
        if kept >= 12 {
            break;
        }
        let (name, len) = params[rng.random_range(0..params.len())].clone();
        let idx = rng.random_range(0..len);
        let mut analytic = 0.0;
        net.visit_params(&mut |n, p| {
            if n == name {
                analytic = p.grad[idx]
            }
        });
        let diff = |eps: f64| {
            let eval = |delta: f64| {
                let mut probe = net.clone();
                probe.visit_params(&mut |n, p| {
                    if n == name {
                        p.value[idx] += delta
                    }
                });
                loss(&mut probe).0
            };
            (eval(eps) - eval(-eps)) / (2.0 * eps)
        };
        let (coarse, fine) = (diff(1e-3), diff(1e-4));
        if rel(coarse, fine) > 1e-3 && (coarse - fine).abs() > 1e-9 {
            discarded += 1;
            continue;
        }
        kept += 1;
        if (analytic - coarse).abs() > 1e-9 {
            worst = worst.max(rel(analytic, coarse));
        }
        ensure(rel(analytic, coarse) <= 1e-2 || (analytic - coarse).abs() <= 1e-9, || {
            format!("{name}[{idx}]: analytic {analytic} vs numeric {coarse}")
        })?;
    }
    ensure(kept >= 10, || format!("only {kept} usable probes ({discarded} discarded)"))?;
    Ok(format!("{kept} parameters within rel err {worst:.1e} (eps 1e-3; {discarded} kink-crossing probes discarded)"))
}

// ---------------------------------------------------------------- 9-11

const NATIVE: SynthConfig = SynthConfig {
    clips_per_class: 10,
    frames: 20,
    height: 128,
    width: 224,
    persons: 6,
    seed: 0,
    figure_contrast: 0.12,
    frame_noise: 0.08,
};

fn tracking_failure(seed: u64) -> CorruptionConfig {
    CorruptionConfig { fragmentation_prob: 0.5, id_switch_prob: 0.3, jitter_sigma: 2.0, seed, ..CorruptionConfig::default() }
}

/// Clips are generated at the native 128x224, corrupted there (so jitter is
/// in native pixels) and then downsampled to the working size, as the
/// manifest loader does.
struct Protocol {
    train: Dataset,
    val: Dataset,
    test: Dataset,
    test_corrupted: Dataset,
}

fn protocol(seed: u64, h: usize, w: usize) -> Protocol {
    let space = Arc::new(synth_label_space());
    let make = |per_class: usize, base: u64, corruption: Option<&CorruptionConfig>| {
        let mut clean = Vec::new();
        let mut bad = Vec::new();
        for i in 0..per_class * 3 {
            let mut clip = gen_clip(i % 3, &NATIVE, clip_seed(base, i as u64)).expect("valid config");
            clip.label_space = space.clone();
            if let Some(cfg) = corruption {
                let cfg = CorruptionConfig { seed: repgars::corruptor::derive_seed(cfg.seed, i as u64), ..cfg.clone() };
                bad.push(resize_clip(&corrupt_clip(&clip, &cfg).expect("valid config").0, h, w));
            }
            clean.push(resize_clip(&clip, h, w));
        }
        (Dataset::new(space.clone(), clean).unwrap(), Dataset::new(space.clone(), bad).unwrap())
    };
    let (train, _) = make(10, 1000 + seed, None);
    let (val, _) = make(4, 2000 + seed, None);
    let (test, test_corrupted) = make(20, 3000 + seed, Some(&tracking_failure(seed)));
    Protocol { train, val, test, test_corrupted }
}

fn rendered(setting: InputSetting, seed: u64, h: usize, w: usize) -> RenderedPoseClassifier {
    let cfg = ModelConfig { init_seed: seed, ..ModelConfig::tiny(3, setting.in_channels(), [20, h, w]) };
    RenderedPoseClassifier::new(&cfg, setting, RenderConfig::with_size(h, w)).expect("valid model config")
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 30, seed, ..TrainConfig::default() }
}

fn c9_learnability() -> Check {
    let (h, w) = (64, 112);
    let data = protocol(0, h, w);
    let start = Instant::now();
    let mut model = rendered(InputSetting::Fused, 0, h, w);
    let outcome = train(&mut model, &data.train, Some(&data.val), &train_cfg(0)).map_err(|e| e.to_string())?;
    let acc = evaluate(&mut model, &data.test, 8).map_err(|e| e.to_string())?.accuracy;
    let elapsed = start.elapsed();
    let detail = format!(
        "fused test accuracy {:.1}% on {} clips, best epoch {} of 30, {:.0} s",
        100.0 * acc,
        data.test.len(),
        outcome.best_epoch,
        elapsed.as_secs_f64()
    );
    ensure(acc >= 0.90, || detail.clone())?;
    ensure(elapsed <= Duration::from_secs(20 * 60), || detail.clone())?;
    Ok(detail)
}

struct SeedResult {
    clean: [f64; 3],
    drop_fused: f64,
    drop_late: f64,
    drop_early: f64,
}

/// Trains the three input settings and both keypoint baselines for one seed
/// at 32x56.
fn seed_run(seed: u64) -> Result<SeedResult, String> {
    let (h, w) = (32, 56);
    let data = protocol(seed, h, w);
    let cfg = train_cfg(seed);
    let drops = |model: &mut dyn GroupActivityModel| -> Result<(f64, f64), String> {
        train(model, &data.train, Some(&data.val), &cfg).map_err(|e| e.to_string())?;
        let clean = evaluate(model, &data.test, 8).map_err(|e| e.to_string())?.accuracy;
        let bad = evaluate(model, &data.test_corrupted, 8).map_err(|e| e.to_string())?.accuracy;
        Ok((clean, clean - bad))
    };
    let mut clean = [0.0; 3];
    let mut drop_fused = 0.0;
    for (i, setting) in InputSetting::ALL.into_iter().enumerate() {
        let (acc, drop) = drops(&mut rendered(setting, seed, h, w))?;
        clean[i] = acc;
        if setting == InputSetting::Fused {
            drop_fused = drop;
        }
    }
    let baseline = BaselineConfig { num_classes: 3, init_seed: seed, ..BaselineConfig::default() };
    let (_, drop_late) = drops(&mut KeypointClassifier::late(&baseline).map_err(|e| e.to_string())?)?;
    let (_, drop_early) = drops(&mut KeypointClassifier::early(&baseline).map_err(|e| e.to_string())?)?;
    Ok(SeedResult { clean, drop_fused, drop_late, drop_early })
}

fn c10_robustness(runs: &[SeedResult]) -> Check {
    let wins = runs.iter().filter(|r| r.drop_fused < r.drop_late).count();
    let detail = runs
        .iter()
        .enumerate()
        .map(|(s, r)| {
            format!(
                "seed {s}: fused {:+.1} late {:+.1} early {:+.1}",
                -100.0 * r.drop_fused,
                -100.0 * r.drop_late,
                -100.0 * r.drop_early
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    let detail = format!("fused drop < late-fusion drop in {wins}/3 seeds (points: {detail})");
    ensure(wins >= 2, || detail.clone())?;
    Ok(detail)
}

fn c11_ablation(runs: &[SeedResult]) -> Check {
    let mean = |i: usize| runs.iter().map(|r| r.clean[i]).sum::<f64>() / runs.len() as f64;
    let (rgb, pose, fused) = (mean(0), mean(1), mean(2));
    let detail = format!("mean test accuracy rgb {:.1}%, pose {:.1}%, fused {:.1}%", 100.0 * rgb, 100.0 * pose, 100.0 * fused);
    ensure(fused >= pose && fused > rgb, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 12

fn c12_volleyball(manifest: &str) -> Check {
    let manifest = load_manifest(manifest).map_err(|e| e.to_string())?;
    let opts = ClipLoadOptions::default();
    let load = |s| load_dataset(&manifest, s, &opts).map_err(|e| e.to_string());
    let (train_set, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    let model_cfg = ModelConfig {
        num_classes: manifest.label_space.len(),
        pretrained_weights: std::env::var_os("REPGARS_PRETRAINED").map(Into::into),
        ..ModelConfig::default()
    };
    let mut model = RenderedPoseClassifier::new(&model_cfg, InputSetting::Fused, RenderConfig::default())
        .map_err(|e| e.to_string())?;
    let val = (!val.is_empty()).then_some(&val);
    train(&mut model, &train_set, val, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let acc = evaluate(&mut model, &test, 8).map_err(|e| e.to_string())?.accuracy;
    let detail = format!("fused test accuracy {:.1}% on {} clips", 100.0 * acc, test.len());
    ensure(acc >= 0.80, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- runner

fn guarded(f: impl FnOnce() -> Check) -> Check {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    let only: Option<Vec<u32>> = std::env::var("REPGARS_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let mut failures = 0;
    let mut report = |id: u32, name: &str, started: Instant, result: Check| {
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("[PASS] {id:>2} {name}: {detail} ({secs:.1}s)"),
            Err(detail) => {
                failures += 1;
                println!("[FAIL] {id:>2} {name}: {detail} ({secs:.1}s)");
            }
        }
    };

    let quick: [(u32, &str, fn() -> Check); 9] = [
        (1, "rasterizer exactness", c1_rasterizer),
        (2, "fusion contract", c2_fusion),
        (3, "stem adaptation", c3_stem),
        (4, "optimizer schedule", c4_schedule),
        (5, "flip augmentation", c5_flip),
        (6, "corruption statistics", c6_corruption_stats),
        (7, "geometry invariance", c7_geometry_invariance),
        (8, "gradient check", c8_gradients),
        (9, "end-to-end learnability", c9_learnability),
    ];
    for (id, name, f) in quick {
        if wanted(id) {
            let t = Instant::now();
            report(id, name, t, guarded(f));
        }
    }

    if wanted(10) || wanted(11) {
        let t = Instant::now();
        let runs: Result<Vec<SeedResult>, String> = catch_unwind(|| (0..3).map(seed_run).collect())
            .unwrap_or_else(|_| Err("seed run panicked".into()));
        match runs {
            Ok(runs) => {
                if wanted(10) {
                    report(10, "directional robustness", t, c10_robustness(&runs));
                }
                if wanted(11) {
                    report(11, "ablation ordering", t, c11_ablation(&runs));
                }
            }
            Err(e) => {
                for (id, name) in [(10, "directional robustness"), (11, "ablation ordering")] {
                    if wanted(id) {
                        report(id, name, t, Err(e.clone()));
                    }
                }
            }
        }
    }

    if wanted(12) {
        let t = Instant::now();
        match std::env::var("REPGARS_VOLLEYBALL_MANIFEST") {
            Ok(path) => report(12, "volleyball (optional)", t, guarded(|| c12_volleyball(&path))),
            Err(_) => println!("[SKIP] 12 volleyball (optional): set REPGARS_VOLLEYBALL_MANIFEST to run"),
        }
    }

    if failures > 0 {
        println!("{failures} criterion(s) failed");
        std::process::exit(1);
    }
}
