//! Deterministic synthetic group-activity clips: articulated stick figures
//! walking over a textured court in one of three group motion patterns.
//!
//! The RGB frames show the figures faintly (low contrast plus sensor noise)
//! so an RGB-only model has signal, while the exact ground-truth tracks make
//! the rendered-pose input clean.

use std::f64::consts::TAU;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::coco::{
    LEFT_ANKLE, LEFT_ELBOW, LEFT_KNEE, LEFT_WRIST, NUM_KEYPOINTS, RIGHT_ANKLE, RIGHT_ELBOW, RIGHT_KNEE, RIGHT_WRIST,
    STANDING_TEMPLATE,
};
use crate::error::{Error, Result};
use crate::poserender::{draw_detection, RenderConfig};
use crate::trackpose_io::{
    build_tracklets, flatten_tracklets, save_frames, save_manifest, write_detections, ClipSample, CourtPolygon,
    Dataset, DatasetManifest, Keypoint2D, LabelSpace, ManifestClip, Pose17, Split, TrackedDetection,
};
use crate::video::ClipTensor;

pub const CLASS_NAMES: [&str; 3] = ["converge_left", "converge_right", "crossover"];
pub const CONVERGE_LEFT: usize = 0;
pub const CONVERGE_RIGHT: usize = 1;
pub const CROSSOVER: usize = 2;

/// `converge_left <-> converge_right`, `crossover` fixed.
pub fn synth_label_space() -> LabelSpace {
    LabelSpace::new(CLASS_NAMES.iter().map(|s| s.to_string()).collect(), vec![1, 0, 2])
        .expect("valid flip map")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub persons: usize,
    pub seed: u64,
    /// Brightness offset of figures over the court in RGB frames.
    pub figure_contrast: f32,
    /// Per-frame Gaussian pixel noise in RGB frames.
    pub frame_noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 10,
            frames: 20,
            height: 128,
            width: 224,
            persons: 6,
            seed: 0,
            figure_contrast: 0.12,
            frame_noise: 0.08,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clips_per_class == 0 || self.frames == 0 || self.persons == 0 {
            return Err(Error::Config("clips_per_class, frames and persons must be positive".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!("frames must be at least 16x16, got {}x{}", self.height, self.width)));
        }
        if !(self.figure_contrast.is_finite() && self.frame_noise >= 0.0 && self.frame_noise.is_finite()) {
            return Err(Error::Config("figure_contrast and frame_noise must be finite, noise non-negative".into()));
        }
        Ok(())
    }
}

fn f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

/// Seed of the `index`-th clip of a dataset.
pub fn clip_seed(dataset_seed: u64, index: u64) -> u64 {
    crate::corruptor::derive_seed(dataset_seed, index)
}

/// One walking figure: anthropometry, gait and a straight-line path of the
/// point between its feet.
struct Walker {
    scale: f64,
    shoulder: f64,
    phase: f64,
    cadence: f64,
    start: (f64, f64),
    end: (f64, f64),
}

impl Walker {
    fn pose(&self, t: usize, frames: usize, height: f64) -> Pose17 {
        let s = if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
        let x = self.start.0 + (self.end.0 - self.start.0) * s;
        let y = self.start.1 + (self.end.1 - self.start.1) * s;
        // farther up the court is farther from the camera
        let h = height * 0.3 * self.scale * (0.6 + 0.4 * y / height);
        let moving = ((self.end.0 - self.start.0).abs() / height).min(1.0);
        let phase = self.phase + self.cadence * t as f64;
        let stride = 0.12 * h * (0.3 + moving) * phase.sin();
        let bob = 0.015 * h * phase.sin().abs();
        let mut kps = [Keypoint2D::new(0.0, 0.0, 1.0); NUM_KEYPOINTS];
        for (j, (kp, &(dx, dy))) in kps.iter_mut().zip(STANDING_TEMPLATE.iter()).enumerate() {
            let widen = if j <= 4 { 1.0 } else { self.shoulder };
            let swing = match j {
                LEFT_ANKLE => stride,
                RIGHT_ANKLE => -stride,
                LEFT_KNEE => 0.5 * stride,
                RIGHT_KNEE => -0.5 * stride,
                LEFT_WRIST => -0.7 * stride,
                RIGHT_WRIST => 0.7 * stride,
                LEFT_ELBOW => -0.35 * stride,
                RIGHT_ELBOW => 0.35 * stride,
                _ => 0.0,
            };
            let lift = if j == LEFT_ANKLE || j == RIGHT_ANKLE { 0.0 } else { bob };
            kp.x = f32_precision(x + dx * widen * h + swing);
            kp.y = f32_precision(y + dy * h - lift);
        }
        Pose17(kps)
    }
}

fn walkers(class_id: usize, config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Walker> {
    let (w, h) = (config.width as f64, config.height as f64);
    let jitter = Normal::new(0.0, 0.04 * w).expect("positive std");
    let n = config.persons;
    (0..n)
        .map(|i| {
            let (x0, x1) = match class_id {
                CONVERGE_LEFT => (rng.random_range(0.15..0.85) * w, w / 6.0 + jitter.sample(rng)),
                CONVERGE_RIGHT => (rng.random_range(0.15..0.85) * w, 5.0 * w / 6.0 + jitter.sample(rng)),
                _ if i < n / 2 => (rng.random_range(0.1..0.4) * w, rng.random_range(0.6..0.9) * w),
                _ => (rng.random_range(0.6..0.9) * w, rng.random_range(0.1..0.4) * w),
            };
            let y0 = rng.random_range(0.5..0.92) * h;
            let y1 = (y0 + rng.random_range(-0.05..0.05) * h).clamp(0.5 * h, 0.95 * h);
            Walker {
                scale: rng.random_range(0.85..1.15),
                shoulder: rng.random_range(0.9..1.1),
                phase: rng.random_range(0.0..TAU),
                cadence: rng.random_range(0.5..0.9),
                start: (x0.clamp(0.05 * w, 0.95 * w), y0),
                end: (x1.clamp(0.05 * w, 0.95 * w), y1),
            }
        })
        .collect()
}

/// Court region figures stay within (feet inside).
pub fn court_polygon(config: &SynthConfig) -> CourtPolygon {
    let (w, h) = ((config.width - 1) as f64, (config.height - 1) as f64);
    CourtPolygon::new(vec![[0.0, 0.35 * h], [w, 0.35 * h], [w, h], [0.0, h]]).expect("four finite vertices")
}

/// Static court: smooth colour noise, a little pixel grain and court lines.
fn background(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let (h, w) = (config.height, config.width);
    let (gh, gw) = (6usize, 10usize);
    let base = [0.32f32, 0.42, 0.28];
    let grid: Vec<f32> = (0..3 * (gh + 1) * (gw + 1)).map(|_| rng.random_range(-0.15..0.15)).collect();
    let mut px = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..h {
            let gy = y as f32 / (h - 1) as f32 * gh as f32;
            let (y0, fy) = ((gy as usize).min(gh - 1), gy - (gy as usize).min(gh - 1) as f32);
            for x in 0..w {
                let gx = x as f32 / (w - 1) as f32 * gw as f32;
                let (x0, fx) = ((gx as usize).min(gw - 1), gx - (gx as usize).min(gw - 1) as f32);
                let g = |yy: usize, xx: usize| grid[(c * (gh + 1) + yy) * (gw + 1) + xx];
                let smooth = (1.0 - fy) * ((1.0 - fx) * g(y0, x0) + fx * g(y0, x0 + 1))
                    + fy * ((1.0 - fx) * g(y0 + 1, x0) + fx * g(y0 + 1, x0 + 1));
                px[(c * h + y) * w + x] = base[c] + smooth + rng.random_range(-0.04..0.04);
            }
        }
    }
    let top = (0.35 * (h - 1) as f64).round() as usize;
    let mut line = |y: usize, x: usize| {
        for c in 0..3 {
            px[(c * h + y) * w + x] = 0.8;
        }
    };
    for x in 0..w {
        line(top, x);
        line(h - 1, x);
    }
    for y in top..h {
        line(y, 0);
        line(y, w - 1);
        line(y, w / 2);
    }
    px
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// One clip of `class_id`. Deterministic in `(class_id, config, seed)`;
/// `config.seed` and `config.clips_per_class` are not used.
pub fn gen_clip(class_id: usize, config: &SynthConfig, seed: u64) -> Result<ClipSample> {
    config.validate()?;
    if class_id >= CLASS_NAMES.len() {
        return Err(Error::InvalidInput(format!("class {class_id} is not one of the {} synthetic classes", CLASS_NAMES.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (t_len, h, w) = (config.frames, config.height, config.width);
    let people = walkers(class_id, config, &mut rng);
    let id_pool = (4 * config.persons).max(50);
    let ids: Vec<u64> = sample(&mut rng, id_pool, config.persons).into_iter().map(|i| i as u64).collect();
    let confidences: Vec<f64> = (0..config.persons).map(|_| f32_precision(rng.random_range(0.6..1.0))).collect();

    let mut detections = Vec::with_capacity(t_len * people.len());
    for t in 0..t_len {
        for (p, walker) in people.iter().enumerate() {
            let mut pose = walker.pose(t, t_len, h as f64);
            pose.keypoints_mut().iter_mut().for_each(|k| k.confidence = confidences[p]);
            detections.push(TrackedDetection { frame_index: t, track_id: ids[p], pose });
        }
    }

    let court = background(config, &mut rng);
    let figure = RenderConfig { limb_thickness: 1.5, joint_radius: 1.0, confidence_threshold: 0.0, ..RenderConfig::with_size(h, w) };
    let noise = Normal::new(0.0f32, config.frame_noise.max(f32::MIN_POSITIVE)).expect("finite std");
    let mut frames = ClipTensor::zeros(t_len, 3, h, w);
    for t in 0..t_len {
        let out = frames.frame_mut(t);
        out.copy_from_slice(&court);
        for (p, det) in detections[t * people.len()..(t + 1) * people.len()].iter().enumerate() {
            let shade = config.figure_contrast * if p % 2 == 0 { 1.0 } else { 0.8 };
            let color = [0.32 + shade, 0.42 + shade, 0.28 + shade];
            draw_detection(out, h, w, det, &figure, color);
        }
        for v in out.iter_mut() {
            let n = if config.frame_noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            *v = quantize(*v + n);
        }
    }

    Ok(ClipSample {
        clip_id: format!("{}_{seed:016x}", CLASS_NAMES[class_id]),
        frames,
        tracklets: build_tracklets(detections)?,
        label: class_id,
        label_space: Arc::new(synth_label_space()),
    })
}

/// Split of the `index`-th of `total` clips: the first `floor(0.7 n)` are
/// train, the next `floor(0.15 n)` val, the rest test (21/4/5 for 30).
pub fn split_of(index: usize, total: usize) -> Split {
    let train = total * 70 / 100;
    let val = total * 15 / 100;
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// All clips of a dataset in order; classes are interleaved so every split
/// is close to balanced.
pub fn gen_clips(config: &SynthConfig) -> Result<Vec<(ClipSample, Split)>> {
    config.validate()?;
    let total = config.clips_per_class * CLASS_NAMES.len();
    (0..total)
        .map(|i| {
            let mut clip = gen_clip(i % CLASS_NAMES.len(), config, clip_seed(config.seed, i as u64))?;
            clip.clip_id = format!("synth_{i:04}_{}", CLASS_NAMES[clip.label]);
            Ok((clip, split_of(i, total)))
        })
        .collect()
}

/// In-memory train/val/test datasets, identical to what [`gen_dataset`]
/// writes and the loader reads back without resizing.
pub fn gen_splits(config: &SynthConfig) -> Result<(Dataset, Dataset, Dataset)> {
    let space = Arc::new(synth_label_space());
    let mut parts = [Vec::new(), Vec::new(), Vec::new()];
    for (mut clip, split) in gen_clips(config)? {
        clip.label_space = Arc::clone(&space);
        parts[split as usize].push(clip);
    }
    let [train, val, test] = parts;
    Ok((
        Dataset::new(Arc::clone(&space), train)?,
        Dataset::new(Arc::clone(&space), val)?,
        Dataset::new(space, test)?,
    ))
}

/// Writes `manifest.json` and `clips/<id>/{frames/*.png, detections.jsonl,
/// court.json}` under `out_dir`.
pub fn gen_dataset(config: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let mut entries = Vec::new();
    let court = serde_json::to_string(&court_polygon(config))?;
    for (clip, split) in gen_clips(config)? {
        let rel = Path::new("clips").join(&clip.clip_id);
        let dir = out_dir.join(&rel);
        save_frames(dir.join("frames"), &clip.frames)?;
        let det_path = dir.join("detections.jsonl");
        let file = std::fs::File::create(&det_path).map_err(|e| Error::io(&det_path, e))?;
        let mut writer = std::io::BufWriter::new(file);
        write_detections(&mut writer, &flatten_tracklets(&clip.tracklets))?;
        std::io::Write::flush(&mut writer).map_err(|e| Error::io(&det_path, e))?;
        let court_path = dir.join("court.json");
        std::fs::write(&court_path, &court).map_err(|e| Error::io(&court_path, e))?;
        entries.push(ManifestClip {
            id: clip.clip_id.clone(),
            path: rel,
            center_frame: config.frames / 2,
            label: clip.label,
            split,
            width: config.width,
            height: config.height,
        });
    }
    let manifest =
        DatasetManifest { label_space: Arc::new(synth_label_space()), clips: entries, root: out_dir.to_path_buf() };
    save_manifest(out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}
