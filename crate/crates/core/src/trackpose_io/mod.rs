//! Tracked-pose ingestion: typed detections and tracklets, the court-region
//! player filter, temporal windowing and dataset manifests.

mod court;
mod detections;
mod manifest;
mod media;
mod window;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coco::{self, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::video::ClipTensor;

pub use court::{filter_court, CourtPolygon, DEFAULT_MIN_INSIDE_FRACTION};
pub use detections::{build_tracklets, flatten_tracklets, parse_detections, write_detections};
pub use manifest::{load_manifest, save_manifest, DatasetManifest, ManifestClip, Split};
pub use media::{frame_to_rgb8, load_dataset, load_frames, resize_clip, save_frames, ClipLoadOptions};
pub use window::{extract_window, window_start};

/// Confidence below which a keypoint is treated as missing by anchor selection
/// and rendering defaults.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint2D {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint2D {
    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Self { x, y, confidence }
    }
}

/// Exactly 17 keypoints in COCO order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose17(pub [Keypoint2D; NUM_KEYPOINTS]);

impl Pose17 {
    pub fn keypoints(&self) -> &[Keypoint2D; NUM_KEYPOINTS] {
        &self.0
    }

    pub fn keypoints_mut(&mut self) -> &mut [Keypoint2D; NUM_KEYPOINTS] {
        &mut self.0
    }

    /// Ground-contact point used for the on-court test: midpoint of the ankles,
    /// or of the hips when both ankles fall below `threshold`.
    pub fn anchor(&self, threshold: f64) -> (f64, f64) {
        let k = &self.0;
        let (a, b) = if k[coco::LEFT_ANKLE].confidence < threshold
            && k[coco::RIGHT_ANKLE].confidence < threshold
        {
            (k[coco::LEFT_HIP], k[coco::RIGHT_HIP])
        } else {
            (k[coco::LEFT_ANKLE], k[coco::RIGHT_ANKLE])
        };
        ((a.x + b.x) * 0.5, (a.y + b.y) * 0.5)
    }

    /// Mirrors about the vertical axis of a `width`-pixel frame, swapping left
    /// and right joints.
    pub fn mirrored(&self, width: usize) -> Pose17 {
        let edge = (width as f64) - 1.0;
        let mut out = self.0;
        for (dst, &src) in out.iter_mut().zip(coco::MIRROR_PERMUTATION.iter()) {
            let kp = self.0[src];
            *dst = Keypoint2D { x: edge - kp.x, ..kp };
        }
        Pose17(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedDetection {
    pub frame_index: usize,
    pub track_id: u64,
    pub pose: Pose17,
}

/// Detections of one identity, strictly increasing in frame index (gaps allowed).
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub track_id: u64,
    pub detections: Vec<TrackedDetection>,
}

impl Tracklet {
    pub fn len(&self) -> usize {
        self.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.is_empty()
    }

    pub fn first_frame(&self) -> Option<usize> {
        self.detections.first().map(|d| d.frame_index)
    }

    pub fn at_frame(&self, frame: usize) -> Option<&TrackedDetection> {
        self.detections
            .binary_search_by_key(&frame, |d| d.frame_index)
            .ok()
            .map(|i| &self.detections[i])
    }

    pub fn validate(&self) -> Result<()> {
        for d in &self.detections {
            if d.track_id != self.track_id {
                return Err(Error::InvalidInput(format!(
                    "tracklet {} holds a detection of track {}",
                    self.track_id, d.track_id
                )));
            }
        }
        for w in self.detections.windows(2) {
            if w[0].frame_index >= w[1].frame_index {
                return Err(Error::InvalidInput(format!(
                    "tracklet {} frames not strictly increasing ({} then {})",
                    self.track_id, w[0].frame_index, w[1].frame_index
                )));
            }
        }
        Ok(())
    }
}

/// Ordered group-activity classes and the left/right relabeling used by
/// horizontal flips.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawLabelSpace")]
pub struct LabelSpace {
    #[serde(rename = "classes")]
    class_names: Vec<String>,
    flip_map: Vec<usize>,
}

#[derive(Deserialize)]
struct RawLabelSpace {
    classes: Vec<String>,
    #[serde(default)]
    flip_map: Option<Vec<usize>>,
}

impl TryFrom<RawLabelSpace> for LabelSpace {
    type Error = Error;

    fn try_from(raw: RawLabelSpace) -> Result<Self> {
        match raw.flip_map {
            Some(map) => LabelSpace::new(raw.classes, map),
            None => Ok(LabelSpace::symmetric(raw.classes)),
        }
    }
}

impl LabelSpace {
    pub fn new(class_names: Vec<String>, flip_map: Vec<usize>) -> Result<Self> {
        let g = class_names.len();
        if flip_map.len() != g {
            return Err(Error::Config(format!(
                "flip_map has {} entries for {g} classes",
                flip_map.len()
            )));
        }
        for (c, &m) in flip_map.iter().enumerate() {
            if m >= g || flip_map[m] != c {
                return Err(Error::Config(format!("flip_map is not an involution at class {c}")));
            }
        }
        Ok(Self { class_names, flip_map })
    }

    /// Every class maps to itself.
    pub fn symmetric(class_names: Vec<String>) -> Self {
        let flip_map = (0..class_names.len()).collect();
        Self { class_names, flip_map }
    }

    /// The eight volleyball group activities, left/right variants paired.
    pub fn volleyball() -> Self {
        let names = [
            "r_spike", "l_spike", "r_set", "l_set", "r_pass", "l_pass", "r_winpoint", "l_winpoint",
        ];
        Self {
            class_names: names.iter().map(|s| s.to_string()).collect(),
            flip_map: vec![1, 0, 3, 2, 5, 4, 7, 6],
        }
    }

    /// Netball events; none has a mirrored counterpart.
    pub fn netball() -> Self {
        Self::symmetric(
            ["shot", "goal_circle_feed", "centre_pass"].iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn name(&self, class: usize) -> Option<&str> {
        self.class_names.get(class).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.class_names.iter().position(|n| n == name)
    }

    pub fn flip(&self, class: usize) -> usize {
        self.flip_map[class]
    }

    pub fn flip_map(&self) -> &[usize] {
        &self.flip_map
    }
}

/// A labeled `T`-frame activity clip with its tracked poses.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSample {
    pub clip_id: String,
    /// RGB video `V`, shape `T x 3 x H x W`, values in `[0, 1]`.
    pub frames: ClipTensor,
    pub tracklets: Vec<Tracklet>,
    pub label: usize,
    pub label_space: Arc<LabelSpace>,
}

impl ClipSample {
    pub fn num_frames(&self) -> usize {
        self.frames.frames()
    }

    pub fn height(&self) -> usize {
        self.frames.height()
    }

    pub fn width(&self) -> usize {
        self.frames.width()
    }

    /// Detections present at frame `t`, any order.
    pub fn detections_at(&self, t: usize) -> impl Iterator<Item = &TrackedDetection> {
        self.tracklets.iter().filter_map(move |tr| tr.at_frame(t))
    }

    pub fn validate(&self) -> Result<()> {
        let [t, c, h, w] = self.frames.shape();
        if t == 0 || h == 0 || w == 0 || c != 3 {
            return Err(Error::Shape(format!("clip {} has frame shape {:?}", self.clip_id, self.frames.shape())));
        }
        if self.label >= self.label_space.len() {
            return Err(Error::InvalidInput(format!(
                "clip {} label {} out of range for {} classes",
                self.clip_id,
                self.label,
                self.label_space.len()
            )));
        }
        if self.frames.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidInput(format!("clip {} has pixel values outside [0, 1]", self.clip_id)));
        }
        let mut seen = std::collections::HashSet::new();
        for tr in &self.tracklets {
            tr.validate()?;
            if !seen.insert(tr.track_id) {
                return Err(Error::InvalidInput(format!("clip {} repeats track {}", self.clip_id, tr.track_id)));
            }
            if let Some(d) = tr.detections.iter().find(|d| d.frame_index >= t) {
                return Err(Error::InvalidInput(format!(
                    "clip {}: track {} has frame {} outside 0..{t}",
                    self.clip_id, tr.track_id, d.frame_index
                )));
            }
        }
        Ok(())
    }
}

/// Labeled clips sharing one label space.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub label_space: Arc<LabelSpace>,
    pub clips: Vec<ClipSample>,
}

impl Dataset {
    pub fn new(label_space: Arc<LabelSpace>, clips: Vec<ClipSample>) -> Result<Self> {
        for c in &clips {
            if *c.label_space != *label_space {
                return Err(Error::InvalidInput(format!(
                    "clip {} uses a different label space",
                    c.clip_id
                )));
            }
        }
        Ok(Self { label_space, clips })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.clips.iter().map(|c| c.label).collect()
    }
}
