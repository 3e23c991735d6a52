use crate::coco::NUM_KEYPOINTS;
use crate::trackpose_io::{ClipSample, Tracklet};

/// Coordinates per person and frame (`x` and `y` of every joint).
pub const COORDS_PER_POSE: usize = 2 * NUM_KEYPOINTS;

pub const DEFAULT_MAX_PERSONS: usize = 12;

/// Fixed-slot keypoint layout consumed by the sequence baselines.
///
/// `coords` is `N_max x 34 x T` with `x / W` and `y / H` per joint (zero where
/// the slot is empty); `mask` is `N_max x T`, `1` where a detection exists.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointTensor {
    pub coords: Vec<f32>,
    pub mask: Vec<f32>,
    pub max_persons: usize,
    pub frames: usize,
    /// Track id occupying each slot, in slot order.
    pub slot_ids: Vec<u64>,
}

impl KeypointTensor {
    pub fn coord(&self, slot: usize, c: usize, t: usize) -> f32 {
        self.coords[(slot * COORDS_PER_POSE + c) * self.frames + t]
    }

    pub fn present(&self, slot: usize, t: usize) -> bool {
        self.mask[slot * self.frames + t] > 0.0
    }
}

/// Assigns tracklets to slots by first appearance (ties by track id). With
/// more than `max_persons` tracklets the longest ones are kept.
pub fn keypoints_to_tensor(clip: &ClipSample, max_persons: usize) -> KeypointTensor {
    let frames = clip.num_frames();
    let (w, h) = (clip.width() as f64, clip.height() as f64);
    let mut chosen: Vec<&Tracklet> = clip.tracklets.iter().filter(|t| !t.is_empty()).collect();
    if chosen.len() > max_persons {
        chosen.sort_by_key(|t| (std::cmp::Reverse(t.len()), t.first_frame(), t.track_id));
        chosen.truncate(max_persons);
    }
    chosen.sort_by_key(|t| (t.first_frame(), t.track_id));

    let mut coords = vec![0.0f32; max_persons * COORDS_PER_POSE * frames];
    let mut mask = vec![0.0f32; max_persons * frames];
    for (slot, tracklet) in chosen.iter().enumerate() {
        for det in tracklet.detections.iter().filter(|d| d.frame_index < frames) {
            let t = det.frame_index;
            mask[slot * frames + t] = 1.0;
            for (k, kp) in det.pose.keypoints().iter().enumerate() {
                let base = slot * COORDS_PER_POSE + 2 * k;
                coords[base * frames + t] = (kp.x / w) as f32;
                coords[(base + 1) * frames + t] = (kp.y / h) as f32;
            }
        }
    }
    KeypointTensor {
        coords,
        mask,
        max_persons,
        frames,
        slot_ids: chosen.iter().map(|t| t.track_id).collect(),
    }
}
