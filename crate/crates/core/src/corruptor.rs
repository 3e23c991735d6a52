//! Seeded simulation of tracking failures: broken tracks, identity switches,
//! noisy or missing keypoints and spurious detections.
//!
//! Every operator draws from its own ChaCha substream (keyed by operator
//! name), so enabling one failure type never changes the draws of another.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::coco::STANDING_TEMPLATE;
use crate::error::{Error, Result};
use crate::trackpose_io::{Keypoint2D, Pose17, TrackedDetection, Tracklet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CorruptionConfig {
    pub fragmentation_prob: f64,
    pub id_switch_prob: f64,
    /// Pixels.
    pub jitter_sigma: f64,
    pub keypoint_drop_prob: f64,
    /// Expected spurious tracks per clip.
    pub spurious_track_rate: f64,
    pub seed: u64,
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("fragmentation_prob", self.fragmentation_prob),
            ("id_switch_prob", self.id_switch_prob),
            ("keypoint_drop_prob", self.keypoint_drop_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, v) in [("jitter_sigma", self.jitter_sigma), ("spurious_track_rate", self.spurious_track_rate)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Only relabels tracks; geometry is left untouched.
    pub fn is_identity_only(&self) -> bool {
        self.jitter_sigma == 0.0 && self.keypoint_drop_prob == 0.0 && self.spurious_track_rate == 0.0
    }
}

/// Clip extent, needed to place spurious tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClipGeometry {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
}

/// A contiguous run of frames of one output track that came from one input
/// track (`source: None` for spurious tracks).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSegment {
    pub source: Option<u64>,
    pub first_frame: usize,
    pub last_frame: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub fragmented_tracks: usize,
    pub id_switches: usize,
    pub jittered_keypoints: usize,
    pub dropped_keypoints: usize,
    pub spurious_tracks: usize,
    /// Output track id to the input tracks its detections came from.
    pub lineage: BTreeMap<u64, Vec<IdSegment>>,
}

/// Substream for operator `name`: FNV-1a of the name selects the ChaCha stream.
pub fn operator_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(hash);
    rng
}

/// Independent per-item seed (SplitMix64 finalizer of `seed` and `index`).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Track under corruption; `sources[i]` is the input track of `dets[i]`.
#[derive(Debug, Clone)]
struct Track {
    id: u64,
    dets: Vec<TrackedDetection>,
    sources: Vec<Option<u64>>,
}

impl Track {
    fn from_tracklet(t: &Tracklet) -> Self {
        Self { id: t.track_id, dets: t.detections.clone(), sources: vec![Some(t.track_id); t.len()] }
    }

    fn into_tracklet(self) -> Tracklet {
        let id = self.id;
        let detections = self.dets.into_iter().map(|d| TrackedDetection { track_id: id, ..d }).collect();
        Tracklet { track_id: id, detections }
    }
}

fn next_fresh_id(tracks: &[Track]) -> u64 {
    tracks.iter().map(|t| t.id).max().map_or(0, |m| m + 1)
}

fn fragment(tracks: Vec<Track>, p: f64, rng: &mut impl Rng) -> (Vec<Track>, usize) {
    let mut fresh = next_fresh_id(&tracks);
    let mut out = Vec::with_capacity(tracks.len());
    let mut count = 0;
    for mut track in tracks {
        if track.dets.len() >= 2 && rng.random_bool(p) {
            let at = rng.random_range(1..track.dets.len());
            let tail = Track { id: fresh, dets: track.dets.split_off(at), sources: track.sources.split_off(at) };
            fresh += 1;
            count += 1;
            out.push(track);
            out.push(tail);
        } else {
            out.push(track);
        }
    }
    (out, count)
}

fn common_frames(a: &Track, b: &Track) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.dets.len() && j < b.dets.len() {
        let (fa, fb) = (a.dets[i].frame_index, b.dets[j].frame_index);
        if fa == fb {
            out.push(fa);
        }
        if fa <= fb {
            i += 1;
        }
        if fb <= fa {
            j += 1;
        }
    }
    out
}

/// Exchanges everything from frame `at` onwards between `a` and `b`.
fn swap_tails(a: &mut Track, b: &mut Track, at: usize) {
    let ia = a.dets.partition_point(|d| d.frame_index < at);
    let ib = b.dets.partition_point(|d| d.frame_index < at);
    let (da, sa) = (a.dets.split_off(ia), a.sources.split_off(ia));
    let (db, sb) = (b.dets.split_off(ib), b.sources.split_off(ib));
    a.dets.extend(db);
    a.sources.extend(sb);
    b.dets.extend(da);
    b.sources.extend(sa);
}

fn switch(mut tracks: Vec<Track>, p: f64, rng: &mut impl Rng) -> (Vec<Track>, usize) {
    let mut count = 0;
    for i in 0..tracks.len() {
        for j in i + 1..tracks.len() {
            let common = common_frames(&tracks[i], &tracks[j]);
            if common.is_empty() || !rng.random_bool(p) {
                continue;
            }
            let at = common[rng.random_range(0..common.len())];
            let (head, tail) = tracks.split_at_mut(j);
            swap_tails(&mut head[i], &mut tail[0], at);
            count += 1;
        }
    }
    (tracks, count)
}

fn to_f32_precision(v: f64) -> f64 {
    v as f32 as f64
}

fn perturb(tracks: &mut [Track], sigma: f64, drop_prob: f64, rng: &mut impl Rng) -> (usize, usize) {
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("validated sigma"));
    let (mut jittered, mut dropped) = (0, 0);
    for kp in tracks.iter_mut().flat_map(|t| t.dets.iter_mut()).flat_map(|d| d.pose.keypoints_mut().iter_mut()) {
        if let Some(n) = &noise {
            kp.x = to_f32_precision(kp.x + n.sample(rng));
            kp.y = to_f32_precision(kp.y + n.sample(rng));
            jittered += 1;
        }
        if drop_prob > 0.0 && rng.random_bool(drop_prob) {
            kp.confidence = 0.0;
            dropped += 1;
        }
    }
    (jittered, dropped)
}

/// A short random walk of a standing figure somewhere in the frame.
fn spurious_track(id: u64, geometry: ClipGeometry, rng: &mut impl Rng) -> Track {
    let (w, h) = (geometry.width as f64, geometry.height as f64);
    let len = if geometry.frames <= 3 { geometry.frames } else { rng.random_range(3..=geometry.frames.min(8)) };
    let start = rng.random_range(0..=geometry.frames - len);
    let scale = h * rng.random_range(0.15..0.35);
    let mut x = rng.random_range(0.0..w);
    let mut y = rng.random_range(h / 3.0..h);
    let step = Normal::new(0.0, 0.01 * w.max(h)).expect("positive std");
    let wobble = Normal::new(0.0, 0.02 * scale).expect("positive std");
    let mut dets = Vec::with_capacity(len);
    for f in start..start + len {
        let mut kps = [Keypoint2D::new(0.0, 0.0, 0.0); crate::coco::NUM_KEYPOINTS];
        for (kp, &(dx, dy)) in kps.iter_mut().zip(STANDING_TEMPLATE.iter()) {
            *kp = Keypoint2D {
                x: to_f32_precision(x + dx * scale + wobble.sample(rng)),
                y: to_f32_precision(y + dy * scale + wobble.sample(rng)),
                confidence: to_f32_precision(rng.random_range(0.3..1.0)),
            };
        }
        dets.push(TrackedDetection { frame_index: f, track_id: id, pose: Pose17(kps) });
        x += step.sample(rng);
        y += step.sample(rng);
    }
    Track { id, sources: vec![None; dets.len()], dets }
}

fn spawn(tracks: &mut Vec<Track>, rate: f64, geometry: ClipGeometry, rng: &mut impl Rng) -> usize {
    if rate == 0.0 || geometry.frames == 0 || geometry.width == 0 || geometry.height == 0 {
        return 0;
    }
    let count = Poisson::new(rate).expect("validated rate").sample(rng) as usize;
    for fresh in (next_fresh_id(tracks)..).take(count) {
        tracks.push(spurious_track(fresh, geometry, rng));
    }
    count
}

fn lift(tracklets: &[Tracklet]) -> Vec<Track> {
    tracklets.iter().map(Track::from_tracklet).collect()
}

fn lower(tracks: Vec<Track>) -> Vec<Tracklet> {
    tracks.into_iter().map(Track::into_tracklet).collect()
}

/// Splits each tracklet with at least two detections, with probability `p`,
/// at a uniformly chosen interior boundary; the tail gets a fresh id.
pub fn fragment_tracks(tracklets: &[Tracklet], p: f64, rng: &mut impl Rng) -> Vec<Tracklet> {
    lower(fragment(lift(tracklets), p, rng).0)
}

/// For each temporally overlapping pair, with probability `p`, exchanges
/// identities from a uniformly chosen common frame onwards.
pub fn switch_identities(tracklets: &[Tracklet], p: f64, rng: &mut impl Rng) -> Vec<Tracklet> {
    lower(switch(lift(tracklets), p, rng).0)
}

/// Gaussian coordinate jitter and keypoint dropout (confidence set to 0).
pub fn perturb_keypoints(tracklets: &[Tracklet], sigma: f64, drop_prob: f64, rng: &mut impl Rng) -> Vec<Tracklet> {
    let mut tracks = lift(tracklets);
    perturb(&mut tracks, sigma, drop_prob, rng);
    lower(tracks)
}

fn lineage(tracks: &[Track]) -> BTreeMap<u64, Vec<IdSegment>> {
    let mut out = BTreeMap::new();
    for t in tracks {
        let mut segments: Vec<IdSegment> = Vec::new();
        for (d, &s) in t.dets.iter().zip(&t.sources) {
            match segments.last_mut() {
                Some(seg) if seg.source == s => seg.last_frame = d.frame_index,
                _ => segments.push(IdSegment { source: s, first_frame: d.frame_index, last_frame: d.frame_index }),
            }
        }
        out.insert(t.id, segments);
    }
    out
}

/// Applies fragmentation, identity switches, keypoint perturbation and
/// spurious tracks, in that order. A pure function of its arguments.
pub fn corrupt(
    tracklets: &[Tracklet],
    config: &CorruptionConfig,
    geometry: ClipGeometry,
) -> Result<(Vec<Tracklet>, CorruptionReport)> {
    config.validate()?;
    for t in tracklets {
        t.validate()?;
    }
    let mut report = CorruptionReport::default();
    let tracks = lift(tracklets);
    let (tracks, n) = fragment(tracks, config.fragmentation_prob, &mut operator_rng(config.seed, "fragment"));
    report.fragmented_tracks = n;
    let (mut tracks, n) = switch(tracks, config.id_switch_prob, &mut operator_rng(config.seed, "switch"));
    report.id_switches = n;
    let (j, d) = perturb(
        &mut tracks,
        config.jitter_sigma,
        config.keypoint_drop_prob,
        &mut operator_rng(config.seed, "perturb"),
    );
    report.jittered_keypoints = j;
    report.dropped_keypoints = d;
    report.spurious_tracks =
        spawn(&mut tracks, config.spurious_track_rate, geometry, &mut operator_rng(config.seed, "spurious"));
    report.lineage = lineage(&tracks);
    Ok((lower(tracks), report))
}

/// [`corrupt`] with the clip's own extent as geometry.
pub fn corrupt_clip(clip: &crate::ClipSample, config: &CorruptionConfig) -> Result<(crate::ClipSample, CorruptionReport)> {
    let geometry = ClipGeometry { frames: clip.num_frames(), width: clip.width(), height: clip.height() };
    let (tracklets, report) = corrupt(&clip.tracklets, config, geometry)?;
    Ok((crate::ClipSample { tracklets, ..clip.clone() }, report))
}
