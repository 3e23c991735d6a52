use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Keypoint2D, Pose17, TrackedDetection, Tracklet};
use crate::coco::NUM_KEYPOINTS;
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
struct DetectionLine {
    frame: usize,
    track: u64,
    kps: Vec<[f64; 3]>,
}

/// Parses a JSON-Lines detections stream, one detection per non-empty line.
///
/// Line numbers in errors are 1-based and count blank lines.
pub fn parse_detections<R: BufRead>(reader: R) -> Result<Vec<TrackedDetection>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: DetectionLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: format!("malformed detection ({e})"),
        })?;
        if parsed.kps.len() != NUM_KEYPOINTS {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected {NUM_KEYPOINTS} keypoints"),
            });
        }
        let mut kps = [Keypoint2D::new(0.0, 0.0, 0.0); NUM_KEYPOINTS];
        for (dst, &[x, y, c]) in kps.iter_mut().zip(parsed.kps.iter()) {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("confidence {c} outside [0, 1]"),
                });
            }
            *dst = Keypoint2D::new(x, y, c);
        }
        if !seen.insert((parsed.track, parsed.frame)) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate detection for track {} at frame {}", parsed.track, parsed.frame),
            });
        }
        out.push(TrackedDetection { frame_index: parsed.frame, track_id: parsed.track, pose: Pose17(kps) });
    }
    Ok(out)
}

pub fn write_detections<W: Write>(mut writer: W, detections: &[TrackedDetection]) -> Result<()> {
    for d in detections {
        let line = DetectionLine {
            frame: d.frame_index,
            track: d.track_id,
            kps: d.pose.0.iter().map(|k| [k.x, k.y, k.confidence]).collect(),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<detections>", e))?;
    }
    Ok(())
}

/// Groups detections by track id (ascending) and sorts each group by frame.
pub fn build_tracklets(detections: Vec<TrackedDetection>) -> Result<Vec<Tracklet>> {
    let mut groups: BTreeMap<u64, Vec<TrackedDetection>> = BTreeMap::new();
    for d in detections {
        groups.entry(d.track_id).or_default().push(d);
    }
    let mut out = Vec::with_capacity(groups.len());
    for (track_id, mut detections) in groups {
        detections.sort_by_key(|d| d.frame_index);
        if let Some(w) = detections.windows(2).find(|w| w[0].frame_index == w[1].frame_index) {
            return Err(Error::DuplicateDetection { track_id, frame_index: w[0].frame_index });
        }
        out.push(Tracklet { track_id, detections });
    }
    Ok(out)
}

/// Detections of all tracklets ordered by (frame, track id).
pub fn flatten_tracklets(tracklets: &[Tracklet]) -> Vec<TrackedDetection> {
    let mut all: Vec<TrackedDetection> =
        tracklets.iter().flat_map(|t| t.detections.iter().cloned()).collect();
    all.sort_by_key(|d| (d.frame_index, d.track_id));
    all
}
