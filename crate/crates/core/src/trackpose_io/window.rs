use std::sync::Arc;

use super::{build_tracklets, ClipSample, LabelSpace, TrackedDetection};
use crate::error::{Error, Result};
use crate::video::ClipTensor;

/// First source frame of a `len`-frame window around `center`.
///
/// The window covers `[center - len/2, center + len - len/2 - 1]` and is
/// shifted, never shrunk, to stay inside `media_len` frames.
pub fn window_start(media_len: usize, center: usize, len: usize) -> Result<usize> {
    if len == 0 {
        return Err(Error::InvalidInput("window length must be positive".into()));
    }
    if media_len < len {
        return Err(Error::InvalidInput(format!(
            "media has {media_len} frames, shorter than the {len}-frame window"
        )));
    }
    if center >= media_len {
        return Err(Error::InvalidInput(format!(
            "center frame {center} outside media of {media_len} frames"
        )));
    }
    Ok(center.saturating_sub(len / 2).min(media_len - len))
}

/// Cuts a `len`-frame labeled clip out of full-length media, re-indexing the
/// surviving detections to `[0, len)`.
#[allow(clippy::too_many_arguments)]
pub fn extract_window(
    clip_id: &str,
    media: &ClipTensor,
    detections: &[TrackedDetection],
    center_frame: usize,
    len: usize,
    label: usize,
    label_space: Arc<LabelSpace>,
) -> Result<ClipSample> {
    let start = window_start(media.frames(), center_frame, len)?;
    let frames = media.frame_range(start, len)?;
    let kept = detections
        .iter()
        .filter(|d| d.frame_index >= start && d.frame_index < start + len)
        .map(|d| TrackedDetection { frame_index: d.frame_index - start, ..d.clone() })
        .collect();
    let clip = ClipSample {
        clip_id: clip_id.to_string(),
        frames,
        tracklets: build_tracklets(kept)?,
        label,
        label_space,
    };
    Ok(clip)
}
