//! Skeleton rendering: tracked poses become a `T x 3 x H x W` video with one
//! colour per track on a black background, then get concatenated with the RGB
//! clip into the 6-channel classifier input.
//!
//! A pixel `(x, y)` has its centre at integer coordinates `(x, y)`. A limb
//! covers every pixel whose centre lies within `limb_thickness / 2` of the
//! segment between its joints; a joint covers the pixels within
//! `joint_radius` of it. Nothing is anti-aliased.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::coco::SKELETON_EDGES;
use crate::error::{Error, Result};
use crate::trackpose_io::{ClipSample, Keypoint2D, TrackedDetection, Tracklet, DEFAULT_CONFIDENCE_THRESHOLD};
use crate::video::ClipTensor;

pub const GOLDEN_RATIO_CONJUGATE: f64 = 0.61803398875;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColorPalette {
    pub saturation: f64,
    pub value: f64,
    pub hue_step: f64,
}

impl Default for ColorPalette {
    fn default() -> Self {
        Self { saturation: 0.9, value: 1.0, hue_step: GOLDEN_RATIO_CONJUGATE }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub height: usize,
    pub width: usize,
    pub limb_thickness: f64,
    pub joint_radius: f64,
    pub confidence_threshold: f64,
    pub palette: ColorPalette,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            height: 128,
            width: 224,
            limb_thickness: 2.0,
            joint_radius: 2.0,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            palette: ColorPalette::default(),
        }
    }
}

impl RenderConfig {
    pub fn with_size(height: usize, width: usize) -> Self {
        Self { height, width, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!("render size {}x{} must be positive", self.height, self.width)));
        }
        if !(self.limb_thickness >= 1.0 && self.joint_radius >= 1.0) {
            return Err(Error::Config("limb thickness and joint radius must be at least 1 pixel".into()));
        }
        if !(0.0..=1.0).contains(&self.confidence_threshold) {
            return Err(Error::Config(format!(
                "confidence threshold {} outside [0, 1]",
                self.confidence_threshold
            )));
        }
        let p = &self.palette;
        if !(0.0..=1.0).contains(&p.saturation) || !(0.0..=1.0).contains(&p.value) {
            return Err(Error::Config("palette saturation and value must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Standard HSV to RGB, all components in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, saturation: f64, value: f64) -> [f64; 3] {
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = value * (1.0 - saturation);
    let q = value * (1.0 - saturation * f);
    let t = value * (1.0 - saturation * (1.0 - f));
    match sector as u8 % 6 {
        0 => [value, t, p],
        1 => [q, value, p],
        2 => [p, value, t],
        3 => [p, q, value],
        4 => [t, p, value],
        _ => [value, p, q],
    }
}

pub fn track_hue(track_id: u64, palette: &ColorPalette) -> f64 {
    (track_id as f64 * palette.hue_step).fract()
}

/// Colour assigned to a track identity.
pub fn track_color(track_id: u64, palette: &ColorPalette) -> [f32; 3] {
    let [r, g, b] = hsv_to_rgb(track_hue(track_id, palette), palette.saturation, palette.value);
    [r as f32, g as f32, b as f32]
}

/// Squared distance from `p` to the segment `a`-`b`.
///
/// Written as `(p - a) - t (b - a)` so that mirroring all x coordinates
/// negates the x component exactly.
#[inline]
pub fn segment_distance_sq(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (wx, wy) = (px - ax, py - ay);
    let (vx, vy) = (bx - ax, by - ay);
    let vv = vx * vx + vy * vy;
    let t = if vv > 0.0 { ((wx * vx + wy * vy) / vv).clamp(0.0, 1.0) } else { 0.0 };
    let (dx, dy) = (wx - t * vx, wy - t * vy);
    dx * dx + dy * dy
}

/// Mutable view of one `3 x H x W` frame.
struct Canvas<'a> {
    pixels: &'a mut [f32],
    height: usize,
    width: usize,
}

impl Canvas<'_> {
    /// Inclusive pixel range covering `[lo, hi]`, clipped to `0..len`.
    fn span(lo: f64, hi: f64, len: usize) -> Option<(usize, usize)> {
        let lo = lo.floor().max(0.0);
        let hi = hi.ceil().min(len as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    fn put(&mut self, x: usize, y: usize, color: [f32; 3]) {
        let plane = self.height * self.width;
        let i = y * self.width + x;
        for (c, v) in color.iter().enumerate() {
            self.pixels[c * plane + i] = *v;
        }
    }

    fn stamp_segment(&mut self, a: &Keypoint2D, b: &Keypoint2D, radius: f64, color: [f32; 3]) {
        let r2 = radius * radius;
        let Some((x0, x1)) = Self::span(a.x.min(b.x) - radius, a.x.max(b.x) + radius, self.width) else {
            return;
        };
        let Some((y0, y1)) = Self::span(a.y.min(b.y) - radius, a.y.max(b.y) + radius, self.height) else {
            return;
        };
        for y in y0..=y1 {
            for x in x0..=x1 {
                if segment_distance_sq(x as f64, y as f64, a.x, a.y, b.x, b.y) <= r2 {
                    self.put(x, y, color);
                }
            }
        }
    }

    fn stamp_disc(&mut self, k: &Keypoint2D, radius: f64, color: [f32; 3]) {
        self.stamp_segment(k, k, radius, color);
    }
}

fn draw_skeleton(canvas: &mut Canvas<'_>, det: &TrackedDetection, config: &RenderConfig, color: [f32; 3]) {
    let kps = det.pose.keypoints();
    let visible = |i: usize| kps[i].confidence >= config.confidence_threshold;
    for &(a, b) in &SKELETON_EDGES {
        if visible(a) && visible(b) {
            canvas.stamp_segment(&kps[a], &kps[b], config.limb_thickness * 0.5, color);
        }
    }
    for k in kps.iter().filter(|k| k.confidence >= config.confidence_threshold) {
        canvas.stamp_disc(k, config.joint_radius, color);
    }
}

/// Draws `det` onto a `3 x height x width` buffer in a fixed colour. Used by
/// the synthetic generator to paint figures into RGB frames.
pub fn draw_detection(pixels: &mut [f32], height: usize, width: usize, det: &TrackedDetection, config: &RenderConfig, color: [f32; 3]) {
    let mut canvas = Canvas { pixels, height, width };
    draw_skeleton(&mut canvas, det, config, color);
}

/// Renders one frame into `out` (`3 x H x W`, overwritten). Skeletons are
/// drawn in ascending track id, so the highest id wins where they overlap.
pub fn render_frame_into<'a>(
    detections: impl IntoIterator<Item = &'a TrackedDetection>,
    config: &RenderConfig,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), 3 * config.height * config.width);
    out.fill(0.0);
    let mut dets: Vec<&TrackedDetection> = detections.into_iter().collect();
    dets.sort_by_key(|d| d.track_id);
    let mut canvas = Canvas { pixels: out, height: config.height, width: config.width };
    for det in dets {
        let color = track_color(det.track_id, &config.palette);
        draw_skeleton(&mut canvas, det, config, color);
    }
}

pub fn render_frame<'a>(detections: impl IntoIterator<Item = &'a TrackedDetection>, config: &RenderConfig) -> Vec<f32> {
    let mut out = vec![0.0; 3 * config.height * config.width];
    render_frame_into(detections, config, &mut out);
    out
}

/// Rendered pose video `K'`, shape `T x 3 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedClip {
    pub tensor: ClipTensor,
}

/// Renders `frames` frames of `tracklets`.
pub fn render_tracklets(tracklets: &[Tracklet], frames: usize, config: &RenderConfig) -> Result<RenderedClip> {
    config.validate()?;
    let mut tensor = ClipTensor::zeros(frames, 3, config.height, config.width);
    for t in 0..frames {
        let dets = tracklets.iter().filter_map(|tr| tr.at_frame(t));
        render_frame_into(dets, config, tensor.frame_mut(t));
    }
    Ok(RenderedClip { tensor })
}

pub fn render_clip(clip: &ClipSample, config: &RenderConfig) -> Result<RenderedClip> {
    if (clip.height(), clip.width()) != (config.height, config.width) {
        return Err(Error::Shape(format!(
            "clip {} is {}x{} but the renderer is configured for {}x{}",
            clip.clip_id,
            clip.height(),
            clip.width(),
            config.height,
            config.width
        )));
    }
    render_tracklets(&clip.tracklets, clip.num_frames(), config)
}

/// `F = (V | K')`, shape `T x 6 x H x W`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedClip {
    pub tensor: ClipTensor,
    pub label: usize,
    pub clip_id: String,
}

pub fn fuse(clip: &ClipSample, rendered: &RenderedClip) -> Result<FusedClip> {
    if clip.frames.shape() != rendered.tensor.shape() {
        return Err(Error::Shape(format!(
            "video {:?} and rendered pose {:?} differ",
            clip.frames.shape(),
            rendered.tensor.shape()
        )));
    }
    Ok(FusedClip {
        tensor: clip.frames.concat_channels(&rendered.tensor)?,
        label: clip.label,
        clip_id: clip.clip_id.clone(),
    })
}

/// Writes `{t:06}.png` frames showing the RGB frame and its rendered pose side by side.
pub fn save_preview(dir: impl AsRef<Path>, clip: &ClipSample, rendered: &RenderedClip) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fused = fuse(clip, rendered)?;
    let (h, w) = (clip.height() as u32, clip.width() as u32);
    for t in 0..clip.num_frames() {
        let left = crate::trackpose_io::frame_to_rgb8(&fused.tensor, t, 0);
        let right = crate::trackpose_io::frame_to_rgb8(&fused.tensor, t, 3);
        let mut img = RgbImage::new(2 * w, h);
        image::imageops::replace(&mut img, &left, 0, 0);
        image::imageops::replace(&mut img, &right, w as i64, 0);
        let path = dir.join(format!("{t:06}.png"));
        img.save(&path).map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
    }
    Ok(())
}
