use std::path::Path;
use std::sync::Arc;

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb, RgbImage};

use super::{
    build_tracklets, extract_window, filter_court, parse_detections, ClipSample, CourtPolygon,
    DatasetManifest, Dataset, Keypoint2D, Split, DEFAULT_CONFIDENCE_THRESHOLD,
    DEFAULT_MIN_INSIDE_FRACTION,
};
use crate::error::{Error, Result};
use crate::video::ClipTensor;

/// How clips are read from a manifest into memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipLoadOptions {
    pub window: usize,
    pub min_inside_fraction: f64,
    pub confidence_threshold: f64,
    /// Working resolution `(height, width)`; `None` keeps the source size.
    pub resize: Option<(usize, usize)>,
}

impl Default for ClipLoadOptions {
    fn default() -> Self {
        Self {
            window: 20,
            min_inside_fraction: DEFAULT_MIN_INSIDE_FRACTION,
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
            resize: Some((128, 224)),
        }
    }
}

fn frame_paths(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    Ok(paths)
}

/// Reads every `*.png` in `dir`, in file-name order, into a `T x 3 x H x W` tensor.
pub fn load_frames(dir: impl AsRef<Path>) -> Result<ClipTensor> {
    let dir = dir.as_ref();
    let paths = frame_paths(dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no PNG frames in {}", dir.display())));
    }
    let mut data = Vec::new();
    let mut dims = None;
    for p in &paths {
        let img = image::open(p)
            .map_err(|e| Error::Image { path: p.clone(), message: e.to_string() })?
            .to_rgb8();
        let d = img.dimensions();
        if *dims.get_or_insert(d) != d {
            return Err(Error::Shape(format!("{} is {}x{}, expected {:?}", p.display(), d.0, d.1, dims)));
        }
        let (w, h) = (d.0 as usize, d.1 as usize);
        let start = data.len();
        data.resize(start + 3 * h * w, 0.0f32);
        for (x, y, px) in img.enumerate_pixels() {
            for c in 0..3 {
                data[start + (c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
            }
        }
    }
    let (w, h) = dims.unwrap();
    ClipTensor::from_vec(paths.len(), 3, h as usize, w as usize, data)
}

/// 8-bit RGB image of channels `[first, first + 3)` of frame `t`; values are
/// written as `round(255 * v)`.
pub fn frame_to_rgb8(tensor: &ClipTensor, t: usize, first: usize) -> RgbImage {
    let (h, w) = (tensor.height(), tensor.width());
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let px = |c: usize| {
            let v = tensor.get(t, first + c, y as usize, x as usize).clamp(0.0, 1.0);
            (255.0 * v).round() as u8
        };
        Rgb([px(0), px(1), px(2)])
    })
}

/// Writes each frame as `{t:06}.png` under `dir`.
pub fn save_frames(dir: impl AsRef<Path>, tensor: &ClipTensor) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for t in 0..tensor.frames() {
        let path = dir.join(format!("{t:06}.png"));
        frame_to_rgb8(tensor, t, 0)
            .save(&path)
            .map_err(|e| Error::Image { path: path.clone(), message: e.to_string() })?;
    }
    Ok(())
}

/// Aspect-preserving resize onto a `height x width` canvas (top-left aligned,
/// zero padding). Pose coordinates follow the same pixel-center mapping.
pub fn resize_clip(clip: &ClipSample, height: usize, width: usize) -> ClipSample {
    let (h0, w0) = (clip.height(), clip.width());
    if (h0, w0) == (height, width) {
        return clip.clone();
    }
    let scale = (height as f64 / h0 as f64).min(width as f64 / w0 as f64);
    let nh = ((h0 as f64 * scale).round() as usize).clamp(1, height);
    let nw = ((w0 as f64 * scale).round() as usize).clamp(1, width);
    let mut frames = ClipTensor::zeros(clip.num_frames(), 3, height, width);
    for t in 0..clip.num_frames() {
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_fn(w0 as u32, h0 as u32, |x, y| {
            let g = |c| clip.frames.get(t, c, y as usize, x as usize);
            Rgb([g(0), g(1), g(2)])
        });
        let dst = imageops::resize(&src, nw as u32, nh as u32, FilterType::Triangle);
        for (x, y, px) in dst.enumerate_pixels() {
            for c in 0..3 {
                let i = frames.index(t, c, y as usize, x as usize);
                frames.data_mut()[i] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    let (sx, sy) = (nw as f64 / w0 as f64, nh as f64 / h0 as f64);
    let mut tracklets = clip.tracklets.clone();
    for d in tracklets.iter_mut().flat_map(|t| t.detections.iter_mut()) {
        for kp in d.pose.keypoints_mut() {
            // stored at f32 precision so horizontal flips stay exact
            let x = ((kp.x + 0.5) * sx - 0.5) as f32 as f64;
            let y = ((kp.y + 0.5) * sy - 0.5) as f32 as f64;
            *kp = Keypoint2D { x, y, ..*kp };
        }
    }
    ClipSample { frames, tracklets, ..clip.clone() }
}

/// Loads every clip of `split`: frames, detections, court filtering (when a
/// `court.json` is present), windowing and optional resize.
pub fn load_dataset(manifest: &DatasetManifest, split: Split, opts: &ClipLoadOptions) -> Result<Dataset> {
    let mut clips = Vec::new();
    for entry in manifest.split(split) {
        let dir = manifest.clip_dir(entry);
        let media = load_frames(dir.join("frames"))?;
        if (media.width(), media.height()) != (entry.width, entry.height) {
            return Err(Error::Manifest(format!(
                "clip {}: frames are {}x{}, manifest says {}x{}",
                entry.id,
                media.width(),
                media.height(),
                entry.width,
                entry.height
            )));
        }
        let det_path = dir.join("detections.jsonl");
        let file = std::fs::File::open(&det_path).map_err(|e| Error::io(&det_path, e))?;
        let detections = parse_detections(std::io::BufReader::new(file))?;
        let court_path = dir.join("court.json");
        let detections = if court_path.exists() {
            let text = std::fs::read_to_string(&court_path).map_err(|e| Error::io(&court_path, e))?;
            let court: CourtPolygon = serde_json::from_str(&text)?;
            let kept = filter_court(
                build_tracklets(detections)?,
                &court,
                opts.min_inside_fraction,
                opts.confidence_threshold,
            )?;
            kept.into_iter().flat_map(|t| t.detections).collect()
        } else {
            detections
        };
        let clip = extract_window(
            &entry.id,
            &media,
            &detections,
            entry.center_frame,
            opts.window,
            entry.label,
            Arc::clone(&manifest.label_space),
        )?;
        let clip = match opts.resize {
            Some((h, w)) => resize_clip(&clip, h, w),
            None => clip,
        };
        clips.push(clip);
    }
    Dataset::new(Arc::clone(&manifest.label_space), clips)
}
