use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::LabelSpace;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One manifest entry. `path` is relative to the manifest's directory and
/// names a clip directory holding `frames/*.png`, `detections.jsonl` and an
/// optional `court.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestClip {
    pub id: String,
    pub path: PathBuf,
    pub center_frame: usize,
    pub label: usize,
    pub split: Split,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub label_space: Arc<LabelSpace>,
    pub clips: Vec<ManifestClip>,
    /// Directory clip paths are resolved against.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn clip_dir(&self, clip: &ManifestClip) -> PathBuf {
        self.root.join(&clip.path)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestClip> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

#[derive(Deserialize)]
struct RawClip {
    id: String,
    path: PathBuf,
    center_frame: usize,
    label: usize,
    split: String,
    width: usize,
    height: usize,
}

#[derive(Deserialize)]
struct RawManifest {
    label_space: LabelSpace,
    clips: Vec<RawClip>,
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    label_space: &'a LabelSpace,
    clips: &'a [ManifestClip],
}

pub fn parse_manifest(text: &str, root: PathBuf) -> Result<DatasetManifest> {
    let raw: RawManifest = serde_json::from_str(text).map_err(|e| Error::Manifest(e.to_string()))?;
    let g = raw.label_space.len();
    if g < 2 {
        return Err(Error::Manifest(format!("label space needs at least 2 classes, got {g}")));
    }
    let mut ids = HashSet::new();
    let mut clips = Vec::with_capacity(raw.clips.len());
    for c in raw.clips {
        let split = Split::parse(&c.split)
            .ok_or_else(|| Error::Manifest(format!("clip {}: unknown split {:?}", c.id, c.split)))?;
        if !ids.insert(c.id.clone()) {
            return Err(Error::Manifest(format!("duplicate clip_id {:?}", c.id)));
        }
        if c.label >= g {
            return Err(Error::Manifest(format!(
                "clip {}: label out of range ({} >= {g})",
                c.id, c.label
            )));
        }
        if c.width == 0 || c.height == 0 {
            return Err(Error::Manifest(format!("clip {}: zero frame dimension", c.id)));
        }
        clips.push(ManifestClip {
            id: c.id,
            path: c.path,
            center_frame: c.center_frame,
            label: c.label,
            split,
            width: c.width,
            height: c.height,
        });
    }
    Ok(DatasetManifest { label_space: Arc::new(raw.label_space), clips, root })
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, root)
}

pub fn save_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let out = ManifestOut { label_space: &manifest.label_space, clips: &manifest.clips };
    let text = serde_json::to_string_pretty(&out)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
