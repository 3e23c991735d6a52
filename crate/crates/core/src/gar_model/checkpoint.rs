use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use super::backbone::{adapt_stem, ResNet3d};
use super::{build_model, GroupActivityModel, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::{Conv3d, Param};
use crate::trackpose_io::LabelSpace;

const METADATA_KEY: &str = "repgars";
const STEM_WEIGHT: &str = "stem.conv.weight";

/// JSON block stored alongside the tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ModelSpec,
    pub label_space: LabelSpace,
    pub epoch: usize,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn checkpoint_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {e}", path.display()))
}

/// Writes every parameter (trainable and running statistics) as f32 under
/// its hierarchical name.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &mut dyn GroupActivityModel, meta: &CheckpointMeta) -> Result<()> {
    let path = path.as_ref();
    let mut named: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
    model.visit_params(&mut |name, p| {
        let bytes = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        named.push((name.to_string(), p.shape.clone(), bytes));
    });
    let views = named
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes).map(|v| (name.clone(), v)).map_err(|e| checkpoint_err(path, e))
        })
        .collect::<Result<Vec<_>>>()?;
    let metadata = HashMap::from([(METADATA_KEY.to_string(), serde_json::to_string(meta)?)]);
    let bytes = safetensors::serialize(views, Some(metadata)).map_err(|e| checkpoint_err(path, e))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Metadata (if present) and all tensors of a checkpoint file.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(Option<CheckpointMeta>, HashMap<String, StoredTensor>)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| checkpoint_err(path, e))?;
    let meta = match header.metadata().as_ref().and_then(|m| m.get(METADATA_KEY)) {
        Some(json) => Some(serde_json::from_str(json)?),
        None => None,
    };
    let st = SafeTensors::deserialize(&bytes).map_err(|e| checkpoint_err(path, e))?;
    let mut tensors = HashMap::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(checkpoint_err(path, format!("tensor {name} has dtype {:?}, expected F32", view.dtype())));
        }
        let data = view.data().chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        tensors.insert(name, StoredTensor { shape: view.shape().to_vec(), data });
    }
    Ok((meta, tensors))
}

fn copy_into(name: &str, p: &mut Param<f32>, t: &StoredTensor) -> Result<()> {
    if t.shape != p.shape {
        return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, model expects {:?}", t.shape, p.shape)));
    }
    p.value.copy_from_slice(&t.data);
    Ok(())
}

/// Rebuilds the model described by the checkpoint and loads its weights.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Box<dyn GroupActivityModel>, CheckpointMeta)> {
    let path = path.as_ref();
    let (meta, tensors) = read_checkpoint(path)?;
    let meta = meta.ok_or_else(|| checkpoint_err(path, "missing metadata block"))?;
    let mut spec = meta.spec.clone();
    if let ModelSpec::RenderedPose { model, .. } = &mut spec {
        model.pretrained_weights = None;
    }
    let mut model = build_model(&spec)?;
    let mut result = Ok(());
    let mut seen = 0;
    model.visit_params(&mut |name, p| {
        if result.is_err() {
            return;
        }
        result = match tensors.get(name) {
            Some(t) => copy_into(name, p, t),
            None => Err(checkpoint_err(path, format!("missing tensor {name}"))),
        };
        seen += 1;
    });
    result?;
    if seen != tensors.len() {
        return Err(checkpoint_err(path, format!("{} tensors stored, model has {seen}", tensors.len())));
    }
    Ok((model, meta))
}

/// Initializes a backbone from pretrained tensors of the same layout. A
/// 3-channel stem is widened with [`adapt_stem`] when the model takes 6
/// channels, and a classification head of a different size is left at its
/// fresh initialization.
pub fn load_pretrained(net: &mut ResNet3d<f32>, tensors: &HashMap<String, StoredTensor>) -> Result<()> {
    if let Some(stem) = tensors.get(STEM_WEIGHT) {
        let in_channels = stem.shape.get(1).copied().unwrap_or(0);
        if in_channels == 3 && net.config().in_channels == 6 {
            let spec = crate::nn::Conv3dSpec { in_channels: 3, ..net.stem().spec };
            let source = Conv3d::from_weights(spec, Param::new(&stem.shape, stem.data.clone()), None)?;
            net.replace_stem(adapt_stem(&source)?)?;
        }
    }
    let mut result = Ok(());
    net.visit_params(&mut |name, p| {
        if result.is_err() {
            return;
        }
        result = match tensors.get(name) {
            Some(t) if name.starts_with("fc.") && t.shape != p.shape => Ok(()),
            Some(t) if name == STEM_WEIGHT && t.shape[1] == 3 && p.shape[1] == 6 => Ok(()),
            Some(t) => copy_into(name, p, t),
            None => Err(Error::Checkpoint(format!("pretrained weights lack tensor {name}"))),
        };
    });
    result
}
