//! Group-activity classifiers: the 3D residual network over RGB, rendered
//! pose or fused video, and the keypoint-sequence early/late fusion
//! baselines, behind one [`GroupActivityModel`] interface.

mod backbone;
mod baselines;
mod checkpoint;
mod keypoints;

pub use backbone::{adapt_stem, build_backbone, BasicBlock, ModelConfig, ResNet3d};
pub use baselines::{BaselineConfig, EarlyFusionNet, KeypointBatch, LateFusionNet};
pub use checkpoint::{
    load_checkpoint, load_pretrained, read_checkpoint, save_checkpoint, CheckpointMeta, StoredTensor,
};
pub use keypoints::{keypoints_to_tensor, KeypointTensor, COORDS_PER_POSE, DEFAULT_MAX_PERSONS};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{softmax_rows, Mode, ParamVisitor, Scalar, Tensor};
use crate::poserender::{render_tracklets, RenderConfig};
use crate::trackpose_io::ClipSample;
use crate::video::ClipTensor;

/// Which video channels the residual network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputSetting {
    RgbOnly,
    PoseOnly,
    Fused,
}

impl InputSetting {
    pub const ALL: [InputSetting; 3] = [InputSetting::RgbOnly, InputSetting::PoseOnly, InputSetting::Fused];

    pub fn in_channels(self) -> usize {
        match self {
            InputSetting::Fused => 6,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InputSetting::RgbOnly => "rgb_only",
            InputSetting::PoseOnly => "pose_only",
            InputSetting::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown input setting {s:?} (rgb_only, pose_only, fused)")))
    }
}

/// Everything needed to rebuild a model; stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    RenderedPose { model: ModelConfig, setting: InputSetting, render: RenderConfig },
    EarlyFusion { baseline: BaselineConfig },
    LateFusion { baseline: BaselineConfig },
}

impl ModelSpec {
    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::RenderedPose { model, .. } => model.num_classes,
            ModelSpec::EarlyFusion { baseline } | ModelSpec::LateFusion { baseline } => baseline.num_classes,
        }
    }

    /// Short name used in reports: the input setting or the baseline kind.
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::RenderedPose { setting, .. } => setting.as_str(),
            ModelSpec::EarlyFusion { .. } => "early_fusion",
            ModelSpec::LateFusion { .. } => "late_fusion",
        }
    }
}

/// Per-clip logits and their softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
}

impl Prediction {
    pub fn from_logits(logits: &Tensor<f32>) -> Vec<Prediction> {
        let g = logits.shape()[1];
        let probs = softmax_rows(logits.data(), g);
        logits
            .data()
            .chunks_exact(g)
            .zip(probs.chunks_exact(g))
            .map(|(l, p)| Prediction { logits: l.to_vec(), probabilities: p.to_vec() })
            .collect()
    }

    /// Arg-max class; the lowest index wins ties.
    pub fn label(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }
}

/// Mean of `-ln p[label]` over the batch.
pub fn loss_ce(predictions: &[Prediction], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let mut total = 0.0;
    for (p, &y) in predictions.iter().zip(labels) {
        let prob = *p
            .probabilities
            .get(y)
            .ok_or_else(|| Error::InvalidInput(format!("label {y} out of range for {} classes", p.probabilities.len())))?;
        total -= (prob as f64).ln();
    }
    Ok(total / labels.len() as f64)
}

/// Stacks `T x C x H x W` clips into a `[B, C, T, H, W]` batch.
pub fn stack_clips<S: Scalar>(clips: &[&ClipTensor]) -> Result<Tensor<S>> {
    let first = clips.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
    let [t, c, h, w] = first.shape();
    let mut data = Vec::with_capacity(clips.len() * first.data().len());
    for clip in clips {
        if clip.shape() != first.shape() {
            return Err(Error::Shape(format!("clip shape {:?} differs from {:?}", clip.shape(), first.shape())));
        }
        data.extend(clip.to_channel_major().into_iter().map(|v| S::of_f64(v as f64)));
    }
    Tensor::from_vec(&[clips.len(), c, t, h, w], data)
}

impl ResNet3d<f32> {
    /// Evaluation-mode forward pass over `T x C x H x W` clips (e.g. fused tensors).
    pub fn classify(&mut self, clips: &[&ClipTensor]) -> Result<Vec<Prediction>> {
        let channels = clips.first().map(|c| c.channels()).unwrap_or(0);
        if channels != self.config().in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {channels}",
                self.config().in_channels
            )));
        }
        let x = stack_clips(clips)?;
        Ok(Prediction::from_logits(&self.forward(&x, Mode::Eval)?))
    }
}

/// Common training/evaluation interface over clips.
pub trait GroupActivityModel: Send {
    fn spec(&self) -> ModelSpec;

    /// Builds the model input from `clips` and returns `[B, G]` logits.
    fn forward(&mut self, clips: &[&ClipSample], mode: Mode) -> Result<Tensor<f32>>;

    /// Back-propagates through the last training-mode forward pass.
    fn backward(&mut self, grad_logits: &Tensor<f32>) -> Result<()>;

    fn visit_params(&mut self, f: &mut ParamVisitor<'_, f32>);

    fn classify(&mut self, clips: &[&ClipSample]) -> Result<Vec<Prediction>> {
        Ok(Prediction::from_logits(&self.forward(clips, Mode::Eval)?))
    }

    fn num_classes(&self) -> usize {
        self.spec().num_classes()
    }
}

/// Residual network over RGB, rendered-pose or fused clips.
#[derive(Debug, Clone)]
pub struct RenderedPoseClassifier {
    pub net: ResNet3d<f32>,
    pub setting: InputSetting,
    pub render: RenderConfig,
}

impl RenderedPoseClassifier {
    pub fn new(config: &ModelConfig, setting: InputSetting, render: RenderConfig) -> Result<Self> {
        if config.in_channels != setting.in_channels() {
            return Err(Error::Config(format!(
                "setting {} needs {} input channels, config has {}",
                setting.as_str(),
                setting.in_channels(),
                config.in_channels
            )));
        }
        let mut net = build_backbone(config)?;
        if let Some(path) = &config.pretrained_weights {
            let (_, tensors) = read_checkpoint(path)?;
            load_pretrained(&mut net, &tensors)?;
        }
        Ok(Self { net, setting, render })
    }

    /// The network input for one clip: `V`, `K'` or `F = (V | K')`.
    pub fn input_tensor(&self, clip: &ClipSample) -> Result<ClipTensor> {
        let render = || {
            let config = RenderConfig { height: clip.height(), width: clip.width(), ..self.render.clone() };
            render_tracklets(&clip.tracklets, clip.num_frames(), &config).map(|r| r.tensor)
        };
        match self.setting {
            InputSetting::RgbOnly => Ok(clip.frames.clone()),
            InputSetting::PoseOnly => render(),
            InputSetting::Fused => clip.frames.concat_channels(&render()?),
        }
    }
}

impl GroupActivityModel for RenderedPoseClassifier {
    fn spec(&self) -> ModelSpec {
        ModelSpec::RenderedPose { model: self.net.config().clone(), setting: self.setting, render: self.render.clone() }
    }

    fn forward(&mut self, clips: &[&ClipSample], mode: Mode) -> Result<Tensor<f32>> {
        let inputs = clips.iter().map(|c| self.input_tensor(c)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&ClipTensor> = inputs.iter().collect();
        self.net.forward(&stack_clips(&refs)?, mode)
    }

    fn backward(&mut self, grad_logits: &Tensor<f32>) -> Result<()> {
        self.net.backward(grad_logits)
    }

    fn visit_params(&mut self, f: &mut ParamVisitor<'_, f32>) {
        self.net.visit_params(f)
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
enum KeypointNet {
    Early(EarlyFusionNet<f32>),
    Late(LateFusionNet<f32>),
}

/// Keypoint-sequence baseline over [`keypoints_to_tensor`] inputs.
#[derive(Debug, Clone)]
pub struct KeypointClassifier {
    net: KeypointNet,
}

impl KeypointClassifier {
    pub fn early(config: &BaselineConfig) -> Result<Self> {
        Ok(Self { net: KeypointNet::Early(EarlyFusionNet::new(config)?) })
    }

    pub fn late(config: &BaselineConfig) -> Result<Self> {
        Ok(Self { net: KeypointNet::Late(LateFusionNet::new(config)?) })
    }

    fn config(&self) -> &BaselineConfig {
        match &self.net {
            KeypointNet::Early(n) => n.config(),
            KeypointNet::Late(n) => n.config(),
        }
    }
}

impl GroupActivityModel for KeypointClassifier {
    fn spec(&self) -> ModelSpec {
        let baseline = self.config().clone();
        match self.net {
            KeypointNet::Early(_) => ModelSpec::EarlyFusion { baseline },
            KeypointNet::Late(_) => ModelSpec::LateFusion { baseline },
        }
    }

    fn forward(&mut self, clips: &[&ClipSample], mode: Mode) -> Result<Tensor<f32>> {
        let n = self.config().max_persons;
        let items: Vec<KeypointTensor> = clips.iter().map(|c| keypoints_to_tensor(c, n)).collect();
        let batch = KeypointBatch::stack(&items)?;
        match &mut self.net {
            KeypointNet::Early(net) => net.forward(&batch, mode),
            KeypointNet::Late(net) => net.forward(&batch, mode),
        }
    }

    fn backward(&mut self, grad_logits: &Tensor<f32>) -> Result<()> {
        match &mut self.net {
            KeypointNet::Early(net) => net.backward(grad_logits),
            KeypointNet::Late(net) => net.backward(grad_logits),
        }
    }

    fn visit_params(&mut self, f: &mut ParamVisitor<'_, f32>) {
        match &mut self.net {
            KeypointNet::Early(net) => net.visit_params(f),
            KeypointNet::Late(net) => net.visit_params(f),
        }
    }
}

pub fn build_model(spec: &ModelSpec) -> Result<Box<dyn GroupActivityModel>> {
    Ok(match spec {
        ModelSpec::RenderedPose { model, setting, render } => {
            Box::new(RenderedPoseClassifier::new(model, *setting, render.clone())?)
        }
        ModelSpec::EarlyFusion { baseline } => Box::new(KeypointClassifier::early(baseline)?),
        ModelSpec::LateFusion { baseline } => Box::new(KeypointClassifier::late(baseline)?),
    })
}

/// Copies of every parameter value, in visiting order.
pub fn snapshot_params(model: &mut dyn GroupActivityModel) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, p| out.push(p.value.clone()));
    out
}

pub fn restore_params(model: &mut dyn GroupActivityModel, snapshot: &[Vec<f32>]) -> Result<()> {
    let mut i = 0;
    let mut mismatch = false;
    model.visit_params(&mut |_, p| {
        match snapshot.get(i) {
            Some(v) if v.len() == p.value.len() => p.value.copy_from_slice(v),
            _ => mismatch = true,
        }
        i += 1;
    });
    if mismatch || i != snapshot.len() {
        return Err(Error::Shape("parameter snapshot does not match the model".into()));
    }
    Ok(())
}
