//! Training with step-decayed Adam and flip augmentation, evaluation, and
//! the ablation and robustness experiment runners.

mod experiments;
mod metrics;

pub use experiments::{
    corrupt_dataset, run_ablation, robustness_sweep, AblationReport, AblationRow, RobustnessCell, RobustnessReport,
    ABLATION_REFERENCE, ROBUSTNESS_REFERENCE,
};
pub use metrics::{evaluate, save_confusion_heatmap, Metrics};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gar_model::{restore_params, snapshot_params, GroupActivityModel};
use crate::nn::{softmax_cross_entropy, Adam, AdamConfig, Mode};
use crate::trackpose_io::{ClipSample, Dataset, Tracklet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augment_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr_step: 10,
            lr_gamma: 0.1,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            augment_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return Err(Error::Config(format!("initial_lr must be positive, got {}", self.initial_lr)));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Config(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if self.lr_step == 0 || self.batch_size == 0 {
            return Err(Error::Config("lr_step and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }
}

/// `initial_lr * gamma^floor(epoch / lr_step)`.
pub fn lr_at(epoch: usize, config: &TrainConfig) -> f64 {
    config.initial_lr * config.lr_gamma.powi((epoch / config.lr_step) as i32)
}

/// Horizontal flip of a sample: frames and keypoints mirror about the
/// vertical centre line (`x -> W - 1 - x`), left/right joints swap and the
/// label goes through the label space's flip map. An involution.
pub fn flip_augment(sample: &ClipSample) -> ClipSample {
    let width = sample.width();
    let tracklets = sample
        .tracklets
        .iter()
        .map(|t| Tracklet {
            track_id: t.track_id,
            detections: t
                .detections
                .iter()
                .map(|d| crate::TrackedDetection { pose: d.pose.mirrored(width), ..d.clone() })
                .collect(),
        })
        .collect();
    ClipSample {
        clip_id: sample.clip_id.clone(),
        frames: sample.frames.mirrored(),
        tracklets,
        label: sample.label_space.flip(sample.label),
        label_space: sample.label_space.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    /// Epoch whose weights the model holds after training.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
}

fn check_label_space(model: &dyn GroupActivityModel, data: &Dataset) -> Result<()> {
    if data.label_space.len() != model.num_classes() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model predicts {}",
            data.label_space.len(),
            model.num_classes()
        )));
    }
    Ok(())
}

/// Trains `model` in place. With a validation set the weights of the epoch
/// with the best validation accuracy (ties: lower validation loss, then the
/// later epoch) are restored at the end; otherwise the last epoch's are kept.
pub fn train(
    model: &mut dyn GroupActivityModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(model, train_set, val_set, config, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress(
    model: &mut dyn GroupActivityModel,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidInput("training set is empty".into()));
    }
    check_label_space(model, train_set)?;
    if let Some(val) = val_set {
        if val.label_space != train_set.label_space {
            return Err(Error::InvalidInput("training and validation label spaces differ".into()));
        }
    }
    let val_set = val_set.filter(|v| !v.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.adam());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<((f64, f64), usize, Vec<Vec<f32>>)> = None;

    for epoch in 0..config.epochs {
        let lr = lr_at(epoch, config);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let flipped: Vec<Option<ClipSample>> = chunk
                .iter()
                .map(|&i| (config.augment_flip && rng.random_bool(0.5)).then(|| flip_augment(&train_set.clips[i])))
                .collect();
            let batch: Vec<&ClipSample> =
                chunk.iter().zip(&flipped).map(|(&i, f)| f.as_ref().unwrap_or(&train_set.clips[i])).collect();
            let labels: Vec<usize> = batch.iter().map(|c| c.label).collect();
            let logits = model.forward(&batch, Mode::Train)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels)?;
            model.backward(&grad)?;
            adam.step(lr, |f| model.visit_params(f));
            loss_sum += loss as f64 * batch.len() as f64;
            seen += batch.len();
        }
        let mut record =
            EpochRecord { epoch, train_loss: loss_sum / seen as f64, val_accuracy: None, val_loss: None, lr };
        if let Some(val) = val_set {
            let m = evaluate(model, val, config.batch_size)?;
            let loss = m.loss.unwrap_or(f64::INFINITY);
            record.val_accuracy = Some(m.accuracy);
            record.val_loss = Some(loss);
            let key = (m.accuracy, -loss);
            if best.as_ref().is_none_or(|(b, _, _)| key >= *b) {
                best = Some((key, epoch, snapshot_params(model)));
            }
        }
        on_epoch(&record);
        history.push(record);
    }

    let (best_epoch, best_val_accuracy) = match best {
        Some(((acc, _), epoch, params)) => {
            restore_params(model, &params)?;
            (epoch, Some(acc))
        }
        None => (config.epochs.saturating_sub(1), None),
    };
    Ok(TrainOutcome { history, best_epoch, best_val_accuracy })
}
