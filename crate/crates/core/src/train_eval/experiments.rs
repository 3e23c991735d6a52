use std::collections::HashSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::{evaluate, Metrics};
use super::{train, TrainConfig, TrainOutcome};
use crate::corruptor::{corrupt_clip, derive_seed, CorruptionConfig};
use crate::error::{Error, Result};
use crate::gar_model::{GroupActivityModel, InputSetting, ModelConfig, RenderedPoseClassifier};
use crate::poserender::RenderConfig;
use crate::trackpose_io::Dataset;

/// Published accuracies (%) per input setting, in `rgb_only, pose_only,
/// fused` order, quoted in report footnotes.
pub const ABLATION_REFERENCE: [(&str, [f64; 3]); 2] = [("volleyball", [80.2, 85.0, 86.8]), ("netball", [73.1, 75.1, 78.4])];

/// Published accuracies (%) with ground-truth vs. estimated tracks:
/// `(model, clean, tracker)`.
pub const ROBUSTNESS_REFERENCE: [(&str, f64, f64); 3] =
    [("rendered pose (fused)", 87.9, 86.8), ("late fusion", 88.3, 74.0), ("early fusion", 83.0, 70.8)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub setting: InputSetting,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
    pub training: TrainOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

fn pct(m: &Option<Metrics>) -> String {
    m.as_ref().map_or_else(|| "-".to_string(), |m| format!("{:.1}", 100.0 * m.accuracy))
}

impl AblationReport {
    pub fn row(&self, setting: InputSetting) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.setting == setting)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("| Input setting | Channels | Val accuracy (%) | Test accuracy (%) |\n");
        out.push_str("|---|---|---|---|\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.setting.as_str(),
                r.setting.in_channels(),
                pct(&r.val),
                pct(&r.test)
            );
        }
        out.push_str("\nPublished reference (rgb_only / pose_only / fused):");
        for (name, [a, b, c]) in ABLATION_REFERENCE {
            let _ = write!(out, " {name} {a} / {b} / {c};");
        }
        out.pop();
        out.push('\n');
        out
    }
}

/// Trains and evaluates one residual network per input setting with the same
/// initialization seed and schedule.
pub fn run_ablation(
    settings: &[InputSetting],
    base: &ModelConfig,
    render: &RenderConfig,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<AblationReport> {
    if settings.is_empty() {
        return Err(Error::Config("ablation needs at least one input setting".into()));
    }
    if settings.iter().collect::<HashSet<_>>().len() != settings.len() {
        return Err(Error::Config("ablation settings must not repeat".into()));
    }
    let mut rows = Vec::new();
    for &setting in settings {
        let model_cfg = ModelConfig { in_channels: setting.in_channels(), ..base.clone() };
        let mut model = RenderedPoseClassifier::new(&model_cfg, setting, render.clone())?;
        let training = train(&mut model, train_set, val_set, config)?;
        let eval = |d: Option<&Dataset>, m: &mut RenderedPoseClassifier| {
            d.filter(|d| !d.is_empty()).map(|d| evaluate(m, d, config.batch_size)).transpose()
        };
        let val = eval(val_set, &mut model)?;
        let test = eval(test_set, &mut model)?;
        rows.push(AblationRow { setting, val, test, training });
    }
    Ok(AblationReport { rows })
}

/// Corrupts every clip's tracks; clip `i` uses seed `derive_seed(config.seed, i)`.
pub fn corrupt_dataset(dataset: &Dataset, config: &CorruptionConfig) -> Result<Dataset> {
    let clips = dataset
        .clips
        .iter()
        .enumerate()
        .map(|(i, clip)| {
            let cfg = CorruptionConfig { seed: derive_seed(config.seed, i as u64), ..config.clone() };
            corrupt_clip(clip, &cfg).map(|(c, _)| c)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dataset.label_space.clone(), clips)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCell {
    pub model: String,
    pub condition: usize,
    pub accuracy: f64,
    /// Corrupted minus clean accuracy.
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub models: Vec<String>,
    pub clean_accuracy: Vec<f64>,
    pub conditions: Vec<CorruptionConfig>,
    pub cells: Vec<RobustnessCell>,
}

impl RobustnessReport {
    pub fn cell(&self, model: &str, condition: usize) -> Option<&RobustnessCell> {
        self.cells.iter().find(|c| c.model == model && c.condition == condition)
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("| Model | Clean (%) |");
        for (i, c) in self.conditions.iter().enumerate() {
            let _ = write!(
                out,
                " C{i}: frag {} / switch {} / jitter {} / drop {} / spurious {} |",
                c.fragmentation_prob, c.id_switch_prob, c.jitter_sigma, c.keypoint_drop_prob, c.spurious_track_rate
            );
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(self.conditions.len()));
        out.push('\n');
        for (m, clean) in self.models.iter().zip(&self.clean_accuracy) {
            let _ = write!(out, "| {m} | {:.1} |", 100.0 * clean);
            for i in 0..self.conditions.len() {
                let cell = self.cell(m, i).expect("every model has every condition");
                let _ = write!(out, " {:.1} ({:+.1}) |", 100.0 * cell.accuracy, 100.0 * cell.delta);
            }
            out.push('\n');
        }
        out.push_str("\nPublished reference, ground-truth -> estimated tracks:");
        for (name, clean, tracked) in ROBUSTNESS_REFERENCE {
            let _ = write!(out, " {name} {clean} -> {tracked};");
        }
        out.pop();
        out.push('\n');
        out
    }
}

/// Evaluates every (already trained) model on clean and corrupted copies of
/// `dataset`; inputs are re-rendered or re-tensorized from corrupted tracks.
pub fn robustness_sweep(
    models: &mut [(String, Box<dyn GroupActivityModel>)],
    dataset: &Dataset,
    grid: &[CorruptionConfig],
    batch_size: usize,
) -> Result<RobustnessReport> {
    let clean_accuracy = models
        .iter_mut()
        .map(|(_, m)| evaluate(m.as_mut(), dataset, batch_size).map(|r| r.accuracy))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for (i, config) in grid.iter().enumerate() {
        let corrupted = corrupt_dataset(dataset, config)?;
        for ((name, model), clean) in models.iter_mut().zip(&clean_accuracy) {
            let accuracy = evaluate(model.as_mut(), &corrupted, batch_size)?.accuracy;
            cells.push(RobustnessCell { model: name.clone(), condition: i, accuracy, delta: accuracy - clean });
        }
    }
    Ok(RobustnessReport {
        models: models.iter().map(|(n, _)| n.clone()).collect(),
        clean_accuracy,
        conditions: grid.to_vec(),
        cells,
    })
}
