//! Merges run directories into ablation (one row per input setting) and
//! robustness (clean vs. corrupted accuracy) tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use repgars::train_eval::{save_confusion_heatmap, Metrics, RobustnessReport, ABLATION_REFERENCE, ROBUSTNESS_REFERENCE};

use crate::runs::{read_metrics, RunMetrics, SettingRow, METRICS_FILE};
use crate::Invalid;

/// Table order: the three input settings first, then anything else by name.
const SETTING_ORDER: [&str; 3] = ["rgb_only", "pose_only", "fused"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationLine {
    pub model: String,
    pub runs: usize,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub runs: Vec<PathBuf>,
    pub ablation: Vec<AblationLine>,
    pub robustness: Vec<RobustnessReport>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn rank(model: &str) -> (usize, String) {
    let i = SETTING_ORDER.iter().position(|s| *s == model).unwrap_or(SETTING_ORDER.len());
    (i, model.to_string())
}

fn dir_label(dir: &Path) -> String {
    dir.file_name().map_or_else(|| "run".to_string(), |n| n.to_string_lossy().into_owned())
}

/// Reads every run; all missing metrics files are reported together.
pub fn collect(dirs: &[PathBuf]) -> anyhow::Result<Vec<(PathBuf, RunMetrics)>> {
    if dirs.is_empty() {
        return Err(Invalid("report needs at least one run directory".into()).into());
    }
    let missing: Vec<String> =
        dirs.iter().filter(|d| !d.join(METRICS_FILE).is_file()).map(|d| d.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Invalid(format!("no {METRICS_FILE} in: {}", missing.join(", "))).into());
    }
    dirs.iter().map(|d| Ok((d.clone(), read_metrics(d)?))).collect()
}

pub fn build(runs: &[(PathBuf, RunMetrics)]) -> Report {
    let mut by_model: BTreeMap<(usize, String), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    let mut add = |row: &SettingRow| {
        let e = by_model.entry(rank(&row.model)).or_default();
        e.0.extend(row.val.as_ref().map(|m| m.accuracy));
        e.1.extend(row.test.as_ref().map(|m| m.accuracy));
        e.2 += 1;
    };
    let mut robustness = Vec::new();
    for (_, run) in runs {
        match run {
            RunMetrics::Train { row, .. } => add(row),
            RunMetrics::Ablation { rows, .. } => rows.iter().for_each(&mut add),
            RunMetrics::Eval { model, metrics, .. } => {
                add(&SettingRow { model: model.clone(), val: None, test: Some(metrics.clone()) })
            }
            RunMetrics::Sweep { report, .. } => robustness.push(report.clone()),
        }
    }
    let ablation = by_model
        .into_iter()
        .map(|((_, model), (val, test, runs))| AblationLine {
            model,
            runs,
            val_accuracy: mean(&val),
            test_accuracy: mean(&test),
        })
        .collect();
    Report { runs: runs.iter().map(|(d, _)| d.clone()).collect(), ablation, robustness }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", 100.0 * v))
}

pub fn to_text(report: &Report) -> String {
    let mut out = String::new();
    if !report.ablation.is_empty() {
        out.push_str("Accuracy by input (%)\n");
        let _ = writeln!(out, "{:<14} {:>5} {:>8} {:>8}", "model", "runs", "val", "test");
        for line in &report.ablation {
            let _ = writeln!(
                out,
                "{:<14} {:>5} {:>8} {:>8}",
                line.model,
                line.runs,
                pct(line.val_accuracy),
                pct(line.test_accuracy)
            );
        }
        let refs: Vec<String> = ABLATION_REFERENCE
            .iter()
            .map(|(name, [r, p, f])| format!("{name} rgb {r:.1} / pose {p:.1} / fused {f:.1}"))
            .collect();
        let _ = writeln!(out, "published: {}", refs.join("; "));
    }
    for r in &report.robustness {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("Accuracy under tracking corruption (%)\n");
        out.push_str(&r.to_table());
        let refs: Vec<String> =
            ROBUSTNESS_REFERENCE.iter().map(|(m, clean, trk)| format!("{m} {clean:.1} -> {trk:.1}")).collect();
        let _ = writeln!(out, "published (ground-truth -> estimated tracks): {}", refs.join("; "));
    }
    out
}

/// One heatmap per run and model with test (or evaluation) metrics.
pub fn heatmaps(runs: &[(PathBuf, RunMetrics)], out_dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut save = |dir: &Path, model: &str, m: &Metrics| -> anyhow::Result<()> {
        let path = out_dir.join(format!("confusion_{}_{model}.png", dir_label(dir)));
        save_confusion_heatmap(m, &path, 32)?;
        written.push(path);
        Ok(())
    };
    for (dir, run) in runs {
        match run {
            RunMetrics::Train { row, .. } => {
                if let Some(m) = &row.test {
                    save(dir, &row.model, m)?;
                }
            }
            RunMetrics::Ablation { rows, .. } => {
                for row in rows {
                    if let Some(m) = &row.test {
                        save(dir, &row.model, m)?;
                    }
                }
            }
            RunMetrics::Eval { model, metrics, .. } => save(dir, model, metrics)?,
            RunMetrics::Sweep { .. } => {}
        }
    }
    Ok(written)
}
