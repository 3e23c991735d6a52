use std::fmt::Write as _;
use std::path::Path;

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gar_model::{loss_ce, GroupActivityModel};
use crate::trackpose_io::{ClipSample, Dataset};

/// Accuracy and confusion counts (rows: true class, columns: predicted).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub support: Vec<usize>,
    /// Mean cross-entropy, when probabilities were available.
    pub loss: Option<f64>,
}

impl Metrics {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Self> {
        if truth.is_empty() {
            return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
        }
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!("{} labels but {} predictions", truth.len(), predicted.len())));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= classes || p >= classes {
                return Err(Error::InvalidInput(format!("class index out of range for {classes} classes")));
            }
            confusion[t][p] += 1;
        }
        let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            accuracy: correct as f64 / truth.len() as f64,
            support: confusion.iter().map(|row| row.iter().sum()).collect(),
            confusion,
            loss: None,
        })
    }

    pub fn total(&self) -> usize {
        self.support.iter().sum()
    }

    /// Plain-text confusion matrix with class names.
    pub fn to_table(&self, class_names: &[String]) -> String {
        let width = class_names.iter().map(|n| n.len()).max().unwrap_or(4).max(6);
        let mut out = String::new();
        let _ = write!(out, "{:>width$} |", "true\\pred");
        for n in class_names {
            let _ = write!(out, " {n:>width$}");
        }
        out.push('\n');
        for (name, row) in class_names.iter().zip(&self.confusion) {
            let _ = write!(out, "{name:>width$} |");
            for v in row {
                let _ = write!(out, " {v:>width$}");
            }
            out.push('\n');
        }
        let _ = writeln!(out, "accuracy {:.1}% over {} clips", 100.0 * self.accuracy, self.total());
        out
    }
}

/// Arg-max predictions over `dataset` in evaluation mode.
pub fn evaluate(model: &mut dyn GroupActivityModel, dataset: &Dataset, batch_size: usize) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    let clips: Vec<&ClipSample> = dataset.clips.iter().collect();
    let mut predictions = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch_size.max(1)) {
        predictions.extend(model.classify(chunk)?);
    }
    let truth = dataset.labels();
    let predicted: Vec<usize> = predictions.iter().map(|p| p.label()).collect();
    let mut metrics = Metrics::from_predictions(&truth, &predicted, model.num_classes())?;
    metrics.loss = Some(loss_ce(&predictions, &truth)?);
    Ok(metrics)
}

/// Row-normalized confusion heatmap, `cell` pixels per entry, white (0) to
/// dark blue (1).
pub fn save_confusion_heatmap(metrics: &Metrics, path: impl AsRef<Path>, cell: u32) -> Result<()> {
    let path = path.as_ref();
    let g = metrics.confusion.len() as u32;
    let cell = cell.max(1);
    let img = RgbImage::from_fn(g * cell, g * cell, |x, y| {
        let (r, c) = ((y / cell) as usize, (x / cell) as usize);
        let frac = match metrics.support[r] {
            0 => 0.0,
            n => metrics.confusion[r][c] as f64 / n as f64,
        };
        let shade = |lo: f64, hi: f64| (255.0 * (lo + (hi - lo) * frac)).round() as u8;
        // thin grid lines between cells
        if cell > 4 && (x % cell == 0 || y % cell == 0) {
            return Rgb([200, 200, 200]);
        }
        Rgb([shade(1.0, 0.03), shade(1.0, 0.19), shade(1.0, 0.42)])
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save(path).map_err(|e| Error::Image { path: path.to_path_buf(), message: e.to_string() })
}
