//! Run-directory artifacts: what each subcommand leaves behind and how
//! `report` reads it back.

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use repgars::train_eval::{Metrics, RobustnessReport};

pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const RUN_INFO_FILE: &str = "run_info.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingRow {
    pub model: String,
    pub val: Option<Metrics>,
    pub test: Option<Metrics>,
}

/// Contents of `metrics.json`. Deterministic for a given config and seed:
/// wall-clock information goes to `run_info.json` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunMetrics {
    Train { class_names: Vec<String>, best_epoch: usize, row: SettingRow },
    Eval { class_names: Vec<String>, split: String, model: String, metrics: Metrics },
    Ablation { class_names: Vec<String>, rows: Vec<SettingRow> },
    Sweep { class_names: Vec<String>, report: RobustnessReport },
}

pub fn write_json(path: impl AsRef<Path>, value: &impl Serialize) -> anyhow::Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_metrics(dir: &Path) -> anyhow::Result<RunMetrics> {
    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// An output directory being filled by one subcommand.
pub struct RunDir {
    pub path: PathBuf,
    command: &'static str,
    started: SystemTime,
    clock: Instant,
}

impl RunDir {
    pub fn create(path: &Path, command: &'static str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(Self { path: path.to_path_buf(), command, started: SystemTime::now(), clock: Instant::now() })
    }

    pub fn join(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        write_json(self.join(name), value)
    }

    /// Writes `run_info.json`: command line, version and timings.
    pub fn finish(self) -> anyhow::Result<()> {
        let started = self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let info = serde_json::json!({
            "command": self.command,
            "args": std::env::args().skip(1).collect::<Vec<_>>(),
            "version": env!("CARGO_PKG_VERSION"),
            "started_unix": started,
            "elapsed_seconds": self.clock.elapsed().as_secs_f64(),
        });
        write_json(self.join(RUN_INFO_FILE), &info)
    }
}
