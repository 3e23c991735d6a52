use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};

use repgars::corruptor::CorruptionConfig;
use repgars::gar_model::{BaselineConfig, ModelConfig};
use repgars::poserender::RenderConfig;
use repgars::synthgen::SynthConfig;
use repgars::trackpose_io::ClipLoadOptions;
use repgars::train_eval::TrainConfig;
use repgars::Dataset;

use crate::Invalid;

pub const SEED_ENV: &str = "REPGARS_SEED";

/// How clips are read from a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadConfig {
    pub window: usize,
    /// `[height, width]`; `null` keeps the source resolution.
    pub resize: Option<[usize; 2]>,
    pub min_inside_fraction: f64,
    pub confidence_threshold: f64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        let d = ClipLoadOptions::default();
        Self {
            window: d.window,
            resize: d.resize.map(|(h, w)| [h, w]),
            min_inside_fraction: d.min_inside_fraction,
            confidence_threshold: d.confidence_threshold,
        }
    }
}

impl LoadConfig {
    pub fn options(&self) -> ClipLoadOptions {
        ClipLoadOptions {
            window: self.window,
            min_inside_fraction: self.min_inside_fraction,
            confidence_threshold: self.confidence_threshold,
            resize: self.resize.map(|[h, w]| (h, w)),
        }
    }
}

fn default_grid() -> Vec<CorruptionConfig> {
    let c = CorruptionConfig::default;
    vec![
        CorruptionConfig { fragmentation_prob: 0.5, ..c() },
        CorruptionConfig { id_switch_prob: 0.3, ..c() },
        CorruptionConfig { jitter_sigma: 2.0, ..c() },
        CorruptionConfig { fragmentation_prob: 0.5, id_switch_prob: 0.3, jitter_sigma: 2.0, ..c() },
    ]
}

/// Everything a run depends on. Written verbatim to `config.json` in the
/// output directory after flags, the seed and dataset-derived sizes have been
/// applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub load: LoadConfig,
    pub render: RenderConfig,
    pub corruption: CorruptionConfig,
    /// Corruption conditions evaluated by `sweep`.
    pub sweep: Vec<CorruptionConfig>,
    pub model: ModelConfig,
    pub baseline: BaselineConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            synth: SynthConfig::default(),
            load: LoadConfig::default(),
            render: RenderConfig::default(),
            corruption: CorruptionConfig::default(),
            sweep: default_grid(),
            model: ModelConfig::default(),
            baseline: BaselineConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| Invalid(format!("config {}: {e}", path.display())).into())
    }

    /// Seed precedence: flag, then config file, then `REPGARS_SEED`, then 0.
    /// The resolved seed is applied to every seeded section.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let env = match std::env::var(SEED_ENV) {
            Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| Invalid(format!("{SEED_ENV}={v:?} is not a seed")))?),
            Err(_) => None,
        };
        let seed = flag.or(self.seed).or(env).unwrap_or(0);
        self.seed = Some(seed);
        self.synth.seed = seed;
        self.corruption.seed = seed;
        for c in &mut self.sweep {
            c.seed = seed;
        }
        self.model.init_seed = seed;
        self.baseline.init_seed = seed;
        self.train.seed = seed;
        Ok(seed)
    }

    /// Sizes the model and renderer after the loaded data.
    pub fn fit_to(&mut self, data: &Dataset) {
        let classes = data.label_space.len();
        self.model.num_classes = classes;
        self.baseline.num_classes = classes;
        if let Some(clip) = data.clips.first() {
            self.model.input_size = [clip.num_frames(), clip.height(), clip.width()];
            self.render.height = clip.height();
            self.render.width = clip.width();
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let checks = [
            self.render.validate(),
            self.corruption.validate(),
            self.train.validate(),
        ];
        for c in checks {
            c?;
        }
        for c in &self.sweep {
            c.validate()?;
        }
        if self.load.window == 0 {
            return Err(Invalid("load.window must be positive".into()).into());
        }
        Ok(())
    }
}
