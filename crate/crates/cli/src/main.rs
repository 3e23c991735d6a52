//! `repgars`: synthesize, ingest, corrupt, train, evaluate and report.
//!
//! Exit status: 0 on success, 1 on usage or validation errors, 2 when a
//! run fails at runtime.

mod commands;
mod config;
mod report;
mod runs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use repgars::gar_model::InputSetting;

/// Bad input the user can fix: exits with status 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser)]
#[command(name = "repgars", version)]
#[command(about = "Group activity recognition from rendered, tracked pose")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand that reads a config.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// JSON run config; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,

    /// Global seed (falls back to the config, then REPGARS_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
}

/// A residual-network input setting or a keypoint baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelChoice {
    Rendered(InputSetting),
    EarlyFusion,
    LateFusion,
}

fn parse_model(s: &str) -> Result<ModelChoice, String> {
    Ok(match s {
        "rgb" | "rgb_only" => ModelChoice::Rendered(InputSetting::RgbOnly),
        "pose" | "pose_only" => ModelChoice::Rendered(InputSetting::PoseOnly),
        "fused" => ModelChoice::Rendered(InputSetting::Fused),
        "early" | "early_fusion" => ModelChoice::EarlyFusion,
        "late" | "late_fusion" => ModelChoice::LateFusion,
        _ => return Err(format!("unknown setting {s:?}: use rgb, pose, fused, early or late")),
    })
}

fn parse_setting(s: &str) -> Result<InputSetting, String> {
    match parse_model(s)? {
        ModelChoice::Rendered(setting) => Ok(setting),
        _ => Err(format!("{s:?} is not an input setting: use rgb, pose or fused")),
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic stick-figure dataset
    Synth {
        /// Output directory (receives manifest.json and clips/)
        #[arg(long, visible_alias = "out-dir")]
        out: PathBuf,

        /// Clips per class (overrides synth.clips_per_class)
        #[arg(long)]
        clips_per_class: Option<usize>,

        #[command(flatten)]
        common: Common,
    },

    /// Load a manifest through the full input pipeline and summarize it
    Ingest {
        #[arg(long)]
        manifest: PathBuf,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Write RGB | rendered-pose frames side by side for one clip
    RenderPreview {
        #[arg(long)]
        manifest: PathBuf,

        /// Clip id (default: the first clip in the manifest)
        #[arg(long)]
        clip: Option<String>,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Copy a dataset with corrupted tracks
    Corrupt {
        #[arg(long)]
        manifest: PathBuf,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        /// Probability a track is split in two
        #[arg(long)]
        fragmentation: Option<f64>,

        /// Probability a pair of tracks swaps identities
        #[arg(long)]
        id_switch: Option<f64>,

        /// Keypoint jitter standard deviation in pixels
        #[arg(long)]
        jitter: Option<f64>,

        /// Probability a keypoint is dropped
        #[arg(long)]
        drop: Option<f64>,

        /// Expected spurious tracks per clip
        #[arg(long)]
        spurious: Option<f64>,

        #[command(flatten)]
        common: Common,
    },

    /// Train one model on the train split
    Train {
        #[arg(long)]
        manifest: PathBuf,

        /// rgb, pose, fused, early or late
        #[arg(long, default_value = "fused", value_parser = parse_model)]
        setting: ModelChoice,

        /// Pretrained 3D ResNet weights (safetensors)
        #[arg(long)]
        pretrained: Option<PathBuf>,

        /// Overrides train.epochs
        #[arg(long)]
        epochs: Option<usize>,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Evaluate a checkpoint on one split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,

        #[arg(long)]
        manifest: PathBuf,

        /// train, val or test
        #[arg(long, default_value = "test")]
        split: String,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Train and compare the rgb, pose and fused input settings
    Ablate {
        #[arg(long)]
        manifest: PathBuf,

        /// Settings to compare (default: all three)
        #[arg(long, value_delimiter = ',', value_parser = parse_setting)]
        settings: Vec<InputSetting>,

        #[arg(long)]
        epochs: Option<usize>,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Accuracy of several models under the configured corruption grid
    Sweep {
        #[arg(long)]
        manifest: PathBuf,

        /// Trained checkpoints; without any, fused, late and early fusion
        /// models are trained first
        #[arg(long)]
        checkpoint: Vec<PathBuf>,

        #[arg(long)]
        epochs: Option<usize>,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,

        #[command(flatten)]
        common: Common,
    },

    /// Merge run directories into tables and confusion heatmaps
    Report {
        /// Run directories holding metrics.json
        #[arg(required = true)]
        runs: Vec<PathBuf>,

        #[arg(long, visible_alias = "out")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { out, clips_per_class, common } => commands::synth(&out, clips_per_class, &common),
        Command::Ingest { manifest, out_dir, common } => commands::ingest(&manifest, &out_dir, &common),
        Command::RenderPreview { manifest, clip, out_dir, common } => {
            commands::render_preview(&manifest, clip.as_deref(), &out_dir, &common)
        }
        Command::Corrupt { manifest, out_dir, fragmentation, id_switch, jitter, drop, spurious, common } => {
            let overrides = commands::CorruptionFlags { fragmentation, id_switch, jitter, drop, spurious };
            commands::corrupt(&manifest, &out_dir, &overrides, &common)
        }
        Command::Train { manifest, setting, pretrained, epochs, out_dir, common } => {
            commands::train(&manifest, setting, pretrained, epochs, &out_dir, &common)
        }
        Command::Eval { checkpoint, manifest, split, out_dir, common } => {
            commands::eval(&checkpoint, &manifest, &split, &out_dir, &common)
        }
        Command::Ablate { manifest, settings, epochs, out_dir, common } => {
            commands::ablate(&manifest, &settings, epochs, &out_dir, &common)
        }
        Command::Sweep { manifest, checkpoint, epochs, out_dir, common } => {
            commands::sweep(&manifest, &checkpoint, epochs, &out_dir, &common)
        }
        Command::Report { runs, out_dir } => commands::report(&runs, &out_dir),
    }
}

/// Status 1 for problems with the user's input, 2 for everything else.
fn exit_status(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Invalid>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<repgars::Error>() {
            return match e {
                repgars::Error::Config(_)
                | repgars::Error::Manifest(_)
                | repgars::Error::Parse { .. }
                | repgars::Error::DuplicateDetection { .. }
                | repgars::Error::InvalidInput(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
