//! Shared inputs for the pipeline benchmarks.

use repgars::synthgen::{gen_clip, SynthConfig};
use repgars::ClipSample;

/// A deterministic synthetic clip of the given size with six persons.
pub fn clip(height: usize, width: usize, frames: usize) -> ClipSample {
    let cfg = SynthConfig { height, width, frames, ..SynthConfig::default() };
    gen_clip(0, &cfg, 7).expect("valid synthetic config")
}
