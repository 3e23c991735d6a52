//! Group activity recognition from unreliably tracked pose.
//!
//! Tracked COCO-17 skeletons are rendered into a colour-per-identity video on
//! a black background, concatenated with the RGB clip into a 6-channel tensor
//! and classified by a 3D residual network. Because a broken or switched
//! track only changes a skeleton's colour, not its geometry, the rendered
//! input degrades gracefully where keypoint-sequence models break.
//!
//! Modules, in pipeline order:
//! - [`trackpose_io`]: detections, tracklets, court filtering, windows, manifests
//! - [`corruptor`]: seeded tracking-failure simulation
//! - [`poserender`]: skeleton rasterization and RGB/pose fusion
//! - [`gar_model`]: 3D residual classifier and keypoint-fusion baselines
//! - [`train_eval`]: training, evaluation, ablation and robustness sweeps
//! - [`synthgen`]: synthetic stick-figure group-activity clips

pub mod coco;
pub mod corruptor;
pub mod error;
pub mod gar_model;
pub mod nn;
pub mod poserender;
pub mod synthgen;
pub mod train_eval;
pub mod trackpose_io;
pub mod video;

pub use error::{Error, Result};
pub use trackpose_io::{
    ClipSample, Dataset, Keypoint2D, LabelSpace, Pose17, TrackedDetection, Tracklet,
};
pub use video::ClipTensor;
