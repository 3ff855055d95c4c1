//! Volumetric depth-map fusion.
//!
//! Two integration paths share one voxel grid ([`TsdfVolume`]):
//!
//! * standard TSDF fusion ([`baseline::integrate_frame_standard`]), a running
//!   weighted average of projective truncated distances;
//! * a learned path ([`fusion::LearnedFusion`]): a 2D network routes each depth
//!   map to a denoised depth and a confidence, a window of the current TSDF is
//!   sampled along every camera ray, a second network predicts new values for
//!   that window, and the predictions are splatted back into the grid.
//!
//! Supporting modules render synthetic depth from meshes ([`synth`]), compute
//! metrics and extract meshes ([`eval`]), and read/write the binary formats
//! shared with the training tools.

// `!(x > 0.0)` is used on purpose so NaN lands on the rejecting side.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod binio;

pub mod baseline;
pub mod config;
pub mod depth;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod geometry;
pub mod mesh;
pub mod nn;
pub mod routing;
pub mod synth;
pub mod volume;
pub mod window;

pub use depth::{ConfidenceMap, DepthFrame, DepthMap};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, Pose};
pub use mesh::TriangleMesh;
pub use nn::{NetworkWeights, Tensor};
pub use volume::TsdfVolume;
