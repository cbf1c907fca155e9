//! Sensor-guided optical flow.
//!
//! Sparse flow hints (from depth + ego-motion geometry, a classical flow
//! estimator, or sampled ground truth) are injected into windowed
//! correlation volumes through Gaussian modulation, steering a
//! coarse-to-fine dense estimator toward the hinted displacements.

pub mod correlation;
pub mod dataset;
pub mod egoflow;
pub mod error;
pub mod estimator;
pub mod eval;
pub mod fusion;
pub mod io;
pub mod pipeline;
pub mod scene;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CameraIntrinsics, ConsistencyConfig, DepthMap, FlowField, ImageGray, Mask, ModulationParams,
    RigidPose, SegmentationMask, SparseHints,
};
