//! Spatio-temporal stereo matching: sparse coarse-to-fine cost volumes,
//! top-K regression, and pose-driven reuse of past disparities and costs.

pub mod aggregation;
pub mod camera;
pub mod costvolume;
pub mod error;
pub mod evalrun;
pub mod features;
pub mod io;
pub mod losses;
pub mod regression;
pub mod synth;
pub mod temporal;
pub mod tensor;

pub use camera::{CameraModel, Pose};
pub use error::{Error, Result};
pub use evalrun::{Mode, Pipeline, PipelineConfig, PipelineWeights};
pub use regression::DisparityMap;
pub use tensor::Tensor;
