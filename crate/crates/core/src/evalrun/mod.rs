//! Metrics, configuration, the three-stage pipeline and the sequence
//! protocol.

pub mod config;
pub mod gradcheck;
pub mod metrics;
pub mod pipeline;
pub mod sequence;
pub mod weights;

pub use config::{FeatureConfig, Mode, PipelineConfig, PoseNoise, SmoothConfig, SmoothName};
pub use gradcheck::{gradient_suite, GradReport};
pub use metrics::{compute_metrics, error_flags, MetricsReport, RegionMetrics};
pub use pipeline::{FrameOutput, Pipeline, PipelineState, StereoFrame};
pub use sequence::{run_sequence, SequenceFrame, SequenceReport};
pub use weights::PipelineWeights;
