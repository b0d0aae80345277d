//! Windowed sequence evaluation.

use crate::camera::{perturb_pose, CameraModel, Pose};
use crate::error::{arg_err, Result};
use crate::evalrun::config::PipelineConfig;
use crate::evalrun::metrics::{compute_metrics, MetricsReport};
use crate::evalrun::pipeline::{FrameOutput, Pipeline, StereoFrame};
use crate::evalrun::weights::PipelineWeights;
use crate::regression::DisparityMap;
use crate::synth::SceneSample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFrame {
    pub left: Tensor,
    pub right: Tensor,
    pub pose: Option<Pose>,
    pub gt: Option<DisparityMap>,
    pub occlusion: Option<Vec<bool>>,
}

impl From<&SceneSample> for SequenceFrame {
    fn from(s: &SceneSample) -> Self {
        Self {
            left: s.left.clone(),
            right: s.right.clone(),
            pose: Some(s.pose),
            gt: Some(s.gt.clone()),
            occlusion: Some(s.occlusion.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceReport {
    /// One output per processed frame.
    pub outputs: Vec<FrameOutput>,
    /// Metrics of frame `W−1`, when it has ground truth.
    pub metrics: Option<MetricsReport>,
    /// With streaming on, metrics of every later frame with ground truth.
    pub streaming: Vec<(usize, MetricsReport)>,
}

/// Process the first `W` frames (all of them when streaming) and score the
/// last frame of the window. Poses are perturbed per frame when the config
/// asks for pose noise, seeded by `seed + frame index`.
pub fn run_sequence(
    frames: &[SequenceFrame],
    camera: Option<CameraModel>,
    cfg: &PipelineConfig,
    weights: &PipelineWeights,
) -> Result<SequenceReport> {
    if frames.is_empty() {
        return arg_err("empty sequence");
    }
    if cfg.window > frames.len() {
        return arg_err(format!(
            "window {} longer than sequence of {}",
            cfg.window,
            frames.len()
        ));
    }
    let pipe = Pipeline::new(cfg.clone(), weights.clone(), camera)?;
    let mut state = pipe.new_state()?;
    let end = if cfg.streaming {
        frames.len()
    } else {
        cfg.window
    };
    let noise = cfg.pose_noise;
    let mut report = SequenceReport {
        outputs: Vec::with_capacity(end),
        metrics: None,
        streaming: Vec::new(),
    };
    for (i, f) in frames[..end].iter().enumerate() {
        let pose = match f.pose {
            Some(p) if noise.rot_deg > 0.0 || noise.trans > 0.0 => Some(perturb_pose(
                &p,
                noise.rot_deg,
                noise.trans,
                cfg.seed.wrapping_add(i as u64),
            )?),
            p => p,
        };
        let frame = StereoFrame {
            left: f.left.clone(),
            right: f.right.clone(),
            pose,
            frame_index: i,
        };
        let out = pipe.run_frame(&frame, &mut state)?;
        if i + 1 >= cfg.window {
            if let Some(gt) = &f.gt {
                let m = compute_metrics(&out.disparity, gt, f.occlusion.as_deref())?;
                if i + 1 == cfg.window {
                    report.metrics = Some(m);
                } else {
                    report.streaming.push((i, m));
                }
            }
        }
        report.outputs.push(out);
    }
    Ok(report)
}
