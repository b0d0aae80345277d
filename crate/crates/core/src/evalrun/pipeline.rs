//! Three-stage coarse-to-fine inference with optional temporal state.

use crate::aggregation::{predict_heads, spatial_smooth, statistical_fusion};
use crate::camera::{CameraModel, Pose};
use crate::costvolume::{
    assemble_cost, concat_cost, groupwise_multilevel_cost, CandidateVolume, CostVolume,
};
use crate::error::{arg_err, shape_err, Error, Result};
use crate::evalrun::config::{Mode, PipelineConfig};
use crate::evalrun::weights::PipelineWeights;
use crate::features::{build_pyramid, decode_stage, temporal_shift, FeatureCache, FeatureLevel};
use crate::regression::{
    init_candidates, regress_topk_full, sample_candidates, upsample_convex, upsample_superpixel,
    DisparityMap, Regression,
};
use crate::temporal::{
    local_map_candidates, past_cost_volume, warp_past_costs, Keyframe, KeyframeBank, PastCosts,
};
use crate::tensor::Tensor;

/// Stage denominators, coarsest first.
pub const STAGE_DENOMS: [usize; 3] = [16, 8, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct StereoFrame {
    pub left: Tensor,
    pub right: Tensor,
    /// World-from-camera; required in temporal mode.
    pub pose: Option<Pose>,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineState {
    pub bank: KeyframeBank,
    /// The frame processed just before, promoted or not.
    pub previous: Option<Keyframe>,
}

impl PipelineState {
    pub fn new(cfg: &PipelineConfig) -> Result<Self> {
        Ok(Self {
            bank: KeyframeBank::new(cfg.n_key, cfg.t_max, cfg.r_max_deg)?,
            previous: None,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.bank.is_empty() && self.previous.is_none()
    }

    pub fn reset(&mut self) {
        self.bank.clear();
        self.previous = None;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    /// Full-resolution disparity.
    pub disparity: DisparityMap,
    /// Per-stage regressed maps, coarsest first.
    pub stages: Vec<DisparityMap>,
    /// Stage-2 candidates including any local-map entries.
    pub stage2_candidates: CandidateVolume,
    /// Warped keyframe disparities at stage 2 and their coverage.
    pub local_map: Option<(Tensor, Vec<bool>)>,
    /// Whether this frame entered the keyframe bank.
    pub promoted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub weights: PipelineWeights,
    pub camera: Option<CameraModel>,
}

/// Largest divisor of `c` not above `c / group_size`, at least 1.
fn group_count(c: usize, group_size: usize) -> usize {
    let mut g = (c / group_size).max(1);
    while c % g != 0 {
        g -= 1;
    }
    g
}

struct StageInput<'a> {
    left: &'a Tensor,
    right: &'a Tensor,
    cands: CandidateVolume,
    past: Option<&'a PastCosts>,
}

impl Pipeline {
    pub fn new(
        cfg: PipelineConfig,
        weights: PipelineWeights,
        camera: Option<CameraModel>,
    ) -> Result<Self> {
        cfg.validate()?;
        if cfg.mode == Mode::Temporal && camera.is_none() {
            return arg_err("temporal mode needs camera intrinsics");
        }
        Ok(Self {
            cfg,
            weights,
            camera,
        })
    }

    pub fn handcrafted(cfg: PipelineConfig, camera: Option<CameraModel>) -> Result<Self> {
        let w = PipelineWeights::handcrafted(&cfg);
        Self::new(cfg, w, camera)
    }

    pub fn new_state(&self) -> Result<PipelineState> {
        PipelineState::new(&self.cfg)
    }

    fn stage(&self, s: usize, input: StageInput<'_>) -> Result<Regression> {
        let c = input.left.shape()[0];
        let g = group_count(c, self.cfg.features.group_size);
        let cv = assemble_cost(
            &concat_cost(input.left, input.right, &input.cands)?,
            &groupwise_multilevel_cost(input.left, input.right, &input.cands, [g; 3])?,
        )?;
        let fused = match (s, input.past) {
            (0 | 1, past) => {
                let pv: Option<CostVolume> = past
                    .map(|p| past_cost_volume(p, &cv, self.cfg.past_cost_weight))
                    .transpose()?;
                statistical_fusion(&cv, pv.as_ref(), &self.weights.fusion[s])?
            }
            _ => cv,
        };
        let smooth = spatial_smooth(
            &fused,
            self.cfg.smoothing.radius[s],
            self.cfg.smoothing.smooth_kind(),
        )?;
        let (cost, off) = predict_heads(&smooth, &self.weights.heads[s])?;
        regress_topk_full(
            &cost,
            &smooth.candidates,
            &off,
            self.cfg.top_k,
            self.cfg.d_max,
        )
    }

    /// Run one frame. In single mode `state` is left untouched.
    pub fn run_frame(&self, frame: &StereoFrame, state: &mut PipelineState) -> Result<FrameOutput> {
        let (h, w) = match frame.left.shape() {
            [h, w] => (*h, *w),
            s => return shape_err(format!("expected [H,W] image, got {s:?}")),
        };
        if h % 16 != 0 || w % 16 != 0 {
            return arg_err(format!("image {w}x{h} is not a multiple of 16"));
        }
        let temporal = self.cfg.mode == Mode::Temporal;
        let pose = match (temporal, frame.pose) {
            (true, None) => return Err(Error::MissingPose(frame.frame_index)),
            (_, p) => p.unwrap_or_else(Pose::identity),
        };
        let cam = self.camera.as_ref();
        let f = &self.cfg.features;
        let raw = build_pyramid(
            &frame.left,
            &frame.right,
            &f.extractor,
            f.sigma_factor,
            f.source,
        )?;

        let prev = if temporal {
            state.previous.as_ref()
        } else {
            None
        };
        let cached = prev
            .and_then(|p| p.features.as_ref())
            .and_then(|c| c.level(16));
        let b16 = raw.level(16).expect("pyramid has 1/16");
        let shifted = FeatureLevel {
            denom: 16,
            left: temporal_shift(&b16.left, cached.map(|c| &c.left), self.cfg.shift_fraction)?,
            right: temporal_shift(
                &b16.right,
                cached.map(|c| &c.right),
                self.cfg.shift_fraction,
            )?,
        };
        let past = match (prev, cam) {
            (Some(p), Some(cam)) => Some(warp_past_costs(
                p,
                cam,
                &pose,
                self.cfg.splat.temperature,
                &[4, 2],
            )?),
            _ => None,
        };

        let mut stages = Vec::with_capacity(3);
        let mut dec: Option<(Tensor, Tensor)> = None;
        let mut last: Option<Regression> = None;
        let mut stage2_candidates = None;
        let mut local_map = None;
        for (s, &denom) in STAGE_DENOMS.iter().enumerate() {
            let backbone = if s == 0 {
                &shifted
            } else {
                raw.level(denom).expect("pyramid level")
            };
            let mix = &self.weights.decoder[s];
            let left = decode_stage(dec.as_ref().map(|d| &d.0), &backbone.left, mix)?;
            let right = decode_stage(dec.as_ref().map(|d| &d.1), &backbone.right, mix)?;
            let (sh, sw) = (h / denom, w / denom);
            let n = self.cfg.candidates[s];
            let mut cands = match &last {
                None => init_candidates(self.cfg.d_max, n, sh, sw, denom)?,
                Some(r) => {
                    let up = upsample_convex(&r.disparity, &self.weights.convex)?;
                    sample_candidates(&up, n, self.cfg.beta, self.cfg.d_max)?
                }
            };
            if s == 1 && temporal && !state.bank.is_empty() {
                let cam = cam.expect("checked at construction");
                let (extra, covered) =
                    local_map_candidates(&cands, &state.bank, cam, &pose, &self.cfg.splat)?;
                cands = cands.append(&extra)?;
                local_map = Some((extra, covered));
            }
            if s == 1 {
                stage2_candidates = Some(cands.clone());
            }
            let past_s = past.as_ref().filter(|_| s < 2).map(|p| &p[s]);
            let reg = self.stage(
                s,
                StageInput {
                    left: &left,
                    right: &right,
                    cands,
                    past: past_s,
                },
            )?;
            stages.push(reg.disparity.clone());
            dec = Some((left, right));
            last = Some(reg);
        }
        let last = last.expect("three stages ran");
        let disparity = upsample_superpixel(&last.disparity, h, w, &self.weights.superpixel)?;

        let mut promoted = false;
        if temporal {
            let kf = Keyframe {
                disparity: disparity.clone(),
                pose,
                topk_values: last.topk_values,
                topk_costs: last.topk_costs,
                topk_denom: STAGE_DENOMS[2],
                features: Some(FeatureCache::from_pyramid(&raw, frame.frame_index)),
                frame_index: frame.frame_index,
            };
            let rel = state
                .bank
                .last()
                .map_or_else(Pose::identity, |k| Pose::relative(&k.pose, &pose));
            promoted = state.bank.update(kf.clone(), &rel);
            state.previous = Some(kf);
        }
        Ok(FrameOutput {
            disparity,
            stages,
            stage2_candidates: stage2_candidates.expect("stage 2 ran"),
            local_map,
            promoted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSize, SceneSpec};

    #[test]
    fn group_count_divides() {
        assert_eq!(group_count(48, 8), 6);
        assert_eq!(group_count(25, 8), 1);
        assert_eq!(group_count(30, 8), 3);
        assert_eq!(group_count(4, 8), 1);
    }

    #[test]
    fn rejects_bad_sizes_and_missing_pose() {
        let p = Pipeline::handcrafted(PipelineConfig::default(), None).unwrap();
        let mut st = p.new_state().unwrap();
        let img = Tensor::zeros(&[40, 32]);
        let f = StereoFrame {
            left: img.clone(),
            right: img,
            pose: None,
            frame_index: 0,
        };
        assert!(p.run_frame(&f, &mut st).is_err());

        let cfg = PipelineConfig {
            mode: Mode::Temporal,
            ..Default::default()
        };
        assert!(Pipeline::handcrafted(cfg.clone(), None).is_err());
        let cam = CameraModel::new(16.0, 16.0, 15.5, 15.5, 0.25).unwrap();
        let p = Pipeline::handcrafted(cfg, Some(cam)).unwrap();
        let img = Tensor::zeros(&[32, 32]);
        let f = StereoFrame {
            left: img.clone(),
            right: img,
            pose: None,
            frame_index: 3,
        };
        assert!(matches!(
            p.run_frame(&f, &mut st),
            Err(Error::MissingPose(3))
        ));
    }

    #[test]
    fn plane_is_recovered() {
        let s = generate_scene(
            &SceneSpec::Plane { disparity: 6.0 },
            5,
            SceneSize::new(64, 64),
        )
        .unwrap();
        let p = Pipeline::handcrafted(PipelineConfig::default(), None).unwrap();
        let mut st = p.new_state().unwrap();
        let f = StereoFrame {
            left: s.left,
            right: s.right,
            pose: None,
            frame_index: 0,
        };
        let out = p.run_frame(&f, &mut st).unwrap();
        assert_eq!(out.disparity.values.shape(), &[64, 64]);
        assert_eq!(out.stages.len(), 3);
        let mean = out.disparity.values.data().iter().sum::<f64>() / 4096.0;
        assert!((mean - 6.0).abs() < 1.0, "mean {mean}");
        assert!(st.is_empty());
    }
}
