use serde::{Deserialize, Serialize};

use crate::aggregation::{FusionWeights, SmoothKind};
use crate::error::{Error, Result};
use crate::features::{Extractor, PyramidSource};
use crate::losses::LossConfig;
use crate::temporal::SplatConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Single,
    Temporal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct PoseNoise {
    pub rot_deg: f64,
    pub trans: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub extractor: Extractor,
    pub source: PyramidSource,
    /// Gaussian width of the pyramid subsampling, as a fraction of the
    /// subsampling factor.
    pub sigma_factor: f64,
    /// Channels per correlation group.
    pub group_size: usize,
    /// Per-stage decoder gain on the backbone channels, coarsest stage
    /// first; squares into the correlation scale.
    pub gain: [f64; 3],
    /// Decoder weight on the channels carried up from the previous stage.
    pub carry: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            extractor: Extractor::default(),
            source: PyramidSource::default(),
            sigma_factor: 0.5,
            group_size: 8,
            gain: [6.0, 6.0, 8.0],
            carry: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothConfig {
    /// Per-stage radius, coarsest stage first.
    pub radius: [usize; 3],
    pub kind: SmoothName,
    /// Gaussian width in stage pixels.
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothName {
    #[default]
    Box,
    Gaussian,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self {
            radius: [1, 1, 1],
            kind: SmoothName::Box,
            sigma: 1.0,
        }
    }
}

impl SmoothConfig {
    pub fn smooth_kind(&self) -> SmoothKind {
        match self.kind {
            SmoothName::Box => SmoothKind::Box,
            SmoothName::Gaussian => SmoothKind::Gaussian { sigma: self.sigma },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub d_max: f64,
    /// Candidates per stage, coarsest first.
    pub candidates: [usize; 3],
    /// Sampling half-width in pixels of the target stage.
    pub beta: f64,
    pub top_k: usize,
    pub n_key: usize,
    /// Keyframe promotion thresholds, meters and degrees.
    pub t_max: f64,
    pub r_max_deg: f64,
    pub shift_fraction: f64,
    pub loss: LossConfig,
    pub window: usize,
    pub seed: u64,
    pub mode: Mode,
    pub pose_noise: PoseNoise,
    /// Also report metrics for frames after the window.
    pub streaming: bool,
    pub features: FeatureConfig,
    pub smoothing: SmoothConfig,
    /// Statistical fusion mix for stages 1 and 2.
    pub fusion: [FusionWeights; 2],
    pub splat: SplatConfig,
    /// Scale applied to warped past costs before fusion.
    pub past_cost_weight: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            d_max: 192.0,
            candidates: [12, 5, 5],
            beta: 4.0,
            top_k: 2,
            n_key: 3,
            t_max: 0.1,
            r_max_deg: 15.0,
            shift_fraction: 0.125,
            loss: LossConfig::default(),
            window: 4,
            seed: 0,
            mode: Mode::Single,
            pose_noise: PoseNoise::default(),
            streaming: false,
            features: FeatureConfig::default(),
            smoothing: SmoothConfig::default(),
            fusion: [FusionWeights::default(), FusionWeights::default()],
            splat: SplatConfig::default(),
            past_cost_weight: 1.0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.d_max > 0.0) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        if self.candidates.contains(&0) {
            return bad(format!(
                "candidate counts must be positive: {:?}",
                self.candidates
            ));
        }
        if self.top_k == 0 || self.candidates.iter().any(|&n| self.top_k > n) {
            return bad(format!(
                "top_k {} must be in 1..=min{:?}",
                self.top_k, self.candidates
            ));
        }
        if !(self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if self.n_key == 0 || self.window == 0 {
            return bad("n_key and window must be positive".into());
        }
        if !(self.t_max >= 0.0 && self.r_max_deg >= 0.0) {
            return bad("keyframe thresholds must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return bad(format!(
                "shift_fraction {} outside [0, 1]",
                self.shift_fraction
            ));
        }
        if !(self.pose_noise.rot_deg >= 0.0 && self.pose_noise.trans >= 0.0) {
            return bad("pose noise must be non-negative".into());
        }
        if self.smoothing.kind == SmoothName::Gaussian && !(self.smoothing.sigma > 0.0) {
            return bad(format!(
                "gaussian sigma must be positive, got {}",
                self.smoothing.sigma
            ));
        }
        if self.features.group_size == 0 || !(self.features.sigma_factor >= 0.0) {
            return bad("group_size must be positive and sigma_factor non-negative".into());
        }
        if self.loss.lambda.iter().any(|&l| !(l >= 0.0)) || !(self.loss.alpha >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        Ok(())
    }
}
