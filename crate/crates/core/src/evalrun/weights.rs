//! Mapping from a weight file to per-stage pipeline parameters.
//!
//! Recognized names, with `N` in 1..=3:
//!
//! - `stageN.decoder.weight` `[out, in]`, `stageN.decoder.bias` `[out]`
//! - `stageN.head.cost.weight` `[Ch]`, `stageN.head.cost.bias` `[1]`
//! - `stageN.head.offset.weight` `[Ch]`, `stageN.head.offset.bias` `[1]`
//! - `stageN.fusion.mix` `[4]`, `stageN.fusion.taps` `[5]` for N in 1..=2
//! - `upsample.convex` `[9]`, `upsample.superpixel` `[9]`

use crate::aggregation::{FusionWeights, Head, LinearHead};
use crate::error::{shape_err, Error, Result};
use crate::evalrun::config::PipelineConfig;
use crate::features::ChannelMix;
use crate::io::WeightSet;
use crate::regression::UpsampleWeights;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineWeights {
    pub decoder: [ChannelMix; 3],
    pub heads: [Head; 3],
    pub fusion: [FusionWeights; 2],
    pub convex: UpsampleWeights,
    pub superpixel: UpsampleWeights,
}

impl PipelineWeights {
    /// Handcrafted parameters from the configuration alone.
    pub fn handcrafted(cfg: &PipelineConfig) -> Self {
        let carry = cfg.features.carry;
        let mix = |gain: f64| {
            if gain == 1.0 && carry == 1.0 {
                ChannelMix::Identity
            } else {
                ChannelMix::Split { carry, gain }
            }
        };
        let g = cfg.features.gain;
        Self {
            decoder: [mix(g[0]), mix(g[1]), mix(g[2])],
            heads: [Head::Handcrafted, Head::Handcrafted, Head::Handcrafted],
            fusion: cfg.fusion.clone(),
            convex: UpsampleWeights::CenterDelta,
            superpixel: UpsampleWeights::CenterDelta,
        }
    }

    /// Handcrafted defaults overridden by whatever the weight set provides.
    /// Unknown tensor names are rejected.
    pub fn from_weight_set(cfg: &PipelineConfig, set: &WeightSet) -> Result<Self> {
        let mut out = Self::handcrafted(cfg);
        for name in set.names() {
            if !known_name(name) {
                return Err(Error::Parse(format!("unknown weight tensor {name:?}")));
            }
        }
        let vec_of = |name: &str, len: Option<usize>| -> Result<Option<Vec<f64>>> {
            match set.get(name) {
                None => Ok(None),
                Some(t) => {
                    if let Some(l) = len {
                        if t.len() != l {
                            return shape_err(format!("{name} needs {l} values, has {}", t.len()));
                        }
                    }
                    Ok(Some(t.data().to_vec()))
                }
            }
        };
        for s in 0..3 {
            let p = format!("stage{}", s + 1);
            if let Some(w) = set.get(&format!("{p}.decoder.weight")) {
                if w.ndim() != 2 {
                    return shape_err(format!("{p}.decoder.weight must be [out, in]"));
                }
                let bias = vec_of(&format!("{p}.decoder.bias"), Some(w.shape()[0]))?
                    .unwrap_or_else(|| vec![0.0; w.shape()[0]]);
                out.decoder[s] = ChannelMix::Linear {
                    weight: w.clone(),
                    bias,
                };
            } else if set.get(&format!("{p}.decoder.bias")).is_some() {
                return shape_err(format!("{p}.decoder.bias without weight"));
            }
            let head = |kind: &str| -> Result<Option<LinearHead>> {
                let w = vec_of(&format!("{p}.head.{kind}.weight"), None)?;
                let b = vec_of(&format!("{p}.head.{kind}.bias"), Some(1))?;
                Ok(match (w, b) {
                    (None, None) => None,
                    (w, b) => Some(LinearHead {
                        weight: w.ok_or_else(|| {
                            Error::Shape(format!("{p}.head.{kind}.weight missing"))
                        })?,
                        bias: b.map_or(0.0, |b| b[0]),
                    }),
                })
            };
            match (head("cost")?, head("offset")?) {
                (None, None) => {}
                (Some(cost), Some(offset)) => out.heads[s] = Head::Loaded { cost, offset },
                _ => return shape_err(format!("{p} needs both cost and offset heads")),
            }
            if s < 2 {
                if let Some(m) = vec_of(&format!("{p}.fusion.mix"), Some(4))? {
                    out.fusion[s].identity = m[0];
                    out.fusion[s].conv = m[1];
                    out.fusion[s].avg = m[2];
                    out.fusion[s].max = m[3];
                }
                if let Some(t) = vec_of(&format!("{p}.fusion.taps"), Some(5))? {
                    out.fusion[s].taps.copy_from_slice(&t);
                }
            }
        }
        let kernel = |name: &str| -> Result<Option<UpsampleWeights>> {
            Ok(vec_of(name, Some(9))?.map(|v| {
                let mut k = [0.0; 9];
                k.copy_from_slice(&v);
                UpsampleWeights::Kernel(k)
            }))
        };
        if let Some(k) = kernel("upsample.convex")? {
            out.convex = k;
        }
        if let Some(k) = kernel("upsample.superpixel")? {
            out.superpixel = k;
        }
        Ok(out)
    }
}

fn known_name(name: &str) -> bool {
    if name == "upsample.convex" || name == "upsample.superpixel" {
        return true;
    }
    let Some(rest) = name.strip_prefix("stage") else {
        return false;
    };
    let (stage, field) = match rest.split_once('.') {
        Some(p) => p,
        None => return false,
    };
    let s: usize = match stage.parse() {
        Ok(s @ 1..=3) => s,
        _ => return false,
    };
    matches!(
        field,
        "decoder.weight"
            | "decoder.bias"
            | "head.cost.weight"
            | "head.cost.bias"
            | "head.offset.weight"
            | "head.offset.bias"
    ) || (s <= 2 && matches!(field, "fusion.mix" | "fusion.taps"))
}

/// Tensor helper for building weight sets in code.
pub fn named(name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<(String, Tensor)> {
    Ok((name.to_string(), Tensor::new(shape, data)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::parse_weights;

    #[test]
    fn names_are_validated() {
        let cfg = PipelineConfig::default();
        let set = parse_weights("stage4.decoder.weight 2 1 1 1").unwrap();
        assert!(PipelineWeights::from_weight_set(&cfg, &set).is_err());
        let set = parse_weights("stage3.fusion.mix 1 4 1 0 0 0").unwrap();
        assert!(PipelineWeights::from_weight_set(&cfg, &set).is_err());
        let set = parse_weights("stage1.fusion.mix 1 3 1 0 0").unwrap();
        assert!(PipelineWeights::from_weight_set(&cfg, &set).is_err());
    }

    #[test]
    fn loads_heads_and_kernels() {
        let cfg = PipelineConfig::default();
        let text = "stage2.head.cost.weight 1 2 1 2\nstage2.head.offset.weight 1 2 0 0\nstage2.head.offset.bias 1 1 0.5\n\
                    upsample.convex 1 9 0 0 0 0 1 0 0 0 0\nstage1.fusion.mix 1 4 0.5 0 0.5 0";
        let w = PipelineWeights::from_weight_set(&cfg, &parse_weights(text).unwrap()).unwrap();
        match &w.heads[1] {
            Head::Loaded { cost, offset } => {
                assert_eq!(cost.weight, vec![1.0, 2.0]);
                assert_eq!(offset.bias, 0.5);
            }
            h => panic!("{h:?}"),
        }
        assert_eq!(w.heads[0], Head::Handcrafted);
        assert_eq!(w.fusion[0].avg, 0.5);
        let half = parse_weights("stage1.head.cost.weight 1 1 1").unwrap();
        assert!(PipelineWeights::from_weight_set(&cfg, &half).is_err());
    }
}
