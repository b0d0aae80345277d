//! Cost aggregation stand-ins, statistical fusion and the prediction heads.

use serde::{Deserialize, Serialize};

use crate::costvolume::{CandidateVolume, CostVolume};
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{concat_axis, pool, PoolKind, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SmoothKind {
    #[default]
    Box,
    Gaussian {
        sigma: f64,
    },
}

fn smooth_axis(t: &Tensor, axis: usize, taps: &[f64]) -> Tensor {
    let s = t.shape();
    let n = s[axis];
    let r = taps.len() / 2;
    let outer: usize = s[..axis].iter().product();
    let inner: usize = s[axis + 1..].iter().product();
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            let norm: f64 = (lo..hi).map(|q| taps[q + r - i]).sum();
            for j in 0..inner {
                let mut acc = 0.0;
                for q in lo..hi {
                    acc += taps[q + r - i] * src[(o * n + q) * inner + j];
                }
                out[(o * n + i) * inner + j] = acc / norm;
            }
        }
    }
    Tensor::new(s.to_vec(), out).expect("same shape")
}

/// Separable smoothing over the spatial axes of `[Ch,H,W,n]`. Windows are
/// truncated at the borders and renormalized.
pub fn spatial_smooth(cv: &CostVolume, radius: usize, kind: SmoothKind) -> Result<CostVolume> {
    if radius == 0 {
        return Ok(cv.clone());
    }
    let k = 2 * radius + 1;
    let costs = match kind {
        SmoothKind::Box => pool(&cv.costs, PoolKind::Avg, &[1, k, k, 1])?,
        SmoothKind::Gaussian { sigma } => {
            if !(sigma > 0.0) {
                return arg_err(format!("Gaussian sigma must be positive, got {sigma}"));
            }
            let taps: Vec<f64> = (0..k)
                .map(|i| {
                    let d = i as f64 - radius as f64;
                    (-0.5 * d * d / (sigma * sigma)).exp()
                })
                .collect();
            let t = if cv.costs.shape()[1] > 1 {
                smooth_axis(&cv.costs, 1, &taps)
            } else {
                cv.costs.clone()
            };
            if t.shape()[2] > 1 {
                smooth_axis(&t, 2, &taps)
            } else {
                t
            }
        }
    };
    CostVolume::new(costs, cv.candidates.clone(), cv.corr_start)
}

/// Branch weights for statistical fusion. Branches with zero weight are not
/// evaluated, so the identity-only default passes the input through exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionWeights {
    pub identity: f64,
    pub conv: f64,
    pub avg: f64,
    pub max: f64,
    /// 5-tap filter along the candidate axis for the convolution branch.
    pub taps: [f64; 5],
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            identity: 1.0,
            conv: 0.0,
            avg: 0.0,
            max: 0.0,
            taps: [0.0, 0.0, 1.0, 0.0, 0.0],
        }
    }
}

fn candidate_conv(t: &Tensor, taps: &[f64; 5]) -> Tensor {
    let n = t.shape()[3];
    let rows = t.len() / n;
    let mut out = vec![0.0; t.len()];
    for r in 0..rows {
        let src = &t.data()[r * n..(r + 1) * n];
        for i in 0..n {
            let mut acc = 0.0;
            for (j, &w) in taps.iter().enumerate() {
                let q = (i as isize + j as isize - 2).clamp(0, n as isize - 1) as usize;
                acc += w * src[q];
            }
            out[r * n + i] = acc;
        }
    }
    Tensor::new(t.shape().to_vec(), out).expect("same shape")
}

/// Statistical fusion branches before mixing: identity, candidate-axis
/// convolution, 5×5×5 average pooling and 5×5×5 max pooling.
pub fn fusion_branches(t: &Tensor, taps: &[f64; 5]) -> Result<[Tensor; 4]> {
    Ok([
        t.clone(),
        candidate_conv(t, taps),
        pool(t, PoolKind::Avg, &[1, 5, 5, 5])?,
        pool(t, PoolKind::Max, &[1, 5, 5, 5])?,
    ])
}

/// Optionally append past costs along the candidate axis, then mix the four
/// statistics branches.
pub fn statistical_fusion(
    cv: &CostVolume,
    past: Option<&CostVolume>,
    weights: &FusionWeights,
) -> Result<CostVolume> {
    let (costs, cands) = match past {
        None => (cv.costs.clone(), cv.candidates.clone()),
        Some(p) => {
            let (a, b) = (cv.costs.shape(), p.costs.shape());
            if a[..3] != b[..3] || p.corr_start != cv.corr_start {
                return shape_err(format!("past costs {b:?} do not fit current {a:?}"));
            }
            let cands = CandidateVolume::new(
                concat_axis(&[&cv.candidates.values, &p.candidates.values], 2)?,
                cv.candidates.denom,
            )?;
            (concat_axis(&[&cv.costs, &p.costs], 3)?, cands)
        }
    };
    let w = weights;
    let only_identity = w.identity == 1.0 && w.conv == 0.0 && w.avg == 0.0 && w.max == 0.0;
    if only_identity {
        return CostVolume::new(costs, cands, cv.corr_start);
    }
    let mut out = Tensor::zeros(costs.shape());
    let mut add = |t: &Tensor, a: f64| {
        for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
            *o += a * v;
        }
    };
    if w.identity != 0.0 {
        add(&costs, w.identity);
    }
    if w.conv != 0.0 {
        add(&candidate_conv(&costs, &w.taps), w.conv);
    }
    if w.avg != 0.0 {
        add(&pool(&costs, PoolKind::Avg, &[1, 5, 5, 5])?, w.avg);
    }
    if w.max != 0.0 {
        add(&pool(&costs, PoolKind::Max, &[1, 5, 5, 5])?, w.max);
    }
    CostVolume::new(out, cands, cv.corr_start)
}

/// Per-channel linear head: `out = Σ_ch w[ch]·cv[ch] + bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl LinearHead {
    fn apply(&self, cv: &CostVolume) -> Result<Tensor> {
        let ch = cv.channels();
        if self.weight.len() != ch {
            return shape_err(format!(
                "head has {} weights for {ch} channels",
                self.weight.len()
            ));
        }
        let s = cv.costs.shape();
        let plane = s[1] * s[2] * s[3];
        let mut out = vec![self.bias; plane];
        for (c, &w) in self.weight.iter().enumerate() {
            if w != 0.0 {
                let src = &cv.costs.data()[c * plane..(c + 1) * plane];
                for (o, v) in out.iter_mut().zip(src) {
                    *o += w * v;
                }
            }
        }
        Tensor::new(s[1..].to_vec(), out)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Head {
    /// Cost = −mean of the correlation channels, offsets = 0.
    #[default]
    Handcrafted,
    Loaded {
        cost: LinearHead,
        offset: LinearHead,
    },
}

/// Final cost `[H,W,n]` (lower is better) and offsets `[H,W,n]` in
/// full-resolution pixels.
pub fn predict_heads(cv: &CostVolume, head: &Head) -> Result<(Tensor, Tensor)> {
    let s = cv.costs.shape();
    match head {
        Head::Handcrafted => {
            let nc = cv.corr_channels();
            if nc == 0 {
                return arg_err("handcrafted head needs correlation channels");
            }
            let plane = s[1] * s[2] * s[3];
            let mut cost = vec![0.0; plane];
            for c in cv.corr_start..s[0] {
                for (o, v) in cost
                    .iter_mut()
                    .zip(&cv.costs.data()[c * plane..(c + 1) * plane])
                {
                    *o += v;
                }
            }
            for v in &mut cost {
                *v = -*v / nc as f64;
            }
            Ok((Tensor::new(s[1..].to_vec(), cost)?, Tensor::zeros(&s[1..])))
        }
        Head::Loaded { cost, offset } => Ok((cost.apply(cv)?, offset.apply(cv)?)),
    }
}
