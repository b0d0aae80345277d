//! Top-K soft regression, disparity upsampling and candidate generation.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::costvolume::CandidateVolume;
use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{resample_bilinear, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    /// `[H,W]`, full-resolution pixels.
    pub values: Tensor,
    pub denom: usize,
    pub valid: Option<Vec<bool>>,
}

impl DisparityMap {
    pub fn new(values: Tensor, denom: usize) -> Result<Self> {
        if values.ndim() != 2 {
            return shape_err(format!(
                "disparity map must be [H,W], got {:?}",
                values.shape()
            ));
        }
        Ok(Self {
            values,
            denom,
            valid: None,
        })
    }

    pub fn with_mask(values: Tensor, denom: usize, valid: Vec<bool>) -> Result<Self> {
        let mut m = Self::new(values, denom)?;
        if valid.len() != m.values.len() {
            return shape_err(format!(
                "mask of {} for {} pixels",
                valid.len(),
                m.values.len()
            ));
        }
        m.valid = Some(valid);
        Ok(m)
    }

    pub fn constant(h: usize, w: usize, value: f64, denom: usize) -> Self {
        Self {
            values: Tensor::full(&[h, w], value),
            denom,
            valid: None,
        }
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values.data()[y * self.width() + x]
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.valid.as_ref().is_none_or(|v| v[i])
    }
}

/// One pixel's top-K selection.
#[derive(Debug, Clone, PartialEq)]
pub struct TopK {
    pub value: f64,
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Softmax over the K lowest costs (ties go to the lower index), then the
/// weighted mean of the shifted candidates. Not clamped.
pub fn topk_pixel(cost: &[f64], shifted: &[f64], k: usize) -> TopK {
    let mut order: Vec<usize> = (0..cost.len()).collect();
    order.sort_by(|&a, &b| cost[a].total_cmp(&cost[b]));
    order.truncate(k);
    let best = -cost[order[0]];
    let mut weights: Vec<f64> = order.iter().map(|&i| (-cost[i] - best).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    let value = order
        .iter()
        .zip(&weights)
        .map(|(&i, &w)| w * shifted[i])
        .sum();
    TopK {
        value,
        indices: order,
        weights,
    }
}

/// Value and gradients of the unclamped per-pixel regression with respect to
/// costs and offsets. Entries outside the top-K get zero gradient.
pub fn topk_pixel_grad(cost: &[f64], shifted: &[f64], k: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let t = topk_pixel(cost, shifted, k);
    let mut dcost = vec![0.0; cost.len()];
    let mut doff = vec![0.0; cost.len()];
    for (&i, &w) in t.indices.iter().zip(&t.weights) {
        doff[i] = w;
        dcost[i] = -w * (shifted[i] - t.value);
    }
    (t.value, dcost, doff)
}

/// Regression output plus the selected candidates and their costs, which the
/// temporal state caches.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub disparity: DisparityMap,
    /// `[H,W,K]` shifted candidate values, best first.
    pub topk_values: Tensor,
    /// `[H,W,K]` matching costs of those candidates.
    pub topk_costs: Tensor,
}

pub fn regress_topk_full(
    cost: &Tensor,
    cands: &CandidateVolume,
    offsets: &Tensor,
    k: usize,
    d_max: f64,
) -> Result<Regression> {
    let s = cands.values.shape();
    if cost.shape() != s || offsets.shape() != s {
        return shape_err(format!(
            "cost {:?}, offsets {:?}, candidates {s:?}",
            cost.shape(),
            offsets.shape()
        ));
    }
    let (h, w, n) = (s[0], s[1], s[2]);
    if n == 0 {
        return arg_err("no candidates");
    }
    if k == 0 || k > n {
        return arg_err(format!("top-K of {k} with {n} candidates"));
    }
    let mut out = vec![0.0; h * w];
    let mut tv = vec![0.0; h * w * k];
    let mut tc = vec![0.0; h * w * k];
    let mut shifted = vec![0.0; n];
    for p in 0..h * w {
        let c = &cost.data()[p * n..(p + 1) * n];
        for i in 0..n {
            shifted[i] = cands.values.data()[p * n + i] + offsets.data()[p * n + i];
        }
        let t = topk_pixel(c, &shifted, k);
        out[p] = t.value.clamp(0.0, d_max);
        for (j, &i) in t.indices.iter().enumerate() {
            tv[p * k + j] = shifted[i].clamp(0.0, d_max);
            tc[p * k + j] = c[i];
        }
    }
    Ok(Regression {
        disparity: DisparityMap::new(Tensor::new(vec![h, w], out)?, cands.denom)?,
        topk_values: Tensor::new(vec![h, w, k], tv)?,
        topk_costs: Tensor::new(vec![h, w, k], tc)?,
    })
}

pub fn regress_topk(
    cost: &Tensor,
    cands: &CandidateVolume,
    offsets: &Tensor,
    k: usize,
    d_max: f64,
) -> Result<DisparityMap> {
    Ok(regress_topk_full(cost, cands, offsets, k, d_max)?.disparity)
}

/// 3×3 blending weights for upsampling, row-major over (dy, dx) ∈ {−1,0,1}².
#[derive(Debug, Clone, PartialEq, Default)]
pub enum UpsampleWeights {
    #[default]
    CenterDelta,
    Kernel([f64; 9]),
    /// `[9, H_out, W_out]`.
    PerPixel(Tensor),
}

const CENTER: [f64; 9] = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

fn check_convex(w: &[f64]) -> Result<()> {
    let s: f64 = w.iter().sum();
    if w.iter().any(|&v| !(v >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return arg_err(format!(
            "upsampling weights must be non-negative and sum to 1: {w:?}"
        ));
    }
    Ok(())
}

impl UpsampleWeights {
    fn validate(&self, h: usize, w: usize) -> Result<()> {
        match self {
            UpsampleWeights::CenterDelta => Ok(()),
            UpsampleWeights::Kernel(k) => check_convex(k),
            UpsampleWeights::PerPixel(t) => {
                if t.shape() != [9, h, w] {
                    return shape_err(format!(
                        "per-pixel weights {:?}, need [9,{h},{w}]",
                        t.shape()
                    ));
                }
                let hw = h * w;
                for p in 0..hw {
                    let v: Vec<f64> = (0..9).map(|j| t.data()[j * hw + p]).collect();
                    check_convex(&v)?;
                }
                Ok(())
            }
        }
    }

    fn weight(&self, j: usize, p: usize, hw: usize) -> f64 {
        match self {
            UpsampleWeights::CenterDelta => CENTER[j],
            UpsampleWeights::Kernel(k) => k[j],
            UpsampleWeights::PerPixel(t) => t.data()[j * hw + p],
        }
    }
}

fn blend3x3(
    src: &Tensor,
    out_h: usize,
    out_w: usize,
    center: impl Fn(usize, usize) -> (usize, usize),
    weights: &UpsampleWeights,
) -> Vec<f64> {
    let (h, w) = (src.shape()[0], src.shape()[1]);
    let hw = out_h * out_w;
    let mut out = vec![0.0; hw];
    for y in 0..out_h {
        for x in 0..out_w {
            let (cy, cx) = center(y, x);
            let p = y * out_w + x;
            let mut acc = 0.0;
            for j in 0..9 {
                let wgt = weights.weight(j, p, hw);
                if wgt == 0.0 {
                    continue;
                }
                let yy = (cy as isize + j as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
                let xx = (cx as isize + j as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
                acc += wgt * src.data()[yy * w + xx];
            }
            out[p] = acc;
        }
    }
    out
}

/// ×2 convex upsampling: fine pixel `(y, x)` blends the 3×3 coarse
/// neighborhood around `(y/2, x/2)`. Values stay in full-resolution units.
pub fn upsample_convex(d: &DisparityMap, weights: &UpsampleWeights) -> Result<DisparityMap> {
    let (h, w) = (d.height(), d.width());
    let (oh, ow) = (2 * h, 2 * w);
    weights.validate(oh, ow)?;
    if d.denom % 2 != 0 {
        return arg_err(format!("cannot halve stage denominator {}", d.denom));
    }
    let out = blend3x3(&d.values, oh, ow, |y, x| (y / 2, x / 2), weights);
    DisparityMap::new(Tensor::new(vec![oh, ow], out)?, d.denom / 2)
}

/// Bilinear upsampling to full resolution followed by a 3×3 weighted average.
pub fn upsample_superpixel(
    d: &DisparityMap,
    out_h: usize,
    out_w: usize,
    weights: &UpsampleWeights,
) -> Result<DisparityMap> {
    weights.validate(out_h, out_w)?;
    let up = resample_bilinear(&d.values, out_h, out_w)?;
    if matches!(weights, UpsampleWeights::CenterDelta) {
        return DisparityMap::new(up, 1);
    }
    let out = blend3x3(&up, out_h, out_w, |y, x| (y, x), weights);
    DisparityMap::new(Tensor::new(vec![out_h, out_w], out)?, 1)
}

/// Quantiles `(i+0.5)/n` of a unit normal truncated to `[−β, β]`, exactly
/// antisymmetric.
pub fn truncated_normal_offsets(n: usize, beta: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return arg_err("need at least one candidate");
    }
    if !(beta > 0.0) {
        return arg_err(format!("beta must be positive, got {beta}"));
    }
    let std = Normal::standard();
    let (fa, fb) = (std.cdf(-beta), std.cdf(beta));
    let mut z = vec![0.0; n];
    for i in 0..n / 2 {
        let q = (i as f64 + 0.5) / n as f64;
        let v = std.inverse_cdf(fa + q * (fb - fa));
        z[i] = v;
        z[n - 1 - i] = -v;
    }
    Ok(z)
}

/// Candidates around the upsampled estimate at the quantiles of a truncated
/// normal, `β` in stage pixels of `d_up`'s stage.
pub fn sample_candidates(
    d_up: &DisparityMap,
    n: usize,
    beta: f64,
    d_max: f64,
) -> Result<CandidateVolume> {
    let z = truncated_normal_offsets(n, beta)?;
    let s = d_up.denom as f64;
    let (h, w) = (d_up.height(), d_up.width());
    let mut out = Vec::with_capacity(h * w * n);
    for &d in d_up.values.data() {
        out.extend(z.iter().map(|zi| (d + zi * s).clamp(0.0, d_max)));
    }
    CandidateVolume::new(Tensor::new(vec![h, w, n], out)?, d_up.denom)
}

/// Centers of `n` uniform bins over `[0, D_max]`, identical at every pixel.
pub fn init_candidates(
    d_max: f64,
    n: usize,
    h: usize,
    w: usize,
    denom: usize,
) -> Result<CandidateVolume> {
    if n == 0 {
        return arg_err("need at least one candidate");
    }
    let bins: Vec<f64> = (0..n)
        .map(|i| (i as f64 + 0.5) * d_max / n as f64)
        .collect();
    let data = (0..h * w).flat_map(|_| bins.iter().copied()).collect();
    CandidateVolume::new(Tensor::new(vec![h, w, n], data)?, denom)
}
