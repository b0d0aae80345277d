//! Handcrafted feature pyramids, per-stage decoding and the temporal
//! channel shift.
//!
//! Each pyramid level either Gaussian-subsamples full-resolution descriptors
//! at block centers, or runs the extractor on the Gaussian-subsampled image.
//! Every channel is then standardized over the image.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{concat_axis, resample_bilinear, slice_axis, Tensor};

/// Pyramid denominators, finest first.
pub const LEVELS: [usize; 3] = [4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Extractor {
    Census {
        radius: usize,
    },
    Patch {
        radius: usize,
    },
    RandomProjection {
        radius: usize,
        channels: usize,
        seed: u64,
    },
}

impl Default for Extractor {
    fn default() -> Self {
        Extractor::Census { radius: 3 }
    }
}

impl Extractor {
    pub fn channels(&self) -> usize {
        match *self {
            Extractor::Census { radius } => (2 * radius + 1).pow(2) - 1,
            Extractor::Patch { radius } => (2 * radius + 1).pow(2),
            Extractor::RandomProjection { channels, .. } => channels,
        }
    }
}

fn neighbors(radius: usize, skip_center: bool) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut v = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if !(skip_center && dy == 0 && dx == 0) {
                v.push((dy, dx));
            }
        }
    }
    v
}

fn clamped(img: &Tensor, y: isize, x: isize) -> f64 {
    let (h, w) = (img.shape()[0] as isize, img.shape()[1] as isize);
    let yy = y.clamp(0, h - 1) as usize;
    let xx = x.clamp(0, w - 1) as usize;
    img.data()[yy * w as usize + xx]
}

const CENSUS_TIE: f64 = 1e-12;

/// Census bits: 1 where the neighbor is darker than the center. Borders
/// replicate the edge pixel so out-of-frame neighbors never look darker.
pub fn census_transform(img: &Tensor, radius: usize) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let offs = neighbors(radius, true);
    let mut out = Tensor::zeros(&[offs.len(), h, w]);
    let data = out.data_mut();
    for (c, &(dy, dx)) in offs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                let center = img.data()[y * w + x];
                let n = clamped(img, y as isize + dy, x as isize + dx);
                // ties within rounding of a resampled flat region stay 0
                let tol = CENSUS_TIE * center.abs().max(1.0);
                data[(c * h + y) * w + x] = if n < center - tol { 1.0 } else { 0.0 };
            }
        }
    }
    out
}

fn patch_transform(img: &Tensor, radius: usize) -> Tensor {
    let (h, w) = (img.shape()[0], img.shape()[1]);
    let offs = neighbors(radius, false);
    let mut out = Tensor::zeros(&[offs.len(), h, w]);
    let data = out.data_mut();
    for (c, &(dy, dx)) in offs.iter().enumerate() {
        for y in 0..h {
            for x in 0..w {
                data[(c * h + y) * w + x] = clamped(img, y as isize + dy, x as isize + dx);
            }
        }
    }
    out
}

fn random_projection(img: &Tensor, radius: usize, channels: usize, seed: u64) -> Tensor {
    let patch = patch_transform(img, radius);
    let (k, h, w) = (patch.shape()[0], patch.shape()[1], patch.shape()[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proj: Vec<f64> = (0..channels * k)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut out = Tensor::zeros(&[channels, h, w]);
    let src = patch.data();
    let data = out.data_mut();
    for c in 0..channels {
        for p in 0..h * w {
            let mut s = 0.0;
            for j in 0..k {
                s += proj[c * k + j] * src[j * h * w + p];
            }
            data[c * h * w + p] = s;
        }
    }
    out
}

/// Full-resolution descriptors `[C,H,W]` for a grayscale image `[H,W]`.
pub fn extract(img: &Tensor, extractor: &Extractor) -> Tensor {
    match *extractor {
        Extractor::Census { radius } => census_transform(img, radius),
        Extractor::Patch { radius } => patch_transform(img, radius),
        Extractor::RandomProjection {
            radius,
            channels,
            seed,
        } => random_projection(img, radius, channels, seed),
    }
}

fn gaussian_taps(factor: usize, sigma: f64, n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let reach = (3.0 * sigma).ceil().max(factor as f64 / 2.0) as isize;
    (0..n_out)
        .map(|i| {
            let center = (i as f64 + 0.5) * factor as f64 - 0.5;
            let c0 = center.round() as isize;
            let mut taps: Vec<(usize, f64)> = (c0 - reach..=c0 + reach)
                .filter(|&q| q >= 0 && (q as usize) < n_in)
                .map(|q| {
                    let d = q as f64 - center;
                    let wgt = if sigma > 0.0 {
                        (-0.5 * d * d / (sigma * sigma)).exp()
                    } else {
                        1.0
                    };
                    (q as usize, wgt)
                })
                .collect();
            let s: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= s;
            }
            taps
        })
        .collect()
}

/// Separable Gaussian subsampling by an integer factor, sampling at the
/// centers of `factor × factor` blocks.
pub fn subsample(t: &Tensor, factor: usize, sigma_factor: f64) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let (oh, ow) = (h / factor, w / factor);
    let sigma = sigma_factor * factor as f64;
    let ty = gaussian_taps(factor, sigma, h, oh);
    let tx = gaussian_taps(factor, sigma, w, ow);
    let src = t.data();
    let mut rows = vec![0.0; c * oh * w];
    for ch in 0..c {
        for (oy, taps) in ty.iter().enumerate() {
            for x in 0..w {
                rows[(ch * oh + oy) * w + x] = taps
                    .iter()
                    .map(|&(y, g)| g * src[(ch * h + y) * w + x])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for (ox, taps) in tx.iter().enumerate() {
                out[(ch * oh + oy) * ow + ox] = taps
                    .iter()
                    .map(|&(x, g)| g * rows[(ch * oh + oy) * w + x])
                    .sum();
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out).expect("consistent shape")
}

/// Zero mean, unit variance per channel. Channels with no variance become 0.
pub fn standardize(t: &Tensor) -> Tensor {
    let c = t.shape()[0];
    let per = t.len() / c.max(1);
    let mut out = t.clone();
    for ch in 0..c {
        let s = &mut out.data_mut()[ch * per..(ch + 1) * per];
        let mean = s.iter().sum::<f64>() / per as f64;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / per as f64;
        let sd = var.sqrt();
        for v in s.iter_mut() {
            *v = if sd > 1e-12 { (*v - mean) / sd } else { 0.0 };
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureLevel {
    pub denom: usize,
    pub left: Tensor,
    pub right: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    /// Finest (1/4) first.
    pub levels: Vec<FeatureLevel>,
}

impl FeaturePyramid {
    pub fn level(&self, denom: usize) -> Option<&FeatureLevel> {
        self.levels.iter().find(|l| l.denom == denom)
    }

    pub fn level_mut(&mut self, denom: usize) -> Option<&mut FeatureLevel> {
        self.levels.iter_mut().find(|l| l.denom == denom)
    }
}

/// Previous-frame backbone features kept for the temporal shift.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureCache {
    pub levels: Vec<FeatureLevel>,
    pub frame_index: usize,
}

impl FeatureCache {
    pub fn from_pyramid(p: &FeaturePyramid, frame_index: usize) -> Self {
        Self {
            levels: p.levels.clone(),
            frame_index,
        }
    }

    pub fn level(&self, denom: usize) -> Option<&FeatureLevel> {
        self.levels.iter().find(|l| l.denom == denom)
    }
}

/// Where the pyramid is subsampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PyramidSource {
    /// Extract at full resolution, subsample the descriptors.
    Descriptors,
    /// Subsample the image, extract at each level.
    #[default]
    Image,
}

pub fn build_pyramid(
    left: &Tensor,
    right: &Tensor,
    extractor: &Extractor,
    sigma_factor: f64,
    source: PyramidSource,
) -> Result<FeaturePyramid> {
    if left.ndim() != 2 || left.shape() != right.shape() {
        return shape_err(format!(
            "expected two equal [H,W] images, got {:?} and {:?}",
            left.shape(),
            right.shape()
        ));
    }
    let (h, w) = (left.shape()[0], left.shape()[1]);
    if h < 16 || w < 16 {
        return arg_err(format!("image {w}x{h} is smaller than 16x16"));
    }
    if extractor.channels() == 0 {
        return arg_err("extractor produces no channels");
    }
    let levels = match source {
        PyramidSource::Descriptors => {
            let fl = extract(left, extractor);
            let fr = extract(right, extractor);
            LEVELS
                .iter()
                .map(|&s| FeatureLevel {
                    denom: s,
                    left: standardize(&subsample(&fl, s, sigma_factor)),
                    right: standardize(&subsample(&fr, s, sigma_factor)),
                })
                .collect()
        }
        PyramidSource::Image => {
            let level = |img: &Tensor, s: usize| -> Result<Tensor> {
                let small = subsample(&img.clone().reshape(vec![1, h, w])?, s, sigma_factor);
                let small = small.reshape(vec![h / s, w / s])?;
                Ok(standardize(&extract(&small, extractor)))
            };
            LEVELS
                .iter()
                .map(|&s| {
                    Ok(FeatureLevel {
                        denom: s,
                        left: level(left, s)?,
                        right: level(right, s)?,
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    Ok(FeaturePyramid { levels })
}

/// Linear channel mix applied after the decoder concatenation.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelMix {
    Identity,
    /// Diagonal mix: the leading `carried` channels (the upsampled previous
    /// stage) are scaled by `carry`, the backbone channels by `gain`.
    Split {
        carry: f64,
        gain: f64,
    },
    /// `weight` is `[out, in]`, `bias` has `out` entries.
    Linear {
        weight: Tensor,
        bias: Vec<f64>,
    },
}

impl ChannelMix {
    /// Mix `t`, whose first `carried` channels come from the previous stage.
    pub fn apply(&self, t: &Tensor, carried: usize) -> Result<Tensor> {
        match self {
            ChannelMix::Identity => Ok(t.clone()),
            ChannelMix::Split { carry, gain } => {
                let plane = t.shape()[1] * t.shape()[2];
                let mut out = t.clone();
                let (head, tail) = out.data_mut().split_at_mut(carried * plane);
                head.iter_mut().for_each(|v| *v *= carry);
                tail.iter_mut().for_each(|v| *v *= gain);
                Ok(out)
            }
            ChannelMix::Linear { weight, bias } => {
                let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
                if weight.ndim() != 2 || weight.shape()[1] != c || bias.len() != weight.shape()[0] {
                    return shape_err(format!(
                        "channel mix {:?} (+{} bias) for {c} input channels",
                        weight.shape(),
                        bias.len()
                    ));
                }
                let co = weight.shape()[0];
                let hw = h * w;
                let mut out = vec![0.0; co * hw];
                for o in 0..co {
                    let dst = &mut out[o * hw..(o + 1) * hw];
                    dst.iter_mut().for_each(|v| *v = bias[o]);
                    for i in 0..c {
                        let wgt = weight.data()[o * c + i];
                        if wgt != 0.0 {
                            let src = &t.data()[i * hw..(i + 1) * hw];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wgt * s;
                            }
                        }
                    }
                }
                Tensor::new(vec![co, h, w], out)
            }
        }
    }
}

/// Upsample the previous stage ×2, concatenate it in front of the backbone
/// level and mix channels.
pub fn decode_stage(prev: Option<&Tensor>, backbone: &Tensor, mix: &ChannelMix) -> Result<Tensor> {
    let carried = prev.map_or(0, |p| p.shape()[0]);
    let stacked = match prev {
        None => backbone.clone(),
        Some(p) => {
            let (h, w) = (backbone.shape()[1], backbone.shape()[2]);
            if p.ndim() != 3 || p.shape()[1] * 2 != h || p.shape()[2] * 2 != w {
                return shape_err(format!(
                    "previous stage {:?} is not half of backbone {:?}",
                    p.shape(),
                    backbone.shape()
                ));
            }
            let up = resample_bilinear(p, h, w)?;
            concat_axis(&[&up, backbone], 0)?
        }
    };
    mix.apply(&stacked, carried)
}

/// Replace the first `⌊C·fraction⌋` channels with the cached previous-frame
/// channels. Without a cache this is the identity.
pub fn temporal_shift(current: &Tensor, cached: Option<&Tensor>, fraction: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&fraction) {
        return arg_err(format!("shift fraction {fraction} outside [0, 1]"));
    }
    let cached = match cached {
        None => return Ok(current.clone()),
        Some(c) => c,
    };
    if cached.shape() != current.shape() {
        return shape_err(format!(
            "cache {:?} vs current {:?}",
            cached.shape(),
            current.shape()
        ));
    }
    let c = current.shape()[0];
    let k = (c as f64 * fraction).floor() as usize;
    if k == 0 {
        return Ok(current.clone());
    }
    let head = slice_axis(cached, 0, 0, k)?;
    let tail = slice_axis(current, 0, k, c)?;
    concat_axis(&[&head, &tail], 0)
}
