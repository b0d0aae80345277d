//! Cross-frame machinery: disparity reprojection, softmax splatting, the
//! local map, past-cost warping and the keyframe bank.

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraModel, Pose};
use crate::costvolume::{CandidateVolume, CostVolume};
use crate::error::{arg_err, shape_err, Result};
use crate::features::FeatureCache;
use crate::regression::DisparityMap;
use crate::tensor::{concat_axis, Tensor};

/// Full-resolution coordinate of the center of stage pixel `u`.
#[inline]
pub fn stage_to_full(u: f64, denom: usize) -> f64 {
    (u + 0.5) * denom as f64 - 0.5
}

#[inline]
pub fn full_to_stage(x: f64, denom: usize) -> f64 {
    (x + 0.5) / denom as f64 - 0.5
}

/// Reprojected disparities and their target pixels, in the source map's
/// stage coordinates, one entry per source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Reprojection {
    pub values: Vec<f64>,
    pub targets: Vec<(f64, f64)>,
    pub valid: Vec<bool>,
}

/// Move disparity `d` seen at pixel `(u, v)` of the keyframe camera into the
/// current camera, given `T_{j→t}`. Returns `(u', v', d')` or `None` when the
/// point lands behind the camera.
///
/// The point is kept in inverse-depth form, `q = R⁻¹m + t⁻¹·ρ` with ray
/// `m = ((u−cx)/fx, (v−cy)/fy, 1)` and `ρ = d/(b·fx)`, which is the same as
/// back-projecting, transforming and projecting but leaves the identity
/// transform exact.
pub fn reproject_point(
    cam: &CameraModel,
    inv: &Pose,
    u: f64,
    v: f64,
    d: f64,
) -> Option<(f64, f64, f64)> {
    if !(d > 0.0) || !d.is_finite() {
        return None;
    }
    let m = Vector3::new((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
    let rho = d / (cam.baseline * cam.fx);
    let q = inv.rotation() * m + inv.translation() * rho;
    if !(q.z > 0.0) {
        return None;
    }
    let u2 = u + cam.fx * (q.x / q.z - m.x);
    let v2 = v + cam.fy * (q.y / q.z - m.y);
    Some((u2, v2, d / q.z))
}

pub fn reproject_disparity(cam: &CameraModel, d: &DisparityMap, t_j_to_t: &Pose) -> Reprojection {
    let inv = t_j_to_t.inverse();
    let (h, w) = (d.height(), d.width());
    let n = h * w;
    let mut out = Reprojection {
        values: vec![0.0; n],
        targets: vec![(0.0, 0.0); n],
        valid: vec![false; n],
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !d.is_valid(i) {
                continue;
            }
            let uf = stage_to_full(x as f64, d.denom);
            let vf = stage_to_full(y as f64, d.denom);
            if let Some((u2, v2, d2)) = reproject_point(cam, &inv, uf, vf, d.values.data()[i]) {
                let (tx, ty) = if d.denom == 1 {
                    (u2, v2)
                } else {
                    (full_to_stage(u2, d.denom), full_to_stage(v2, d.denom))
                };
                out.values[i] = d2;
                out.targets[i] = (tx, ty);
                out.valid[i] = true;
            }
        }
    }
    out
}

/// Splatted channels `[C,H,W]` and coverage mask (false = hole).
#[derive(Debug, Clone, PartialEq)]
pub struct Splat {
    pub values: Tensor,
    pub mask: Vec<bool>,
}

fn bilinear_taps(tx: f64, ty: f64, h: usize, w: usize) -> impl Iterator<Item = (usize, f64)> {
    let (x0, y0) = (tx.floor(), ty.floor());
    let (fx, fy) = (tx - x0, ty - y0);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0 + 1.0, y0, fx * (1.0 - fy)),
        (x0, y0 + 1.0, (1.0 - fx) * fy),
        (x0 + 1.0, y0 + 1.0, fx * fy),
    ];
    taps.into_iter().filter_map(move |(x, y, k)| {
        let inside = x >= 0.0 && y >= 0.0 && x < w as f64 && y < h as f64;
        (inside && k > 0.0).then(|| (y as usize * w + x as usize, k))
    })
}

fn check_splat(
    values: &Tensor,
    targets: &[(f64, f64)],
    importance: &[f64],
    valid: &[bool],
) -> Result<usize> {
    if values.ndim() != 2 {
        return shape_err(format!(
            "splat values must be [C,N], got {:?}",
            values.shape()
        ));
    }
    let n = values.shape()[1];
    if targets.len() != n || importance.len() != n || valid.len() != n {
        return shape_err(format!(
            "splat of {n} sources with {} targets, {} importances, {} flags",
            targets.len(),
            importance.len(),
            valid.len()
        ));
    }
    if importance
        .iter()
        .zip(valid)
        .any(|(z, &ok)| ok && !z.is_finite())
    {
        return arg_err("importance must be finite");
    }
    Ok(n)
}

fn splat_max(importance: &[f64], valid: &[bool]) -> f64 {
    importance
        .iter()
        .zip(valid)
        .filter(|(_, &ok)| ok)
        .fold(f64::NEG_INFINITY, |m, (&z, _)| m.max(z))
}

/// Softmax splatting: every valid source adds `k·e^{Z}·v` and `k·e^{Z}` to
/// its four bilinear neighbors; the output is their ratio. Pixels that no
/// source reaches are holes.
pub fn splat_forward(
    values: &Tensor,
    targets: &[(f64, f64)],
    importance: &[f64],
    valid: &[bool],
    out_h: usize,
    out_w: usize,
) -> Result<Splat> {
    let n = check_splat(values, targets, importance, valid)?;
    let c = values.shape()[0];
    let hw = out_h * out_w;
    let zmax = splat_max(importance, valid);
    let mut num = vec![0.0; c * hw];
    let mut den = vec![0.0; hw];
    for p in 0..n {
        if !valid[p] {
            continue;
        }
        let e = (importance[p] - zmax).exp();
        let (tx, ty) = targets[p];
        for (q, k) in bilinear_taps(tx, ty, out_h, out_w) {
            let a = k * e;
            den[q] += a;
            for ch in 0..c {
                num[ch * hw + q] += a * values.data()[ch * n + p];
            }
        }
    }
    let mask: Vec<bool> = den.iter().map(|&d| d > 0.0).collect();
    for ch in 0..c {
        for q in 0..hw {
            num[ch * hw + q] = if mask[q] {
                num[ch * hw + q] / den[q]
            } else {
                0.0
            };
        }
    }
    Ok(Splat {
        values: Tensor::new(vec![c, out_h, out_w], num)?,
        mask,
    })
}

/// Vector-Jacobian product of [`splat_forward`]: gradients of `Σ g·out` with
/// respect to the source values `[C,N]` and importances `[N]`. Targets are
/// treated as constants.
pub fn splat_backward(
    values: &Tensor,
    targets: &[(f64, f64)],
    importance: &[f64],
    valid: &[bool],
    out_h: usize,
    out_w: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    let fwd = splat_forward(values, targets, importance, valid, out_h, out_w)?;
    if grad_out.shape() != fwd.values.shape() {
        return shape_err(format!(
            "output gradient {:?}, output {:?}",
            grad_out.shape(),
            fwd.values.shape()
        ));
    }
    let n = values.shape()[1];
    let c = values.shape()[0];
    let hw = out_h * out_w;
    let zmax = splat_max(importance, valid);
    let mut den = vec![0.0; hw];
    for p in 0..n {
        if valid[p] {
            let e = (importance[p] - zmax).exp();
            for (q, k) in bilinear_taps(targets[p].0, targets[p].1, out_h, out_w) {
                den[q] += k * e;
            }
        }
    }
    let mut gv = vec![0.0; c * n];
    let mut gz = vec![0.0; n];
    for p in 0..n {
        if !valid[p] {
            continue;
        }
        let e = (importance[p] - zmax).exp();
        for (q, k) in bilinear_taps(targets[p].0, targets[p].1, out_h, out_w) {
            let a = k * e / den[q];
            for ch in 0..c {
                let g = grad_out.data()[ch * hw + q];
                gv[ch * n + p] += g * a;
                gz[p] += g * a * (values.data()[ch * n + p] - fwd.values.data()[ch * hw + q]);
            }
        }
    }
    Ok((Tensor::new(vec![c, n], gv)?, gz))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MapPool {
    /// Smallest disparity in the block: the background side of an edge.
    #[default]
    Min,
    Mean,
    Median,
}

fn reduce(vals: &mut [f64], pool: MapPool) -> f64 {
    match pool {
        MapPool::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        MapPool::Mean => vals.iter().sum::<f64>() / vals.len() as f64,
        MapPool::Median => {
            vals.sort_by(f64::total_cmp);
            vals[(vals.len() - 1) / 2]
        }
    }
}

/// Reduce a full-resolution map to `denom`-sized blocks over covered pixels.
pub fn downsample_masked(
    values: &[f64],
    mask: &[bool],
    h: usize,
    w: usize,
    denom: usize,
    pool: MapPool,
) -> (Vec<f64>, Vec<bool>) {
    let (oh, ow) = (h / denom, w / denom);
    let mut out = vec![0.0; oh * ow];
    let mut ok = vec![false; oh * ow];
    let mut buf = Vec::with_capacity(denom * denom);
    for by in 0..oh {
        for bx in 0..ow {
            buf.clear();
            for y in by * denom..(by + 1) * denom {
                for x in bx * denom..(bx + 1) * denom {
                    if mask[y * w + x] {
                        buf.push(values[y * w + x]);
                    }
                }
            }
            if !buf.is_empty() {
                out[by * ow + bx] = reduce(&mut buf, pool);
                ok[by * ow + bx] = true;
            }
        }
    }
    (out, ok)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplatConfig {
    /// Splat importance is `temperature · projected disparity`.
    pub temperature: f64,
    pub pool: MapPool,
}

impl Default for SplatConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            pool: MapPool::Min,
        }
    }
}

/// Warp one full-resolution disparity map into the current frame.
pub fn warp_disparity(
    cam: &CameraModel,
    d: &DisparityMap,
    t_j_to_t: &Pose,
    temperature: f64,
) -> Result<Splat> {
    let rep = reproject_disparity(cam, d, t_j_to_t);
    let n = rep.values.len();
    let vals = Tensor::new(vec![1, n], rep.values.clone())?;
    let imp: Vec<f64> = rep.values.iter().map(|v| temperature * v).collect();
    splat_forward(&vals, &rep.targets, &imp, &rep.valid, d.height(), d.width())
}

/// Keyframe disparities warped to the current frame at the stage resolution
/// of `current`, one `[H,W]` slice per keyframe, oldest first. Holes take
/// the pixel's middle current candidate.
pub fn local_map_candidates(
    current: &CandidateVolume,
    bank: &KeyframeBank,
    cam: &CameraModel,
    current_pose: &Pose,
    cfg: &SplatConfig,
) -> Result<(Tensor, Vec<bool>)> {
    let (h, w, n) = (current.height(), current.width(), current.count());
    let m = bank.len();
    let mut out = vec![0.0; h * w * m];
    let mut covered = vec![false; h * w * m];
    for (j, kf) in bank.frames().enumerate() {
        let d = &kf.disparity;
        if d.height() != h * current.denom / d.denom || d.width() != w * current.denom / d.denom {
            return shape_err(format!(
                "keyframe map {}x{} does not match stage {}x{} at 1/{}",
                d.width(),
                d.height(),
                w,
                h,
                current.denom
            ));
        }
        let rel = Pose::relative(&kf.pose, current_pose);
        let s = warp_disparity(cam, d, &rel, cfg.temperature)?;
        let f = current.denom / d.denom;
        let (vals, ok) =
            downsample_masked(s.values.data(), &s.mask, d.height(), d.width(), f, cfg.pool);
        for p in 0..h * w {
            let idx = p * m + j;
            if ok[p] {
                out[idx] = vals[p];
                covered[idx] = true;
            } else {
                out[idx] = current.values.data()[p * n + n / 2];
            }
        }
    }
    Ok((Tensor::new(vec![h, w, m], out)?, covered))
}

/// Current candidates followed by one warped candidate per keyframe. An
/// empty bank returns the input unchanged.
pub fn build_local_map(
    current: &CandidateVolume,
    bank: &KeyframeBank,
    cam: &CameraModel,
    current_pose: &Pose,
    cfg: &SplatConfig,
) -> Result<CandidateVolume> {
    if bank.is_empty() {
        return Ok(current.clone());
    }
    let (extra, _) = local_map_candidates(current, bank, cam, current_pose, cfg)?;
    current.append(&extra)
}

/// Warped top-K candidates and costs at one stage resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct PastCosts {
    /// `[H,W,K]`.
    pub values: Tensor,
    /// `[H,W,K]`, lower is better.
    pub costs: Tensor,
    /// Per entry; false = hole.
    pub valid: Vec<bool>,
    pub denom: usize,
}

fn block_mean_masked(
    vals: &[f64],
    valid: &[bool],
    h: usize,
    w: usize,
    k: usize,
    f: usize,
) -> (Vec<f64>, Vec<bool>) {
    let (oh, ow) = (h / f, w / f);
    let mut out = vec![0.0; oh * ow * k];
    let mut ok = vec![false; oh * ow * k];
    for by in 0..oh {
        for bx in 0..ow {
            for j in 0..k {
                let (mut s, mut c) = (0.0, 0usize);
                for y in by * f..(by + 1) * f {
                    for x in bx * f..(bx + 1) * f {
                        let i = (y * w + x) * k + j;
                        if valid[i] {
                            s += vals[i];
                            c += 1;
                        }
                    }
                }
                if c > 0 {
                    out[(by * ow + bx) * k + j] = s / c as f64;
                    ok[(by * ow + bx) * k + j] = true;
                }
            }
        }
    }
    (out, ok)
}

/// Reproject each of the previous frame's K stage candidates, splat
/// `[value, cost]` with disparity importance, and average-pool by each
/// factor.
pub fn warp_past_costs(
    prev: &Keyframe,
    cam: &CameraModel,
    current_pose: &Pose,
    temperature: f64,
    factors: &[usize],
) -> Result<Vec<PastCosts>> {
    let s = prev.topk_values.shape();
    if s.len() != 3 || prev.topk_costs.shape() != s {
        return shape_err(format!(
            "top-K values {:?} and costs {:?}",
            s,
            prev.topk_costs.shape()
        ));
    }
    let (h, w, k) = (s[0], s[1], s[2]);
    let rel = Pose::relative(&prev.pose, current_pose);
    let mut vals = vec![0.0; h * w * k];
    let mut costs = vec![0.0; h * w * k];
    let mut valid = vec![false; h * w * k];
    for j in 0..k {
        let dj: Vec<f64> = (0..h * w)
            .map(|p| prev.topk_values.data()[p * k + j])
            .collect();
        let cj: Vec<f64> = (0..h * w)
            .map(|p| prev.topk_costs.data()[p * k + j])
            .collect();
        let map = DisparityMap::new(Tensor::new(vec![h, w], dj)?, prev.topk_denom)?;
        let rep = reproject_disparity(cam, &map, &rel);
        let mut src = rep.values.clone();
        src.extend_from_slice(&cj);
        let src = Tensor::new(vec![2, h * w], src)?;
        let imp: Vec<f64> = rep.values.iter().map(|v| temperature * v).collect();
        let sp = splat_forward(&src, &rep.targets, &imp, &rep.valid, h, w)?;
        for p in 0..h * w {
            let i = p * k + j;
            vals[i] = sp.values.data()[p];
            costs[i] = sp.values.data()[h * w + p];
            valid[i] = sp.mask[p];
        }
    }
    let mut out = Vec::with_capacity(factors.len());
    for &f in factors {
        if f == 0 || h % f != 0 || w % f != 0 {
            return arg_err(format!("factor {f} does not divide {h}x{w}"));
        }
        let (v, ok) = block_mean_masked(&vals, &valid, h, w, k, f);
        let (c, _) = block_mean_masked(&costs, &valid, h, w, k, f);
        out.push(PastCosts {
            values: Tensor::new(vec![h / f, w / f, k], v)?,
            costs: Tensor::new(vec![h / f, w / f, k], c)?,
            valid: ok,
            denom: prev.topk_denom * f,
        });
    }
    Ok(out)
}

/// Lift warped past costs into a volume that can be appended to `current`
/// in statistical fusion. Every channel holds `weight · (−cost)`, so the
/// handcrafted head reads back `weight · cost`. Holes get the worst warped
/// cost and the pixel's middle current candidate.
pub fn past_cost_volume(past: &PastCosts, current: &CostVolume, weight: f64) -> Result<CostVolume> {
    let cs = current.candidates.values.shape();
    let ps = past.values.shape();
    if ps[..2] != cs[..2] {
        return shape_err(format!("past costs {ps:?} vs current candidates {cs:?}"));
    }
    let (h, w, n, k) = (cs[0], cs[1], cs[2], ps[2]);
    let worst = past
        .costs
        .data()
        .iter()
        .zip(&past.valid)
        .filter(|(_, &ok)| ok)
        .fold(f64::NEG_INFINITY, |m, (&c, _)| m.max(c));
    let worst = if worst.is_finite() { worst } else { 0.0 };
    let mut cand = vec![0.0; h * w * k];
    let mut score = vec![0.0; h * w * k];
    for p in 0..h * w {
        for j in 0..k {
            let i = p * k + j;
            if past.valid[i] {
                cand[i] = past.values.data()[i];
                score[i] = -weight * past.costs.data()[i];
            } else {
                cand[i] = current.candidates.values.data()[p * n + n / 2];
                score[i] = -weight * worst;
            }
        }
    }
    let ch = current.channels();
    let mut costs = Vec::with_capacity(ch * score.len());
    for _ in 0..ch {
        costs.extend_from_slice(&score);
    }
    let cands = CandidateVolume::new(Tensor::new(vec![h, w, k], cand)?, current.candidates.denom)?;
    CostVolume::new(
        Tensor::new(vec![ch, h, w, k], costs)?,
        cands,
        current.corr_start,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    /// Full-resolution final disparity.
    pub disparity: DisparityMap,
    /// World-from-camera.
    pub pose: Pose,
    /// Last-stage top-K shifted candidates `[H,W,K]`.
    pub topk_values: Tensor,
    pub topk_costs: Tensor,
    pub topk_denom: usize,
    pub features: Option<FeatureCache>,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeBank {
    frames: VecDeque<Keyframe>,
    capacity: usize,
    t_max: f64,
    r_max_deg: f64,
}

impl KeyframeBank {
    pub fn new(capacity: usize, t_max: f64, r_max_deg: f64) -> Result<Self> {
        if capacity == 0 || !(t_max >= 0.0) || !(r_max_deg >= 0.0) {
            return arg_err(format!(
                "bank capacity {capacity}, t_max {t_max}, R_max {r_max_deg}"
            ));
        }
        Ok(Self {
            frames: VecDeque::with_capacity(capacity + 1),
            capacity,
            t_max,
            r_max_deg,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Oldest first.
    pub fn frames(&self) -> impl Iterator<Item = &Keyframe> {
        self.frames.iter()
    }

    pub fn last(&self) -> Option<&Keyframe> {
        self.frames.back()
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn exceeds_thresholds(&self, relative: &Pose) -> bool {
        relative.translation_norm() > self.t_max || relative.rotation_angle_deg() > self.r_max_deg
    }

    /// Promote `kf` if the bank is empty or `relative` (its pose with respect
    /// to the last keyframe) exceeds a threshold; evict the oldest beyond
    /// capacity. Returns whether `kf` was promoted.
    pub fn update(&mut self, kf: Keyframe, relative: &Pose) -> bool {
        if !self.frames.is_empty() && !self.exceeds_thresholds(relative) {
            return false;
        }
        self.frames.push_back(kf);
        while self.frames.len() > self.capacity {
            self.frames.pop_front();
        }
        true
    }
}

pub fn update_keyframe_bank(bank: &mut KeyframeBank, kf: Keyframe, relative: &Pose) -> bool {
    bank.update(kf, relative)
}

/// Stack several `[H,W,m]` candidate slices after `base`.
pub fn append_candidates(base: &CandidateVolume, extra: &[&Tensor]) -> Result<CandidateVolume> {
    let mut all = vec![&base.values];
    all.extend_from_slice(extra);
    CandidateVolume::new(concat_axis(&all, 2)?, base.denom)
}
