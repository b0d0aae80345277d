//! Sparse per-stage cost volumes.
//!
//! Disparities are stored in full-resolution pixels. A stage with
//! denominator `s` samples the right features at `u − d/s`.

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{concat_axis, resample_axes, Tensor};

/// Correlation levels: features are downsampled by each factor before the
/// group-wise inner products.
pub const GWC_LEVELS: [usize; 3] = [1, 2, 4];

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateVolume {
    /// `[H,W,n]`, full-resolution pixels.
    pub values: Tensor,
    /// Stage denominator (4, 8 or 16).
    pub denom: usize,
}

impl CandidateVolume {
    pub fn new(values: Tensor, denom: usize) -> Result<Self> {
        if values.ndim() != 3 || values.shape()[2] == 0 {
            return shape_err(format!(
                "candidates must be [H,W,n>0], got {:?}",
                values.shape()
            ));
        }
        if denom == 0 {
            return arg_err("stage denominator must be positive");
        }
        Ok(Self { values, denom })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn count(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        let n = self.count();
        let o = (y * self.width() + x) * n;
        &self.values.data()[o..o + n]
    }

    /// Append candidates `[H,W,m]` after the current ones.
    pub fn append(&self, extra: &Tensor) -> Result<Self> {
        Self::new(concat_axis(&[&self.values, extra], 2)?, self.denom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    /// `[Ch,H,W,n]`.
    pub costs: Tensor,
    pub candidates: CandidateVolume,
    /// Channels from `corr_start` on are correlation channels.
    pub corr_start: usize,
}

impl CostVolume {
    pub fn new(costs: Tensor, candidates: CandidateVolume, corr_start: usize) -> Result<Self> {
        let s = costs.shape();
        let c = candidates.values.shape();
        if s.len() != 4 || s[1..] != c[..] {
            return shape_err(format!("cost volume {s:?} does not match candidates {c:?}"));
        }
        if corr_start > s[0] {
            return shape_err(format!(
                "correlation start {corr_start} beyond {} channels",
                s[0]
            ));
        }
        Ok(Self {
            costs,
            candidates,
            corr_start,
        })
    }

    pub fn channels(&self) -> usize {
        self.costs.shape()[0]
    }

    pub fn corr_channels(&self) -> usize {
        self.channels() - self.corr_start
    }
}

/// Horizontal linear interpolation of row `y` of channel `c` at `x`, zero
/// outside the image.
#[inline]
pub fn sample_row(f: &Tensor, c: usize, y: usize, x: f64) -> f64 {
    let (h, w) = (f.shape()[1], f.shape()[2]);
    let row = &f.data()[(c * h + y) * w..(c * h + y + 1) * w];
    let x0 = x.floor();
    let t = x - x0;
    let i0 = x0 as isize;
    let at = |i: isize| {
        if i >= 0 && (i as usize) < w {
            row[i as usize]
        } else {
            0.0
        }
    };
    let a = at(i0);
    if t == 0.0 {
        a
    } else {
        (1.0 - t) * a + t * at(i0 + 1)
    }
}

fn check_features(fl: &Tensor, fr: &Tensor, cands: &CandidateVolume) -> Result<()> {
    if fl.ndim() != 3 || fl.shape() != fr.shape() {
        return shape_err(format!("features {:?} vs {:?}", fl.shape(), fr.shape()));
    }
    if fl.shape()[1] != cands.height() || fl.shape()[2] != cands.width() {
        return shape_err(format!(
            "features {:?} vs candidates {:?}",
            fl.shape(),
            cands.values.shape()
        ));
    }
    Ok(())
}

/// Left features next to right features sampled at each candidate.
pub fn concat_cost(fl: &Tensor, fr: &Tensor, cands: &CandidateVolume) -> Result<CostVolume> {
    check_features(fl, fr, cands)?;
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    let n = cands.count();
    let scale = 1.0 / cands.denom as f64;
    let mut out = vec![0.0; 2 * c * h * w * n];
    let plane = h * w * n;
    for y in 0..h {
        for x in 0..w {
            let ds = cands.pixel(y, x);
            for ch in 0..c {
                let left = fl.data()[(ch * h + y) * w + x];
                for (k, &d) in ds.iter().enumerate() {
                    let idx = (y * w + x) * n + k;
                    out[ch * plane + idx] = left;
                    out[(c + ch) * plane + idx] = sample_row(fr, ch, y, x as f64 - d * scale);
                }
            }
        }
    }
    let costs = Tensor::new(vec![2 * c, h, w, n], out)?;
    CostVolume::new(costs, cands.clone(), 2 * c)
}

/// Non-overlapping block mean over the two spatial axes starting at `ay`;
/// partial blocks at the border average what they contain.
pub(crate) fn block_mean(t: &Tensor, ay: usize, f: usize) -> Tensor {
    if f == 1 {
        return t.clone();
    }
    let s = t.shape();
    let (h, w) = (s[ay], s[ay + 1]);
    let (oh, ow) = (h.div_ceil(f), w.div_ceil(f));
    let outer: usize = s[..ay].iter().product();
    let inner: usize = s[ay + 2..].iter().product();
    let mut out = vec![0.0; outer * oh * ow * inner];
    for o in 0..outer {
        for by in 0..oh {
            for bx in 0..ow {
                let (y0, y1) = (by * f, ((by + 1) * f).min(h));
                let (x0, x1) = (bx * f, ((bx + 1) * f).min(w));
                let cnt = ((y1 - y0) * (x1 - x0)) as f64;
                let dst = ((o * oh + by) * ow + bx) * inner;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let src = ((o * h + y) * w + x) * inner;
                        for k in 0..inner {
                            out[dst + k] += t.data()[src + k];
                        }
                    }
                }
                for k in 0..inner {
                    out[dst + k] /= cnt;
                }
            }
        }
    }
    let mut shape = s.to_vec();
    shape[ay] = oh;
    shape[ay + 1] = ow;
    Tensor::new(shape, out).expect("consistent shape")
}

/// Group-wise correlation: channel groups of size `C/G`, each cost is the
/// mean product within the group.
fn groupwise(fl: &Tensor, fr: &Tensor, cands: &Tensor, scale: f64, groups: usize) -> Tensor {
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    let n = cands.shape()[2];
    let cg = c / groups;
    let mut out = vec![0.0; groups * h * w * n];
    let plane = h * w * n;
    for y in 0..h {
        for x in 0..w {
            let base = (y * w + x) * n;
            for k in 0..n {
                let u = x as f64 - cands.data()[base + k] * scale;
                for g in 0..groups {
                    let mut s = 0.0;
                    for ch in g * cg..(g + 1) * cg {
                        s += fl.data()[(ch * h + y) * w + x] * sample_row(fr, ch, y, u);
                    }
                    out[g * plane + base + k] = s / cg as f64;
                }
            }
        }
    }
    Tensor::new(vec![groups, h, w, n], out).expect("consistent shape")
}

/// Correlation at pyramid factors 1, 2 and 4 of the stage features,
/// upsampled back to stage resolution and stacked level by level.
pub fn groupwise_multilevel_cost(
    fl: &Tensor,
    fr: &Tensor,
    cands: &CandidateVolume,
    groups: [usize; 3],
) -> Result<CostVolume> {
    check_features(fl, fr, cands)?;
    let (c, h, w) = (fl.shape()[0], fl.shape()[1], fl.shape()[2]);
    let mut parts = Vec::with_capacity(3);
    for (&lv, &g) in GWC_LEVELS.iter().zip(&groups) {
        if g == 0 || c % g != 0 {
            return arg_err(format!("{c} channels not divisible into {g} groups"));
        }
        let fll = block_mean(fl, 1, lv);
        let frl = block_mean(fr, 1, lv);
        let cl = block_mean(&cands.values, 0, lv);
        let scale = 1.0 / (cands.denom * lv) as f64;
        let cost = groupwise(&fll, &frl, &cl, scale, g);
        parts.push(resample_axes(&cost, 1, h, w)?);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    CostVolume::new(concat_axis(&refs, 0)?, cands.clone(), 0)
}

/// Concat part first, correlation part after.
pub fn assemble_cost(concat: &CostVolume, gwc: &CostVolume) -> Result<CostVolume> {
    if concat.candidates != gwc.candidates {
        return shape_err("cost volumes were built from different candidates");
    }
    let costs = concat_axis(&[&concat.costs, &gwc.costs], 0)?;
    let corr_start = concat.channels() + gwc.corr_start;
    CostVolume::new(costs, concat.candidates.clone(), corr_start)
}

/// Default group count per level: one group per 8 channels.
pub fn default_groups(channels: usize) -> [usize; 3] {
    let g = (channels / 8).max(1);
    [g; 3]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cands(h: usize, w: usize, vals: &[f64], denom: usize) -> CandidateVolume {
        let data = (0..h * w).flat_map(|_| vals.iter().copied()).collect();
        CandidateVolume::new(Tensor::new(vec![h, w, vals.len()], data).unwrap(), denom).unwrap()
    }

    #[test]
    fn concat_cost_examples() {
        let fl = Tensor::new(vec![1, 1, 4], vec![9.0, 9.0, 9.0, 9.0]).unwrap();
        let fr = Tensor::new(vec![1, 1, 4], vec![2.0, 4.0, 6.0, 8.0]).unwrap();
        // denominator 4: full-res 4 px = 1 stage px; 2 px = half a stage px
        let cv = concat_cost(&fl, &fr, &cands(1, 4, &[4.0, 2.0, 8.0], 4)).unwrap();
        assert_eq!(cv.costs.shape(), &[2, 1, 4, 3]);
        assert_eq!(cv.costs.get(&[0, 0, 3, 0]), 9.0);
        assert_eq!(cv.costs.get(&[1, 0, 3, 0]), 6.0);
        assert_eq!(cv.costs.get(&[1, 0, 2, 1]), 5.0);
        assert_eq!(cv.costs.get(&[1, 0, 1, 1]), 3.0);
        // u − d/4 = 0 − 2 falls left of the image
        assert_eq!(cv.costs.get(&[1, 0, 0, 2]), 0.0);
        assert_eq!(cv.corr_channels(), 0);
    }

    #[test]
    fn groupwise_examples() {
        let l = [1.0, 0.0, 1.0, 0.0];
        let r = [1.0, 0.0, 0.0, 1.0];
        let fl = Tensor::new(vec![4, 1, 1], l.to_vec()).unwrap();
        let fr = Tensor::new(vec![4, 1, 1], r.to_vec()).unwrap();
        let c = cands(1, 1, &[0.0], 4);
        let cv = groupwise_multilevel_cost(&fl, &fr, &c, [2, 2, 2]).unwrap();
        assert_eq!(cv.costs.shape(), &[6, 1, 1, 1]);
        assert_eq!(&cv.costs.data()[..2], &[0.5, 0.0]);
        let cv = groupwise_multilevel_cost(&fl, &fl, &c, [2, 2, 2]).unwrap();
        assert_eq!(&cv.costs.data()[..2], &[0.5, 0.5]);
        assert!(groupwise_multilevel_cost(&fl, &fr, &c, [3, 2, 2]).is_err());
    }

    #[test]
    fn assemble_orders_concat_first() {
        let fl = Tensor::new(vec![8, 2, 4], (0..64).map(|v| (v % 5) as f64).collect()).unwrap();
        let fr = fl.scale(0.5);
        let c = cands(2, 4, &[0.0, 4.0], 4);
        let a = concat_cost(&fl, &fr, &c).unwrap();
        let g = groupwise_multilevel_cost(&fl, &fr, &c, [1, 2, 4]).unwrap();
        let all = assemble_cost(&a, &g).unwrap();
        assert_eq!(all.channels(), 16 + 7);
        assert_eq!(all.corr_start, 16);
        let back = crate::tensor::slice_axis(&all.costs, 0, 16, 23).unwrap();
        assert_eq!(back, g.costs);
        let empty = CostVolume::new(Tensor::zeros(&[0, 2, 4, 2]), c.clone(), 0).unwrap();
        assert_eq!(assemble_cost(&empty, &g).unwrap().costs, g.costs);
        assert_eq!(assemble_cost(&a, &empty).unwrap().costs, a.costs);
    }

    #[test]
    fn block_mean_partial_blocks() {
        let t = Tensor::new(vec![1, 1, 3], vec![1.0, 3.0, 5.0]).unwrap();
        let m = block_mean(&t, 1, 2);
        assert_eq!(m.data(), &[2.0, 5.0]);
    }
}
