//! Dense row-major `f64` arrays and the few primitives the pipeline needs:
//! corner-aligned bilinear resampling, truncated-window pooling and
//! concatenation along an axis.

use crate::error::{arg_err, shape_err, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.shape.len()];
        for i in (0..self.shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.shape[i + 1];
        }
        s
    }

    fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut off = 0;
        for (i, &k) in idx.iter().enumerate() {
            debug_assert!(k < self.shape[i]);
            off = off * self.shape[i] + k;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|v| a * v)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(format!("{:?} vs {:?}", self.shape, other.shape));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        let d = self.zip_with(other, |a, b| (a - b).abs())?;
        Ok(d.data.iter().fold(0.0, |m, &v| m.max(v)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn interp_coords(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            let src = if n_out == 1 || n_in == 1 {
                0.0
            } else {
                i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
            };
            let i0 = (src.floor() as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Corner-aligned bilinear resampling of two adjacent axes `ay` and `ay + 1`
/// of any tensor. Used for feature maps, cost volumes and disparity maps.
pub(crate) fn resample_axes(t: &Tensor, ay: usize, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = t.shape();
    if ay + 1 >= shape.len() {
        return arg_err(format!(
            "spatial axes {ay},{} out of range for {shape:?}",
            ay + 1
        ));
    }
    if shape.iter().any(|&s| s == 0) {
        return arg_err(format!("zero-sized axis in {shape:?}"));
    }
    if out_h == 0 || out_w == 0 {
        return arg_err("output size must be at least 1x1");
    }
    let (h, w) = (shape[ay], shape[ay + 1]);
    if h == out_h && w == out_w {
        return Ok(t.clone());
    }
    let outer: usize = shape[..ay].iter().product();
    let inner: usize = shape[ay + 2..].iter().product();
    let ys = interp_coords(h, out_h);
    let xs = interp_coords(w, out_w);
    let mut out_shape = shape.to_vec();
    out_shape[ay] = out_h;
    out_shape[ay + 1] = out_w;
    let mut out = vec![0.0; outer * out_h * out_w * inner];
    let src = t.data();
    for o in 0..outer {
        let base = o * h * w * inner;
        let obase = o * out_h * out_w * inner;
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let dst = obase + (oy * out_w + ox) * inner;
                let a = base + (y0 * w + x0) * inner;
                let b = base + (y0 * w + x1) * inner;
                let c = base + (y1 * w + x0) * inner;
                let d = base + (y1 * w + x1) * inner;
                for k in 0..inner {
                    let top = (1.0 - fx) * src[a + k] + fx * src[b + k];
                    let bot = (1.0 - fx) * src[c + k] + fx * src[d + k];
                    out[dst + k] = (1.0 - fy) * top + fy * bot;
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Resample a `[C,H,W]` (or `[H,W]`) tensor to `out_h × out_w`.
///
/// Output sample `i` reads the input at `i·(in−1)/(out−1)`, so the corner
/// pixels of input and output coincide.
pub fn resample_bilinear(t: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    match t.ndim() {
        2 | 3 => resample_axes(t, t.ndim() - 2, out_h, out_w),
        n => shape_err(format!(
            "resample_bilinear expects [C,H,W] or [H,W], got {n} axes"
        )),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Avg,
    Max,
}

fn pool_axis(t: &Tensor, axis: usize, k: usize, kind: PoolKind) -> Tensor {
    let shape = t.shape();
    let n = shape[axis];
    let r = k / 2;
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let src = t.data();
    let mut out = vec![0.0; src.len()];
    for o in 0..outer {
        for i in 0..n {
            let lo = i.saturating_sub(r);
            let hi = (i + r + 1).min(n);
            for j in 0..inner {
                let at = |q: usize| src[(o * n + q) * inner + j];
                let v = match kind {
                    PoolKind::Avg => (lo..hi).map(at).sum::<f64>() / (hi - lo) as f64,
                    PoolKind::Max => (lo..hi).map(at).fold(f64::NEG_INFINITY, f64::max),
                };
                out[(o * n + i) * inner + j] = v;
            }
        }
    }
    Tensor {
        shape: shape.to_vec(),
        data: out,
    }
}

/// Centered pooling with one odd kernel extent per axis. Windows are cut at
/// the borders instead of padded, so averages only see real values.
pub fn pool(t: &Tensor, kind: PoolKind, kernel: &[usize]) -> Result<Tensor> {
    if kernel.len() != t.ndim() {
        return shape_err(format!(
            "kernel {kernel:?} for tensor of shape {:?}",
            t.shape()
        ));
    }
    if let Some(k) = kernel.iter().find(|&&k| k % 2 == 0) {
        return arg_err(format!("pooling kernel extents must be odd, got {k}"));
    }
    let mut out = t.clone();
    for (axis, &k) in kernel.iter().enumerate() {
        if k > 1 && t.shape()[axis] > 1 {
            out = pool_axis(&out, axis, k, kind);
        }
    }
    Ok(out)
}

pub fn concat_axis(ts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = match ts.first() {
        Some(t) => *t,
        None => return arg_err("concat_axis needs at least one tensor"),
    };
    let nd = first.ndim();
    if axis >= nd {
        return arg_err(format!("axis {axis} out of range for {nd} axes"));
    }
    for t in ts {
        let ok = t.ndim() == nd && (0..nd).all(|i| i == axis || t.shape()[i] == first.shape()[i]);
        if !ok {
            return shape_err(format!(
                "cannot concat {:?} with {:?} on axis {axis}",
                first.shape(),
                t.shape()
            ));
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total: usize = ts.iter().map(|t| t.shape()[axis]).sum();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for t in ts {
            let chunk = t.shape()[axis] * inner;
            data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, data)
}

/// Half-open slice `[start, end)` along `axis`.
pub fn slice_axis(t: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    if axis >= t.ndim() || start > end || end > t.shape()[axis] {
        return arg_err(format!(
            "slice {start}..{end} on axis {axis} of {:?}",
            t.shape()
        ));
    }
    let n = t.shape()[axis];
    let outer: usize = t.shape()[..axis].iter().product();
    let inner: usize = t.shape()[axis + 1..].iter().product();
    let mut data = Vec::with_capacity(outer * (end - start) * inner);
    for o in 0..outer {
        data.extend_from_slice(&t.data()[(o * n + start) * inner..(o * n + end) * inner]);
    }
    let mut shape = t.shape().to_vec();
    shape[axis] = end - start;
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_center_of_2x2() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let r = resample_bilinear(&t, 3, 3).unwrap();
        assert_eq!(r.get(&[0, 1, 1]), 2.5);
        assert_eq!(r.get(&[0, 0, 0]), 1.0);
        assert_eq!(r.get(&[0, 2, 2]), 4.0);
        assert_eq!(r.get(&[0, 0, 1]), 1.5);
    }

    #[test]
    fn bilinear_same_size_and_constant() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(|v| v as f64 * 0.3).collect()).unwrap();
        assert_eq!(resample_bilinear(&t, 2, 3).unwrap(), t);
        let c = Tensor::full(&[1, 3, 5], 7.25);
        let r = resample_bilinear(&c, 11, 2).unwrap();
        assert!(r.data().iter().all(|&v| (v - 7.25).abs() < 1e-15));
        let r = resample_bilinear(&c, 1, 1).unwrap();
        assert_eq!(r.data(), &[7.25]);
    }

    #[test]
    fn bilinear_rejects_zero_axis() {
        let t = Tensor::zeros(&[1, 0, 3]);
        assert!(resample_bilinear(&t, 2, 2).is_err());
        let t = Tensor::zeros(&[1, 2, 3]);
        assert!(resample_bilinear(&t, 0, 2).is_err());
    }

    #[test]
    fn pool_examples() {
        let t = Tensor::new(vec![3], vec![1.0, 5.0, 2.0]).unwrap();
        assert_eq!(pool(&t, PoolKind::Max, &[3]).unwrap().get(&[1]), 5.0);
        let t = Tensor::new(vec![3], vec![1.0, 5.0, 3.0]).unwrap();
        let a = pool(&t, PoolKind::Avg, &[3]).unwrap();
        assert_eq!(a.get(&[1]), 3.0);
        // truncated windows at the borders
        assert_eq!(a.get(&[0]), 3.0);
        assert_eq!(a.get(&[2]), 4.0);
        let c = Tensor::full(&[2, 4, 4], -1.5);
        for kind in [PoolKind::Avg, PoolKind::Max] {
            assert_eq!(pool(&c, kind, &[1, 5, 3]).unwrap(), c);
        }
    }

    #[test]
    fn pool_rejects_even_kernel() {
        let t = Tensor::zeros(&[4, 4]);
        assert!(pool(&t, PoolKind::Avg, &[2, 3]).is_err());
        assert!(pool(&t, PoolKind::Avg, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![5.0, 6.0, 7.0, 8.0, 9.0, 10.0]).unwrap();
        let c = concat_axis(&[&a, &b], 0).unwrap();
        assert_eq!(c.shape(), &[5, 2]);
        assert_eq!(slice_axis(&c, 0, 0, 2).unwrap(), a);
        assert_eq!(slice_axis(&c, 0, 2, 5).unwrap(), b);
        assert_eq!(concat_axis(&[&a], 0).unwrap(), a);
        let d = concat_axis(&[&a, &a], 1).unwrap();
        assert_eq!(d.data(), &[1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0]);
        assert!(concat_axis(&[&a, &b], 1).is_err());
    }
}
