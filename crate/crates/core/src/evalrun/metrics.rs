use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::regression::DisparityMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionMetrics {
    pub epe: f64,
    /// Percent of pixels with error above 3 px.
    pub pe3: f64,
    pub pe5: f64,
    /// Percent with error above 3 px and above 5% of the ground truth.
    pub d1: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub all: RegionMetrics,
    pub occ: Option<RegionMetrics>,
    pub noc: Option<RegionMetrics>,
}

/// Per-pixel 3PE and D1 flags.
pub fn error_flags(err: f64, gt: f64) -> (bool, bool) {
    let pe3 = err > 3.0;
    (pe3, pe3 && err > 0.05 * gt.abs())
}

#[derive(Default)]
struct Acc {
    sum: f64,
    pe3: usize,
    pe5: usize,
    d1: usize,
    n: usize,
}

impl Acc {
    fn push(&mut self, err: f64, gt: f64) {
        let (p3, d1) = error_flags(err, gt);
        self.sum += err;
        self.pe3 += p3 as usize;
        self.pe5 += (err > 5.0) as usize;
        self.d1 += d1 as usize;
        self.n += 1;
    }

    fn finish(&self) -> Option<RegionMetrics> {
        (self.n > 0).then(|| {
            let n = self.n as f64;
            RegionMetrics {
                epe: self.sum / n,
                pe3: 100.0 * self.pe3 as f64 / n,
                pe5: 100.0 * self.pe5 as f64 / n,
                d1: 100.0 * self.d1 as f64 / n,
                count: self.n,
            }
        })
    }
}

/// Metrics over pixels valid in `gt`, split by the occlusion mask. Without
/// a mask every pixel counts as non-occluded.
pub fn compute_metrics(
    pred: &DisparityMap,
    gt: &DisparityMap,
    occ: Option<&[bool]>,
) -> Result<MetricsReport> {
    if pred.values.shape() != gt.values.shape() {
        return shape_err(format!(
            "prediction {:?} vs ground truth {:?}",
            pred.values.shape(),
            gt.values.shape()
        ));
    }
    if let Some(m) = occ {
        if m.len() != gt.values.len() {
            return shape_err(format!(
                "occlusion mask of {} for {} pixels",
                m.len(),
                gt.values.len()
            ));
        }
    }
    let (mut all, mut o, mut n) = (Acc::default(), Acc::default(), Acc::default());
    for i in 0..gt.values.len() {
        if !gt.is_valid(i) {
            continue;
        }
        let g = gt.values.data()[i];
        let e = (pred.values.data()[i] - g).abs();
        all.push(e, g);
        if occ.is_some_and(|m| m[i]) {
            o.push(e, g);
        } else {
            n.push(e, g);
        }
    }
    let all_m = all.finish().ok_or(Error::NoValidPixels)?;
    Ok(MetricsReport {
        all: all_m,
        occ: o.finish(),
        noc: n.finish(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn map(v: &[f64]) -> DisparityMap {
        DisparityMap::new(Tensor::new(vec![1, v.len()], v.to_vec()).unwrap(), 1).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = map(&[1.0, 5.0, 9.0]);
        let r = compute_metrics(&g, &g, Some(&[true, false, false])).unwrap();
        assert_eq!(
            r.all,
            RegionMetrics {
                epe: 0.0,
                pe3: 0.0,
                pe5: 0.0,
                d1: 0.0,
                count: 3
            }
        );
        assert_eq!(r.occ.unwrap().count + r.noc.unwrap().count, 3);
    }

    #[test]
    fn d1_rule() {
        assert_eq!(error_flags(3.1, 10.0), (true, true));
        assert_eq!(error_flags(3.1, 100.0), (true, false));
        let r = compute_metrics(&map(&[13.1, 103.1]), &map(&[10.0, 100.0]), None).unwrap();
        assert_eq!(r.all.pe3, 100.0);
        assert_eq!(r.all.d1, 50.0);
        assert!(r.occ.is_none());
    }

    #[test]
    fn no_valid_pixels() {
        let g = DisparityMap::with_mask(Tensor::zeros(&[1, 2]), 1, vec![false, false]).unwrap();
        assert!(matches!(
            compute_metrics(&g, &g, None),
            Err(Error::NoValidPixels)
        ));
    }
}
