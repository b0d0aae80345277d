//! Randomized central-difference checks of every analytic gradient.
//!
//! Each case draws its inputs from a seeded generator and redraws any
//! coordinate that lands within `KINK_MARGIN` of a non-smooth point: a
//! top-K tie, `|x| = 1` for the Huber term, a zero residual for the offset
//! loss. Splat targets are constants, so the splat has no kinks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::losses::{
    finite_difference_check, huber_loss_total, wasserstein_offset_loss, HuberInputs, LossConfig,
    WassersteinStage,
};
use crate::regression::{topk_pixel, topk_pixel_grad};
use crate::temporal::{splat_backward, splat_forward};
use crate::tensor::Tensor;

pub const KINK_MARGIN: f64 = 1e-2;

/// Worst relative error per gradient family.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradReport {
    pub regression: f64,
    pub splat: f64,
    pub huber: f64,
    pub wasserstein: f64,
}

impl GradReport {
    pub fn worst(&self) -> f64 {
        self.regression
            .max(self.splat)
            .max(self.huber)
            .max(self.wasserstein)
    }

    pub fn entries(&self) -> [(&'static str, f64); 4] {
        [
            ("regression", self.regression),
            ("splat", self.splat),
            ("huber", self.huber),
            ("wasserstein", self.wasserstein),
        ]
    }
}

fn uniform(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Top-K regression of one pixel with respect to its costs and offsets.
pub fn regression_case(seed: u64, step: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let n = r.random_range(2..8usize);
    let k = r.random_range(1..=n);
    let cost = loop {
        let cost = uniform(&mut r, n, -2.0, 2.0);
        let mut sorted = cost.clone();
        sorted.sort_by(f64::total_cmp);
        if k == n || sorted[k] - sorted[k - 1] > KINK_MARGIN {
            break cost;
        }
    };
    let off = uniform(&mut r, n, -0.5, 0.5);
    let cands = uniform(&mut r, n, 0.0, 40.0);
    let shifted: Vec<f64> = cands.iter().zip(&off).map(|(c, o)| c + o).collect();
    let (_, dc, doff) = topk_pixel_grad(&cost, &shifted, k);
    let x = [cost, off].concat();
    let g = [dc, doff].concat();
    let f = |x: &[f64]| {
        let s: Vec<f64> = (0..n).map(|i| cands[i] + x[n + i]).collect();
        Ok(topk_pixel(&x[..n], &s, k).value)
    };
    finite_difference_check(f, &x, &g, step)
}

/// `Σ g·splat(v, Z)` with respect to the values and importances.
pub fn splat_case(seed: u64, step: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (c, n, h, w) = (r.random_range(1..3usize), r.random_range(3..12usize), 4, 5);
    let vals = uniform(&mut r, c * n, -3.0, 3.0);
    let imp = uniform(&mut r, n, -2.0, 2.0);
    let targets: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            (
                r.random_range(-0.5..w as f64),
                r.random_range(-0.5..h as f64),
            )
        })
        .collect();
    let valid: Vec<bool> = (0..n).map(|_| r.random_bool(0.85)).collect();
    let gout = Tensor::new(vec![c, h, w], uniform(&mut r, c * h * w, -1.0, 1.0))?;
    let values = Tensor::new(vec![c, n], vals.clone())?;
    let (gv, gz) = splat_backward(&values, &targets, &imp, &valid, h, w, &gout)?;
    let x = [vals, imp].concat();
    let g = [gv.into_data(), gz].concat();
    let f = |x: &[f64]| {
        let v = Tensor::new(vec![c, n], x[..c * n].to_vec())?;
        let s = splat_forward(&v, &targets, &x[c * n..], &valid, h, w)?;
        Ok(s.values
            .data()
            .iter()
            .zip(gout.data())
            .map(|(a, b)| a * b)
            .sum())
    };
    finite_difference_check(f, &x, &g, step)
}

/// Multi-scale smooth-L1 loss with respect to all four predictions.
pub fn huber_case(seed: u64, step: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let m = r.random_range(3..20usize);
    let gt = uniform(&mut r, m, 0.0, 50.0);
    let mut mask: Vec<bool> = (0..m).map(|_| r.random_bool(0.8)).collect();
    mask[0] = true;
    let mut x = Vec::with_capacity(4 * m);
    for _ in 0..4 {
        for &g in &gt {
            let e = loop {
                let e: f64 = r.random_range(-3.0..3.0);
                if (e.abs() - 1.0).abs() > KINK_MARGIN {
                    break e;
                }
            };
            x.push(g + e);
        }
    }
    let cfg = LossConfig::default();
    let eval = |x: &[f64]| {
        let p = HuberInputs {
            d1_up: &x[..m],
            d2_up: &x[m..2 * m],
            d3: &x[2 * m..3 * m],
            d3_up: &x[3 * m..],
        };
        huber_loss_total(&p, &gt, &mask, &cfg)
    };
    let g = eval(&x)?.grads.concat();
    finite_difference_check(|x| Ok(eval(x)?.loss), &x, &g, step)
}

/// Offset loss of one stage with respect to offsets and costs.
pub fn wasserstein_case(seed: u64, step: f64) -> Result<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, n) = (2, 3, r.random_range(2..6usize));
    let hw = h * w;
    let gt = uniform(&mut r, hw, 5.0, 30.0);
    let mut mask: Vec<bool> = (0..hw).map(|_| r.random_bool(0.8)).collect();
    mask[0] = true;
    let cands = uniform(&mut r, hw * n, 0.0, 40.0);
    let off: Vec<f64> = (0..hw * n)
        .map(|i| loop {
            let o: f64 = r.random_range(-1.0..1.0);
            if (cands[i] + o - gt[i / n]).abs() > KINK_MARGIN {
                break o;
            }
        })
        .collect();
    let cost = uniform(&mut r, hw * n, -2.0, 2.0);
    let shape = vec![h, w, n];
    let ct = Tensor::new(shape.clone(), cands)?;
    let alpha = LossConfig::default().alpha;
    let eval = |x: &[f64]| {
        let o = Tensor::new(shape.clone(), x[..hw * n].to_vec())?;
        let c = Tensor::new(shape.clone(), x[hw * n..].to_vec())?;
        let st = WassersteinStage {
            candidates: &ct,
            offsets: &o,
            cost: &c,
            gt: &gt,
            mask: &mask,
            lambda: 0.7,
        };
        wasserstein_offset_loss(&[st], alpha)
    };
    let x = [off, cost].concat();
    let wg = eval(&x)?;
    let g = [wg.d_offsets[0].data(), wg.d_costs[0].data()].concat();
    finite_difference_check(|x| Ok(eval(x)?.loss), &x, &g, step)
}

/// Worst error of each family over `seeds`.
pub fn gradient_suite(seeds: std::ops::Range<u64>, step: f64) -> Result<GradReport> {
    let mut rep = GradReport::default();
    for s in seeds {
        rep.regression = rep.regression.max(regression_case(s, step)?);
        rep.splat = rep.splat.max(splat_case(s, step)?);
        rep.huber = rep.huber.max(huber_case(s, step)?);
        rep.wasserstein = rep.wasserstein.max(wasserstein_case(s, step)?);
    }
    Ok(rep)
}
