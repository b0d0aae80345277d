//! Training objectives with analytic gradients, and a central-difference
//! checker for them.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// λ0 weighs the last-stage map upsampled bilinearly; λ1..λ3 weigh the
    /// upsampled outputs of stages 1..3.
    pub lambda: [f64; 4],
    pub lambda_final: f64,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: [1.0, 0.5, 0.7, 2.0],
            lambda_final: 2.0,
            alpha: 0.25,
        }
    }
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * x * x
    } else {
        x.abs() - 0.5
    }
}

pub fn smooth_l1_grad(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x
    } else {
        x.signum()
    }
}

/// Full-resolution predictions entering the Huber term.
#[derive(Debug, Clone, Copy)]
pub struct HuberInputs<'a> {
    pub d1_up: &'a [f64],
    pub d2_up: &'a [f64],
    /// Last-stage map, bilinearly upsampled.
    pub d3: &'a [f64],
    /// Last-stage map after superpixel upsampling.
    pub d3_up: &'a [f64],
}

/// Loss value and one gradient per input, in the order of [`HuberInputs`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

fn valid_count(mask: &[bool]) -> Result<usize> {
    match mask.iter().filter(|&&m| m).count() {
        0 => Err(Error::NoValidPixels),
        n => Ok(n),
    }
}

pub fn huber_loss_total(
    p: &HuberInputs,
    gt: &[f64],
    mask: &[bool],
    cfg: &LossConfig,
) -> Result<LossGrad> {
    let terms = [
        (p.d1_up, cfg.lambda[1]),
        (p.d2_up, cfg.lambda[2]),
        (p.d3, cfg.lambda[0]),
        (p.d3_up, cfg.lambda[3]),
    ];
    if terms.iter().any(|(t, _)| t.len() != gt.len()) || mask.len() != gt.len() {
        return shape_err("predictions, ground truth and mask must have equal length");
    }
    let n = valid_count(mask)? as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(4);
    for (pred, lam) in terms {
        let mut g = vec![0.0; gt.len()];
        for i in 0..gt.len() {
            if mask[i] {
                let x = pred[i] - gt[i];
                loss += lam * smooth_l1(x) / n;
                g[i] = lam * smooth_l1_grad(x) / n;
            }
        }
        grads.push(g);
    }
    Ok(LossGrad { loss, grads })
}

/// One stage of the offset loss: candidates, offsets and final costs
/// `[H,W,n]`, ground truth downsampled to `[H,W]` with its mask.
#[derive(Debug, Clone, Copy)]
pub struct WassersteinStage<'a> {
    pub candidates: &'a Tensor,
    pub offsets: &'a Tensor,
    pub cost: &'a Tensor,
    pub gt: &'a [f64],
    pub mask: &'a [bool],
    pub lambda: f64,
}

/// Per stage: gradient with respect to offsets and to costs.
#[derive(Debug, Clone, PartialEq)]
pub struct WassersteinGrad {
    pub loss: f64,
    pub d_offsets: Vec<Tensor>,
    pub d_costs: Vec<Tensor>,
}

/// `Σ_s (λ_s/N_s) Σ_p Σ_d |d + o_d − gt|·(σ(−c)_d + α)`, with the softmax
/// over all candidates of a pixel and `N_s` valid pixels at stage `s`.
pub fn wasserstein_offset_loss(stages: &[WassersteinStage], alpha: f64) -> Result<WassersteinGrad> {
    let mut out = WassersteinGrad {
        loss: 0.0,
        d_offsets: Vec::new(),
        d_costs: Vec::new(),
    };
    for st in stages {
        let s = st.candidates.shape();
        if s.len() != 3 || st.offsets.shape() != s || st.cost.shape() != s {
            return shape_err("candidates, offsets and costs must share one [H,W,n] shape");
        }
        let (hw, n) = (s[0] * s[1], s[2]);
        if st.gt.len() != hw || st.mask.len() != hw {
            return shape_err(format!("ground truth of {} for {hw} pixels", st.gt.len()));
        }
        let scale = st.lambda / valid_count(st.mask)? as f64;
        let mut go = vec![0.0; hw * n];
        let mut gc = vec![0.0; hw * n];
        let mut sigma = vec![0.0; n];
        let mut a = vec![0.0; n];
        for p in 0..hw {
            if !st.mask[p] {
                continue;
            }
            let c = &st.cost.data()[p * n..(p + 1) * n];
            let best = c.iter().copied().fold(f64::INFINITY, f64::min);
            for i in 0..n {
                sigma[i] = (best - c[i]).exp();
            }
            let z: f64 = sigma.iter().sum();
            sigma.iter_mut().for_each(|v| *v /= z);
            let mut abar = 0.0;
            for i in 0..n {
                let r = st.candidates.data()[p * n + i] + st.offsets.data()[p * n + i] - st.gt[p];
                a[i] = r.abs();
                abar += sigma[i] * a[i];
                out.loss += scale * a[i] * (sigma[i] + alpha);
                go[p * n + i] = scale * r.signum() * (sigma[i] + alpha);
            }
            for i in 0..n {
                gc[p * n + i] = -scale * sigma[i] * (a[i] - abar);
            }
        }
        out.d_offsets.push(Tensor::new(s.to_vec(), go)?);
        out.d_costs.push(Tensor::new(s.to_vec(), gc)?);
    }
    Ok(out)
}

pub fn total_loss(huber: f64, wasserstein: f64, cfg: &LossConfig) -> f64 {
    huber + cfg.lambda_final * wasserstein
}

/// Average-pool a full-resolution ground truth into `denom`-sized blocks,
/// counting only valid pixels. Blocks without valid pixels are masked out.
pub fn downsample_gt(
    gt: &[f64],
    mask: &[bool],
    h: usize,
    w: usize,
    denom: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if gt.len() != h * w || mask.len() != h * w {
        return shape_err(format!("ground truth of {} for {w}x{h}", gt.len()));
    }
    if denom == 0 || h % denom != 0 || w % denom != 0 {
        return arg_err(format!("{w}x{h} not divisible by {denom}"));
    }
    let (oh, ow) = (h / denom, w / denom);
    let mut out = vec![0.0; oh * ow];
    let mut ok = vec![false; oh * ow];
    for by in 0..oh {
        for bx in 0..ow {
            let (mut s, mut c) = (0.0, 0usize);
            for y in by * denom..(by + 1) * denom {
                for x in bx * denom..(bx + 1) * denom {
                    if mask[y * w + x] {
                        s += gt[y * w + x];
                        c += 1;
                    }
                }
            }
            if c > 0 {
                out[by * ow + bx] = s / c as f64;
                ok[by * ow + bx] = true;
            }
        }
    }
    Ok((out, ok))
}

/// Relative error between `analytic` and central differences of `f` at
/// `x`, measured over the whole gradient: `max|a − n| / max(max|a|, max|n|)`.
/// Returns 0 when both gradients vanish.
pub fn finite_difference_check<F>(f: F, x: &[f64], analytic: &[f64], step: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if !(step > 0.0) {
        return arg_err(format!("step must be positive, got {step}"));
    }
    if analytic.len() != x.len() {
        return shape_err(format!(
            "{} gradient entries for {} inputs",
            analytic.len(),
            x.len()
        ));
    }
    let (mut diff, mut scale): (f64, f64) = (0.0, 0.0);
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = f(&xp)?;
        xp[i] = x[i] - step;
        let fm = f(&xp)?;
        xp[i] = x[i];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {i}"
            )));
        }
        let num = (fp - fm) / (2.0 * step);
        diff = diff.max((analytic[i] - num).abs());
        scale = scale.max(analytic[i].abs()).max(num.abs());
    }
    Ok(if scale > 0.0 { diff / scale } else { 0.0 })
}
