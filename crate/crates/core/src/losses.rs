//! Training losses with hand-derived gradients, and the multi-bin
//! orientation codec.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Dimensions};
use crate::voting::GaussianOffsetModel;

pub const BCE_EPS: f64 = 1e-7;

/// Smooth-L1 value and derivative.
pub fn smooth_l1(x: f64) -> (f64, f64) {
    if x.abs() < 1.0 {
        (0.5 * x * x, x)
    } else {
        (x.abs() - 0.5, x.signum())
    }
}

/// Summed smooth-L1 over components, with the per-component gradient.
pub fn smooth_l1_sum(xs: &[f64]) -> (f64, Vec<f64>) {
    let mut total = 0.0;
    let grad = xs
        .iter()
        .map(|&x| {
            let (v, d) = smooth_l1(x);
            total += v;
            d
        })
        .collect();
    (total, grad)
}

/// Binary cross-entropy with `p` clamped to `[eps, 1 - eps]`.
pub fn bce(p: f64, target: f64) -> f64 {
    bce_with_grad(p, target).0
}

/// BCE value and derivative with respect to `p` (zero inside the clamp).
pub fn bce_with_grad(p: f64, target: f64) -> (f64, f64) {
    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let value = -(target * pc.ln() + (1.0 - target) * (1.0 - pc).ln());
    let grad = if pc != p {
        0.0
    } else {
        -target / pc + (1.0 - target) / (1.0 - pc)
    };
    (value, grad)
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// BCE of `sigmoid(logit)` against `target`, differentiated in the logit.
fn bce_logit(logit: f64, target: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    let (value, dp) = bce_with_grad(p, target);
    (value, dp * p * (1.0 - p))
}

/// Two-stage detector loss: classification BCE plus `w_2d` times smooth-L1
/// over box-regression deltas.
pub fn detection2d_loss(
    p: f64,
    label: f64,
    deltas: &[f64],
    targets: &[f64],
    w_2d: f64,
) -> Result<f64> {
    if deltas.len() != targets.len() {
        return Err(Error::Shape {
            expected: targets.len(),
            actual: deltas.len(),
        });
    }
    let diffs: Vec<f64> = deltas.iter().zip(targets).map(|(a, b)| a - b).collect();
    Ok(bce(p, label) + w_2d * smooth_l1_sum(&diffs).0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlOutput {
    pub value: f64,
    /// d/d mu_hat for (u, v).
    pub grad_mean: [f64; 2],
    /// d/d ln(var_hat) for (u, v).
    pub grad_log_var: [f64; 2],
}

/// `KL(target || pred)` for axis-aligned Gaussians, summed over both axes:
/// `0.5 [ln var_hat - ln var + (var + (mu - mu_hat)^2) / var_hat - 1]`.
pub fn kl_gaussian(pred: &GaussianOffsetModel, target: &GaussianOffsetModel) -> Result<KlOutput> {
    if pred.var.iter().chain(&target.var).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("KL needs positive variances".into()));
    }
    let mut out = KlOutput {
        value: 0.0,
        grad_mean: [0.0; 2],
        grad_log_var: [0.0; 2],
    };
    for k in 0..2 {
        let diff = target.mean[k] - pred.mean[k];
        let ratio = (target.var[k] + diff * diff) / pred.var[k];
        out.value += 0.5 * (pred.var[k].ln() - target.var[k].ln() + ratio - 1.0);
        out.grad_mean[k] = -diff / pred.var[k];
        out.grad_log_var[k] = 0.5 * (1.0 - ratio);
    }
    Ok(out)
}

/// Smooth-L1 on log dimension ratios, with the gradient in the predicted
/// `(H, W, L)`.
pub fn dimension_loss(pred: &Dimensions, gt: &Dimensions) -> Result<(f64, [f64; 3])> {
    pred.validate()
        .and(gt.validate())
        .map_err(|e| Error::Domain(e.to_string()))?;
    let p = [pred.height, pred.width, pred.length];
    let g = [gt.height, gt.width, gt.length];
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    for k in 0..3 {
        let (v, d) = smooth_l1(p[k].ln() - g[k].ln());
        value += v;
        grad[k] = d / p[k];
    }
    Ok((value, grad))
}

/// Smooth-L1 of the fused location `geometric + appearance` against ground
/// truth, with the gradient shared by both branches.
pub fn location_loss(
    geometric: &[f64; 3],
    appearance: &[f64; 3],
    gt: &[f64; 3],
) -> (f64, [f64; 3]) {
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    for k in 0..3 {
        let (v, d) = smooth_l1(geometric[k] + appearance[k] - gt[k]);
        value += v;
        grad[k] = d;
    }
    (value, grad)
}

/// Multi-bin orientation: per-bin confidence logits and residuals relative
/// to the bin centers. Targets carry `+inf`/`-inf` logits for
/// positive/negative bins.
#[derive(Debug, Clone, PartialEq)]
pub struct OrientationEncoding {
    pub bin_logits: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl OrientationEncoding {
    pub fn n_bins(&self) -> usize {
        self.bin_logits.len()
    }

    pub fn bin_centers(&self) -> Vec<f64> {
        bin_centers(self.n_bins())
    }

    /// Bins whose target confidence exceeds one half.
    pub fn positive_bins(&self) -> impl Iterator<Item = usize> + '_ {
        self.bin_logits
            .iter()
            .enumerate()
            .filter(|(_, &z)| z > 0.0)
            .map(|(k, _)| k)
    }
}

/// `2 pi k / N` wrapped into `(-pi, pi]`.
pub fn bin_centers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| wrap_angle(2.0 * PI * k as f64 / n as f64))
        .collect()
}

pub const DEFAULT_BINS: usize = 2;
pub const DEFAULT_OVERLAP: f64 = 0.1;

pub fn encode_orientation(theta: f64, n: usize, overlap: f64) -> Result<OrientationEncoding> {
    if n < 2 {
        return Err(Error::Domain(format!("need at least 2 bins, got {n}")));
    }
    if !(overlap >= 0.0) || !theta.is_finite() {
        return Err(Error::Domain(
            "overlap must be nonnegative and angle finite".into(),
        ));
    }
    let theta = wrap_angle(theta);
    let reach = PI / n as f64 + overlap / 2.0;
    let centers = bin_centers(n);
    let residuals: Vec<f64> = centers.iter().map(|c| wrap_angle(theta - c)).collect();
    let mut bin_logits: Vec<f64> = residuals
        .iter()
        .map(|r| {
            if r.abs() <= reach {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    if bin_logits.iter().all(|z| *z < 0.0) {
        // Rounding at the exact bin boundary; fall back to the nearest center.
        let nearest = residuals
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        bin_logits[nearest] = f64::INFINITY;
    }
    Ok(OrientationEncoding {
        bin_logits,
        residuals,
    })
}

/// Angle from the highest-scoring bin plus its residual.
pub fn decode_orientation(enc: &OrientationEncoding) -> f64 {
    let best = enc
        .bin_logits
        .iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (k, &z)| if z > acc.1 { (k, z) } else { acc },
        )
        .0;
    let centers = enc.bin_centers();
    wrap_angle(centers[best] + enc.residuals[best])
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrientationLoss {
    pub value: f64,
    pub grad_logits: Vec<f64>,
    pub grad_residuals: Vec<f64>,
}

/// Bin BCE on sigmoid scores summed over bins, plus `w_ang` times
/// smooth-L1 residual error over the target's positive bins.
pub fn orientation_loss(
    pred: &OrientationEncoding,
    target: &OrientationEncoding,
    w_ang: f64,
) -> Result<OrientationLoss> {
    let n = target.n_bins();
    if pred.n_bins() != n || pred.residuals.len() != n || target.residuals.len() != n {
        return Err(Error::Shape {
            expected: n,
            actual: pred.n_bins(),
        });
    }
    let mut value = 0.0;
    let mut grad_logits = Vec::with_capacity(n);
    let mut grad_residuals = vec![0.0; n];
    for (&z, &zt) in pred.bin_logits.iter().zip(&target.bin_logits) {
        let (v, g) = bce_logit(z, sigmoid(zt));
        value += v;
        grad_logits.push(g);
    }
    for k in target.positive_bins() {
        let (v, d) = smooth_l1(pred.residuals[k] - target.residuals[k]);
        value += w_ang * v;
        grad_residuals[k] = w_ang * d;
    }
    Ok(OrientationLoss {
        value,
        grad_logits,
        grad_residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub w_2d: f64,
    pub w_ang: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            a: 1.0,
            b: 5.0,
            c: 0.5,
            d: 5.0,
            e: 1.0,
            w_2d: 10.0,
            w_ang: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub detection2d: f64,
    pub location: f64,
    pub size: f64,
    pub angle: f64,
    pub kld: f64,
}

pub fn multitask_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.a * parts.detection2d
        + w.b * parts.location
        + w.c * parts.size
        + w.d * parts.angle
        + w.e * parts.kld
}
