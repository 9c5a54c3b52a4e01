//! Offset-distribution fitting and least-squares fitting of the linear
//! voting head.

use std::fmt::Write as _;

use nalgebra::{DMatrix, Point3, Vector3};

use crate::error::{Error, Result};
use crate::kitti_io::FrameId;
use crate::losses::kl_gaussian;
use crate::voting::{identity_sum_weights, GaussianOffsetModel, LinearHead, LinearParams};

/// Closed-form maximum-likelihood fit: sample mean and population variance.
pub fn fit_gaussian_mle(offsets: &[[f64; 2]]) -> Result<GaussianOffsetModel> {
    if offsets.len() < 2 {
        return Err(Error::DegenerateSample(format!(
            "need at least 2 offsets, got {}",
            offsets.len()
        )));
    }
    let n = offsets.len() as f64;
    let mut mean = [0.0; 2];
    for o in offsets {
        mean[0] += o[0];
        mean[1] += o[1];
    }
    mean[0] /= n;
    mean[1] /= n;
    let mut var = [0.0; 2];
    for o in offsets {
        var[0] += (o[0] - mean[0]).powi(2);
        var[1] += (o[1] - mean[1]).powi(2);
    }
    var[0] /= n;
    var[1] /= n;
    for (axis, v) in ["u", "v"].iter().zip(var) {
        if !(v > 0.0) {
            return Err(Error::DegenerateSample(format!(
                "zero variance on the {axis} axis"
            )));
        }
    }
    GaussianOffsetModel::new(mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlDescentConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    /// Stop once the gradient norm drops below this.
    pub grad_tol: f64,
    /// Halvings attempted per step before declaring divergence.
    pub max_halvings: usize,
}

impl Default for KlDescentConfig {
    fn default() -> Self {
        KlDescentConfig {
            learning_rate: 0.5,
            max_iters: 200_000,
            grad_tol: 1e-13,
            max_halvings: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlFit {
    pub model: GaussianOffsetModel,
    pub iterations: usize,
    /// KL after every accepted step, starting with the initial value.
    pub losses: Vec<f64>,
}

/// Gradient descent on `KL(empirical || model)` in `(mean, ln var)`. Each
/// step starts from the configured learning rate and halves it until the
/// loss does not increase.
pub fn fit_gaussian_kl(
    offsets: &[[f64; 2]],
    init: &GaussianOffsetModel,
    cfg: &KlDescentConfig,
) -> Result<KlFit> {
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Domain("learning rate must be positive".into()));
    }
    let target = fit_gaussian_mle(offsets)?;
    let mut mean = init.mean;
    let mut log_var = [init.var[0].ln(), init.var[1].ln()];
    let model_at = |m: [f64; 2], lv: [f64; 2]| GaussianOffsetModel {
        mean: m,
        var: [lv[0].exp(), lv[1].exp()],
    };
    let mut current = kl_gaussian(&model_at(mean, log_var), &target)?;
    let mut losses = vec![current.value];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let g = [
            current.grad_mean[0],
            current.grad_mean[1],
            current.grad_log_var[0],
            current.grad_log_var[1],
        ];
        if g.iter().map(|x| x * x).sum::<f64>().sqrt() < cfg.grad_tol {
            break;
        }
        let mut lr = cfg.learning_rate;
        let mut accepted = None;
        let mut trial_losses = Vec::new();
        for _ in 0..=cfg.max_halvings {
            let m = [mean[0] - lr * g[0], mean[1] - lr * g[1]];
            let lv = [log_var[0] - lr * g[2], log_var[1] - lr * g[3]];
            let candidate = model_at(m, lv);
            if candidate.var.iter().all(|v| *v > 0.0 && v.is_finite()) {
                let out = kl_gaussian(&candidate, &target)?;
                trial_losses.push(out.value);
                if out.value <= current.value {
                    accepted = Some((m, lv, out));
                    break;
                }
            }
            lr *= 0.5;
        }
        let Some((m, lv, out)) = accepted else {
            // A trial within rounding of the current loss means
            // the minimum is reached to machine precision.
            let floor = 8.0 * f64::EPSILON * current.value.abs().max(1.0);
            if trial_losses.iter().any(|&t| t - current.value <= floor) {
                break;
            }
            let mut trace: Vec<f64> = losses.iter().rev().take(10).rev().copied().collect();
            trace.extend(trial_losses);
            return Err(Error::NonConvergence {
                iteration: iterations,
                trace,
            });
        };
        iterations += 1;
        let stalled = out.value == current.value && m == mean && lv == log_var;
        mean = m;
        log_var = lv;
        current = out;
        losses.push(current.value);
        if stalled {
            break;
        }
    }
    Ok(KlFit {
        model: GaussianOffsetModel::new(mean, [log_var[0].exp(), log_var[1].exp()])?,
        iterations,
        losses,
    })
}

/// One offset sample as stored in the offsets CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetSample {
    pub frame: FrameId,
    pub object: usize,
    pub offset: [f64; 2],
}

pub fn offsets_to_csv(samples: &[OffsetSample]) -> String {
    let mut out = String::from("frame_id,object_id,du,dv\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{:.12e},{:.12e}",
            s.frame, s.object, s.offset[0], s.offset[1]
        );
    }
    out
}

pub fn offsets_from_csv(text: &str) -> Result<Vec<OffsetSample>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim();
        if line.is_empty() || (lineno == 1 && line.starts_with("frame_id")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::format(lineno, "expected frame_id,object_id,du,dv"));
        }
        let frame = fields[0]
            .parse::<u32>()
            .map(FrameId)
            .map_err(|_| Error::format(lineno, format!("bad frame id {:?}", fields[0])))?;
        let object = fields[1]
            .parse::<usize>()
            .map_err(|_| Error::format(lineno, format!("bad object id {:?}", fields[1])))?;
        let mut offset = [0.0; 2];
        for (k, t) in fields[2..].iter().enumerate() {
            offset[k] = t
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(lineno, format!("cannot read {t:?} as a number")))?;
        }
        out.push(OffsetSample {
            frame,
            object,
            offset,
        });
    }
    Ok(out)
}

pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Ridge least squares for the linear head. The ridge penalty pulls the
/// weights toward the identity-sum (mean) map rather than toward zero, and
/// the bias is unpenalized, so the fitted training error never exceeds the
/// mean head's.
pub fn fit_linear_head(
    side: usize,
    inputs: &[Vec<f64>],
    targets: &[Point3<f64>],
    lambda: f64,
) -> Result<LinearHead> {
    let dim = 3 * side * side;
    if inputs.len() != targets.len() {
        return Err(Error::Shape {
            expected: targets.len(),
            actual: inputs.len(),
        });
    }
    if let Some(bad) = inputs.iter().find(|x| x.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            actual: bad.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::Domain("ridge term must be nonnegative".into()));
    }
    let n = inputs.len();
    if n == 0 || (lambda == 0.0 && n < dim + 1) {
        return Err(Error::SingularSystem);
    }
    let prior = identity_sum_weights(side);
    let x = DMatrix::from_fn(n, dim, |i, j| inputs[i][j]);
    let x_mean = x.row_mean();
    let xc = DMatrix::from_fn(n, dim, |i, j| x[(i, j)] - x_mean[j]);

    // Residual of the mean map, which the fit corrects.
    let mut r = DMatrix::zeros(n, 3);
    for i in 0..n {
        let row = x.row(i).transpose();
        let base = &prior * row;
        for c in 0..3 {
            r[(i, c)] = targets[i][c] - base[c];
        }
    }
    let r_mean = r.row_mean();
    let rc = DMatrix::from_fn(n, 3, |i, c| r[(i, c)] - r_mean[c]);

    let mut gram = xc.transpose() * &xc;
    for k in 0..dim {
        gram[(k, k)] += lambda;
    }
    let chol = gram.clone().cholesky().ok_or(Error::SingularSystem)?;
    let l = chol.l_dirty();
    let diag: Vec<f64> = (0..dim).map(|k| l[(k, k)] * l[(k, k)]).collect();
    let max_d = diag.iter().cloned().fold(0.0, f64::max);
    let min_d = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda == 0.0 && !(min_d > max_d * 1e-13) {
        return Err(Error::SingularSystem);
    }
    let delta = chol.solve(&(xc.transpose() * &rc)); // dim x 3
    let weights = &prior + delta.transpose();
    let mut bias = Vector3::zeros();
    for c in 0..3 {
        let dx: f64 = (0..dim).map(|j| delta[(j, c)] * x_mean[j]).sum();
        bias[c] = r_mean[c] - dx;
    }
    if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem);
    }
    LinearHead::from_params(side, LinearParams { weights, bias })
}

/// Mean squared Euclidean error of a head over a sample set.
pub fn head_mse(
    predict: impl Fn(&[f64]) -> Result<Point3<f64>>,
    inputs: &[Vec<f64>],
    targets: &[Point3<f64>],
) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyStats);
    }
    let mut acc = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        acc += (predict(x)? - t).norm_squared();
    }
    Ok(acc / inputs.len() as f64)
}

/// Sum each coordinate over the grid: the mean head on flattened inputs.
pub fn mean_head(flattened: &[f64]) -> Result<Point3<f64>> {
    let mut acc = Vector3::zeros();
    for chunk in flattened.chunks_exact(3) {
        acc += Vector3::new(chunk[0], chunk[1], chunk[2]);
    }
    Ok(Point3::from(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_point_sample_degenerates_on_v() {
        match fit_gaussian_mle(&[[-1.0, 0.0], [1.0, 0.0]]) {
            Err(Error::DegenerateSample(msg)) => assert!(msg.contains('v')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(fit_gaussian_mle(&[[0.0, 0.0]]).is_err());
    }

    #[test]
    fn four_point_sample() {
        let m = fit_gaussian_mle(&[[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]]).unwrap();
        assert_eq!(m.mean, [0.0, 0.0]);
        assert_eq!(m.var, [1.0, 1.0]);
    }

    #[test]
    fn kl_descent_from_target_does_nothing() {
        let pts = [[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]];
        let init = fit_gaussian_mle(&pts).unwrap();
        let fit = fit_gaussian_kl(&pts, &init, &KlDescentConfig::default()).unwrap();
        assert_eq!(fit.iterations, 0);
        assert_eq!(fit.model, init);
    }

    #[test]
    fn kl_descent_recovers_mean() {
        let pts = [[-1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [1.0, -1.0]];
        let init = GaussianOffsetModel::new([5.0, 5.0], [1.0, 1.0]).unwrap();
        let cfg = KlDescentConfig {
            learning_rate: 0.1,
            max_iters: 2000,
            ..KlDescentConfig::default()
        };
        let fit = fit_gaussian_kl(&pts, &init, &cfg).unwrap();
        assert!(fit.model.mean[0].abs() < 1e-6 && fit.model.mean[1].abs() < 1e-6);
        for w in fit.losses.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn offsets_csv_round_trip() {
        let samples = vec![
            OffsetSample {
                frame: FrameId(3),
                object: 0,
                offset: [0.0125, -0.5],
            },
            OffsetSample {
                frame: FrameId(12),
                object: 4,
                offset: [1e-9, 3.25],
            },
        ];
        assert_eq!(
            offsets_from_csv(&offsets_to_csv(&samples)).unwrap(),
            samples
        );
        assert!(offsets_from_csv("frame_id,object_id,du,dv\n1,2,x,0\n").is_err());
    }

    fn sample_inputs(n: usize, side: usize) -> Vec<Vec<f64>> {
        let dim = 3 * side * side;
        (0..n)
            .map(|i| {
                (0..dim)
                    .map(|j| {
                        (((i * 131 + j * 17) % 97) as f64 / 97.0 - 0.3) * (1.0 + (j % 3) as f64)
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn realizable_targets_are_reproduced() {
        let side = 2;
        let inputs = sample_inputs(60, side);
        let targets: Vec<_> = inputs.iter().map(|x| mean_head(x).unwrap()).collect();
        let head = fit_linear_head(side, &inputs, &targets, DEFAULT_RIDGE).unwrap();
        let mse = head_mse(|x| head.apply(x), &inputs, &targets).unwrap();
        assert!(mse < 1e-18, "{mse}");
    }

    #[test]
    fn constant_bias_is_recovered() {
        let side = 2;
        let inputs = sample_inputs(60, side);
        let c = Vector3::new(0.5, -1.0, 2.5);
        let targets: Vec<_> = inputs.iter().map(|x| mean_head(x).unwrap() + c).collect();
        let head = fit_linear_head(side, &inputs, &targets, DEFAULT_RIDGE).unwrap();
        let bias = head.params().unwrap().bias;
        assert!((bias - c).norm() < 1e-6, "{bias:?}");
    }

    #[test]
    fn rank_deficient_without_ridge_is_singular() {
        let side = 2;
        let inputs = sample_inputs(5, side);
        let targets = vec![Point3::origin(); 5];
        assert!(matches!(
            fit_linear_head(side, &inputs, &targets, 0.0),
            Err(Error::SingularSystem)
        ));
        let dup = vec![inputs[0].clone(); 40];
        assert!(matches!(
            fit_linear_head(side, &dup, &vec![Point3::origin(); 40], 0.0),
            Err(Error::SingularSystem)
        ));
    }
}
