//! Regression targets and loss weights.
//!
//! Velocity targets follow the flow convention `v = eps - x0`. With
//! observations `x_s` at an intermediate time, the unbiased velocity target on
//! `(s, 1)` is `A * eps - B * x_s` with
//! `A = (alpha_s^2 sigma_t + alpha_t sigma_s^2) / (alpha_s^2 sigma_{t|s})` and
//! `B = 1 / alpha_s`. Multiplying the residual by `sigma_{t|s}` and weighting by
//! `min(1 / sigma_{t|s}^2, C)` removes the singularity as `t -> s`.

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{PredictionKind, Predictor};
use crate::prior::ToyPrior;
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;

/// Upper bound on `1 / sigma_{t|s}^2` in the clamped subinterval loss.
pub const DEFAULT_CLAMP_CAP: f64 = 1e4;

/// Loss `mean_i weight_i * || residual_scale_i * psi_i - target_i ||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionTarget<T> {
    pub target: Array2<T>,
    pub weight: Vec<f64>,
    pub residual_scale: Vec<f64>,
}

impl<T: Scalar> RegressionTarget<T> {
    /// Unit weights and no residual scaling.
    pub fn plain(target: Array2<T>) -> Self {
        let n = target.nrows();
        Self {
            target,
            weight: vec![1.0; n],
            residual_scale: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.target.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-sample `weight_i * ||scale_i * psi_i - target_i||^2`.
    pub fn per_sample_loss(&self, psi: ArrayView2<T>) -> Result<Vec<f64>> {
        self.check(psi)?;
        Ok((0..self.len())
            .map(|i| {
                let k = self.residual_scale[i];
                let sq: f64 = psi
                    .row(i)
                    .iter()
                    .zip(self.target.row(i))
                    .map(|(&p, &y)| {
                        let r = k * p.as_f64() - y.as_f64();
                        r * r
                    })
                    .sum();
                self.weight[i] * sq
            })
            .collect())
    }

    pub fn loss(&self, psi: ArrayView2<T>) -> Result<f64> {
        let per = self.per_sample_loss(psi)?;
        Ok(per.iter().sum::<f64>() / per.len().max(1) as f64)
    }

    /// Mean loss and its gradient with respect to `psi`.
    pub fn loss_and_grad(&self, psi: ArrayView2<T>) -> Result<(f64, Array2<T>)> {
        self.check(psi)?;
        let n = self.len().max(1) as f64;
        let mut grad = Array2::zeros(psi.raw_dim());
        let mut total = 0.0;
        for i in 0..self.len() {
            let k = self.residual_scale[i];
            let w = self.weight[i];
            for j in 0..psi.ncols() {
                let r = k * psi[[i, j]].as_f64() - self.target[[i, j]].as_f64();
                total += w * r * r;
                grad[[i, j]] = T::of(2.0 * w * k * r / n);
            }
        }
        Ok((total / n, grad))
    }

    fn check(&self, psi: ArrayView2<T>) -> Result<()> {
        if psi.dim() != self.target.dim() {
            return Err(Error::shape(format!(
                "prediction {:?} vs target {:?}",
                psi.dim(),
                self.target.dim()
            )));
        }
        Ok(())
    }
}

fn same_shape<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn check_times(n: usize, ts: &[f64]) -> Result<()> {
    if ts.len() != n {
        return Err(Error::shape(format!("{} times for {n} samples", ts.len())));
    }
    Ok(())
}

/// Full-interval flow matching: `eps - x0`.
pub fn flow_target<T: Scalar>(x0: ArrayView2<T>, eps: ArrayView2<T>) -> Result<RegressionTarget<T>> {
    same_shape(x0, eps)?;
    Ok(RegressionTarget::plain(
        Zip::from(&eps).and(&x0).map_collect(|&e, &x| e - x),
    ))
}

/// Coefficients of the subinterval velocity target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubintervalCoeffs {
    /// Multiplies `eps`.
    pub eps_coeff: f64,
    /// Multiplies `x_s` (subtracted).
    pub xs_coeff: f64,
    pub sigma_ts: f64,
}

pub fn subinterval_coeffs(schedule: NoiseSchedule, s: f64, t: f64) -> Result<SubintervalCoeffs> {
    if !(s > 0.0) || s >= t {
        return Err(Error::invalid(format!("subinterval needs 0 < s < t, got s = {s}, t = {t}")));
    }
    let bridge = schedule.bridge_coeffs(s, t)?;
    let (alpha_s, sigma_s) = schedule.coeffs(s)?;
    let (alpha_t, sigma_t) = schedule.coeffs(t)?;
    if bridge.sigma_ts <= 0.0 {
        return Err(Error::Singular {
            what: "subinterval target (sigma_ts = 0)",
            t,
        });
    }
    let a2 = alpha_s * alpha_s;
    Ok(SubintervalCoeffs {
        eps_coeff: (a2 * sigma_t + alpha_t * sigma_s * sigma_s) / (a2 * bridge.sigma_ts),
        xs_coeff: 1.0 / alpha_s,
        sigma_ts: bridge.sigma_ts,
    })
}

/// Clamped subinterval flow target: residual scaled by `sigma_{t|s}`, weight
/// `min(1 / sigma_{t|s}^2, clamp_cap)`. Equal to the unclamped loss whenever
/// the cap is inactive.
pub fn subinterval_flow_target<T: Scalar>(
    schedule: NoiseSchedule,
    xs: ArrayView2<T>,
    eps: ArrayView2<T>,
    s: f64,
    ts: &[f64],
    clamp_cap: f64,
) -> Result<RegressionTarget<T>> {
    same_shape(xs, eps)?;
    check_times(xs.nrows(), ts)?;
    let mut target = Array2::zeros(xs.raw_dim());
    let mut weight = Vec::with_capacity(ts.len());
    let mut scale = Vec::with_capacity(ts.len());
    for (i, &t) in ts.iter().enumerate() {
        let c = subinterval_coeffs(schedule, s, t)?;
        let (a, b) = (c.sigma_ts * c.eps_coeff, c.sigma_ts * c.xs_coeff);
        for j in 0..xs.ncols() {
            target[[i, j]] = T::of(a * eps[[i, j]].as_f64() - b * xs[[i, j]].as_f64());
        }
        weight.push((1.0 / (c.sigma_ts * c.sigma_ts)).min(clamp_cap));
        scale.push(c.sigma_ts);
    }
    Ok(RegressionTarget {
        target,
        weight,
        residual_scale: scale,
    })
}

/// Unclamped subinterval flow target `A * eps - B * x_s`.
pub fn subinterval_flow_target_unclamped<T: Scalar>(
    schedule: NoiseSchedule,
    xs: ArrayView2<T>,
    eps: ArrayView2<T>,
    s: f64,
    ts: &[f64],
) -> Result<RegressionTarget<T>> {
    same_shape(xs, eps)?;
    check_times(xs.nrows(), ts)?;
    let mut target = Array2::zeros(xs.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let c = subinterval_coeffs(schedule, s, t)?;
        for j in 0..xs.ncols() {
            target[[i, j]] =
                T::of(c.eps_coeff * eps[[i, j]].as_f64() - c.xs_coeff * xs[[i, j]].as_f64());
        }
    }
    Ok(RegressionTarget::plain(target))
}

/// Naive subinterval target `eps - x_s`: full-interval flow matching with
/// `x_s` standing in for `x0`. Biased; kept for comparison experiments.
pub fn biased_subinterval_target<T: Scalar>(
    xs: ArrayView2<T>,
    eps: ArrayView2<T>,
) -> Result<RegressionTarget<T>> {
    flow_target(xs, eps)
}

/// Full-interval sample prediction: `x0`.
pub fn x_pred_target<T: Scalar>(x0: ArrayView2<T>) -> RegressionTarget<T> {
    RegressionTarget::plain(x0.to_owned())
}

/// Unbiased subinterval sample target
/// `x_s / alpha_s - alpha_t sigma_s^2 / (alpha_s^2 sigma_{t|s}) * eps`.
pub fn subinterval_x_pred_target<T: Scalar>(
    schedule: NoiseSchedule,
    xs: ArrayView2<T>,
    eps: ArrayView2<T>,
    s: f64,
    ts: &[f64],
) -> Result<RegressionTarget<T>> {
    same_shape(xs, eps)?;
    check_times(xs.nrows(), ts)?;
    let (alpha_s, sigma_s) = schedule.coeffs(s)?;
    let mut target = Array2::zeros(xs.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        if t <= s {
            return Err(Error::invalid(format!("subinterval needs s < t, got s = {s}, t = {t}")));
        }
        let bridge = schedule.bridge_coeffs(s, t)?;
        if alpha_s <= 0.0 || bridge.sigma_ts <= 0.0 {
            return Err(Error::Singular {
                what: "subinterval sample target",
                t,
            });
        }
        let alpha_t = schedule.alpha(t)?;
        let eps_coeff = alpha_t * sigma_s * sigma_s / (alpha_s * alpha_s * bridge.sigma_ts);
        for j in 0..xs.ncols() {
            target[[i, j]] = T::of(xs[[i, j]].as_f64() / alpha_s - eps_coeff * eps[[i, j]].as_f64());
        }
    }
    Ok(RegressionTarget::plain(target))
}

fn map_rows<T: Scalar>(
    x: ArrayView2<T>,
    ts: &[f64],
    schedule: NoiseSchedule,
    mut f: impl FnMut(usize, f64, f64, f64) -> Vec<f64>,
) -> Result<Array2<T>> {
    check_times(x.nrows(), ts)?;
    let mut out = Array2::zeros(x.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let (alpha, sigma) = schedule.coeffs(t)?;
        if sigma <= 0.0 {
            return Err(Error::Singular {
                what: "posterior (sigma_t = 0)",
                t,
            });
        }
        for (j, v) in f(i, t, alpha, sigma).into_iter().enumerate() {
            out[[i, j]] = T::of(v);
        }
    }
    Ok(out)
}

/// `E[x0 | x_t]` under the prior.
pub fn posterior_mean<T: Scalar>(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    x_t: ArrayView2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    check_dim(prior, x_t)?;
    map_rows(x_t, ts, schedule, |i, _, a, s| prior.posterior_mean_row(x_t.row(i), a, s))
}

/// `grad log p_t(x_t)` under the prior.
pub fn analytic_score<T: Scalar>(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    x_t: ArrayView2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    check_dim(prior, x_t)?;
    map_rows(x_t, ts, schedule, |i, _, a, s| prior.score_row(x_t.row(i), a, s))
}

/// Minimizer of the flow-matching loss: `(x_t - alpha_t x0_hat) / sigma_t - x0_hat`.
pub fn analytic_velocity<T: Scalar>(
    prior: &ToyPrior,
    schedule: NoiseSchedule,
    x_t: ArrayView2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    check_dim(prior, x_t)?;
    map_rows(x_t, ts, schedule, |i, _, a, s| {
        let row = x_t.row(i);
        prior
            .posterior_mean_row(row, a, s)
            .into_iter()
            .zip(row.iter())
            .map(|(m, &x)| (x.as_f64() - a * m) / s - m)
            .collect()
    })
}

fn check_dim<T: Scalar>(prior: &ToyPrior, x: ArrayView2<T>) -> Result<()> {
    if x.ncols() != prior.dim() {
        return Err(Error::shape(format!(
            "samples have {} columns, prior has dimension {}",
            x.ncols(),
            prior.dim()
        )));
    }
    Ok(())
}

/// `psi + x_t / alpha_t + (sigma_t + sigma_t^2 / alpha_t) * score`; zero
/// exactly when `psi` is the optimal velocity for that score.
pub fn esm_residual<T: Scalar>(
    schedule: NoiseSchedule,
    psi: ArrayView2<T>,
    x_t: ArrayView2<T>,
    score: ArrayView2<T>,
    ts: &[f64],
) -> Result<Array2<T>> {
    same_shape(psi, x_t)?;
    same_shape(psi, score)?;
    check_times(psi.nrows(), ts)?;
    let mut out = Array2::zeros(psi.raw_dim());
    for (i, &t) in ts.iter().enumerate() {
        let (alpha, sigma) = schedule.coeffs(t)?;
        if alpha <= 0.0 {
            return Err(Error::Singular {
                what: "explicit score matching residual (alpha_t = 0)",
                t,
            });
        }
        let k = sigma + sigma * sigma / alpha;
        for j in 0..psi.ncols() {
            out[[i, j]] = T::of(
                psi[[i, j]].as_f64() + x_t[[i, j]].as_f64() / alpha + k * score[[i, j]].as_f64(),
            );
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// `1 / (sigma_t + sigma_t^2 / alpha_t)`.
    pub lambda_t: f64,
    /// `lambda_t * alpha_{t|s}`.
    pub w: f64,
    /// `min(1 / sigma_{t|s}^2, C)`.
    pub clamp_weight: f64,
}

impl LossWeights {
    pub fn new(schedule: NoiseSchedule, s: f64, t: f64, clamp_cap: f64) -> Result<Self> {
        let (alpha, sigma) = schedule.coeffs(t)?;
        if alpha <= 0.0 || sigma <= 0.0 {
            return Err(Error::Singular {
                what: "distribution matching weight",
                t,
            });
        }
        let bridge = schedule.bridge_coeffs(s, t)?;
        let lambda_t = 1.0 / (sigma + sigma * sigma / alpha);
        let inv_var = if bridge.sigma_ts > 0.0 {
            1.0 / (bridge.sigma_ts * bridge.sigma_ts)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            lambda_t,
            w: lambda_t * bridge.alpha_ts,
            clamp_weight: inv_var.min(clamp_cap),
        })
    }
}

/// Weights of the reverse-KL pseudo-gradient with noise injected from `s`.
pub fn dmd_weight(schedule: NoiseSchedule, s: f64, t: f64) -> Result<LossWeights> {
    LossWeights::new(schedule, s, t, DEFAULT_CLAMP_CAP)
}

/// Closed-form flow of a [`ToyPrior`], usable wherever a network is.
#[derive(Debug, Clone)]
pub struct AnalyticVelocity {
    pub prior: ToyPrior,
    pub schedule: NoiseSchedule,
}

impl<T: Scalar> Predictor<T> for AnalyticVelocity {
    fn kind(&self) -> PredictionKind {
        PredictionKind::Velocity
    }

    fn predict(&self, x: ArrayView2<T>, t: &[f64]) -> Result<Array2<T>> {
        analytic_velocity(&self.prior, self.schedule, x, t)
    }
}
