//! Continuous-time Gaussian diffusion algebra.
//!
//! A schedule maps a time `t ∈ [0, 1]` to the marginal coefficients
//! `(alpha_t, sigma_t)` of `x_t = alpha_t * x_0 + sigma_t * eps`. Transitions
//! between two times `s <= t` are Gaussian with bridge coefficients
//! `alpha_{t|s} = alpha_t / alpha_s` and
//! `sigma_{t|s}^2 = sigma_t^2 - alpha_{t|s}^2 sigma_s^2`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Radicands above this (negative) threshold are floating point noise and
/// clamp to zero; anything below is a broken schedule.
pub const RADICAND_TOLERANCE: f64 = -1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSchedule {
    /// `alpha_t = 1 - t`, `sigma_t = t`.
    #[default]
    RectifiedFlow,
    /// `alpha_t = cos(pi t / 2)`, `sigma_t = sin(pi t / 2)`.
    VariancePreservingCosine,
}

/// Gaussian transition `x_t = alpha_ts * x_s + sigma_ts * eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoeffs {
    pub alpha_ts: f64,
    pub sigma_ts: f64,
    pub s: f64,
    pub t: f64,
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::TimeOutOfRange { t })
    }
}

impl NoiseSchedule {
    /// Marginal coefficients `(alpha_t, sigma_t)`.
    pub fn coeffs(self, t: f64) -> Result<(f64, f64)> {
        check_time(t)?;
        Ok(self.coeffs_unchecked(t))
    }

    #[inline]
    pub(crate) fn coeffs_unchecked(self, t: f64) -> (f64, f64) {
        match self {
            NoiseSchedule::RectifiedFlow => (1.0 - t, t),
            NoiseSchedule::VariancePreservingCosine => {
                if t == 0.0 {
                    (1.0, 0.0)
                } else if t == 1.0 {
                    (0.0, 1.0)
                } else {
                    let phase = std::f64::consts::FRAC_PI_2 * t;
                    (phase.cos(), phase.sin())
                }
            }
        }
    }

    pub fn alpha(self, t: f64) -> Result<f64> {
        Ok(self.coeffs(t)?.0)
    }

    pub fn sigma(self, t: f64) -> Result<f64> {
        Ok(self.coeffs(t)?.1)
    }

    /// `alpha_t^2 / sigma_t^2`; infinite at `t = 0`.
    pub fn snr(self, t: f64) -> Result<f64> {
        let (a, s) = self.coeffs(t)?;
        Ok(a * a / (s * s))
    }

    pub fn bridge_coeffs(self, s: f64, t: f64) -> Result<BridgeCoeffs> {
        check_time(s)?;
        check_time(t)?;
        if s > t {
            return Err(Error::BridgeOrder { s, t });
        }
        if s == t {
            return Ok(BridgeCoeffs {
                alpha_ts: 1.0,
                sigma_ts: 0.0,
                s,
                t,
            });
        }
        let (alpha_s, sigma_s) = self.coeffs_unchecked(s);
        let (alpha_t, sigma_t) = self.coeffs_unchecked(t);
        if alpha_s <= 0.0 {
            return Err(Error::Singular {
                what: "bridge (alpha_s = 0)",
                t: s,
            });
        }
        let alpha_ts = alpha_t / alpha_s;
        let radicand = sigma_t * sigma_t - alpha_ts * alpha_ts * sigma_s * sigma_s;
        if radicand < RADICAND_TOLERANCE {
            return Err(Error::NegativeVariance { s, t, radicand });
        }
        Ok(BridgeCoeffs {
            alpha_ts,
            sigma_ts: radicand.max(0.0).sqrt(),
            s,
            t,
        })
    }

    /// `alpha_t * x0 + sigma_t * eps`, elementwise.
    pub fn diffuse<T: Scalar>(
        self,
        x0: ArrayView2<T>,
        eps: ArrayView2<T>,
        t: f64,
    ) -> Result<Array2<T>> {
        let (alpha, sigma) = self.coeffs(t)?;
        affine(x0, eps, T::of(alpha), T::of(sigma))
    }

    /// `alpha_{t|s} * xs + sigma_{t|s} * eps`, elementwise.
    pub fn diffuse_from<T: Scalar>(
        self,
        xs: ArrayView2<T>,
        eps: ArrayView2<T>,
        s: f64,
        t: f64,
    ) -> Result<Array2<T>> {
        let b = self.bridge_coeffs(s, t)?;
        affine(xs, eps, T::of(b.alpha_ts), T::of(b.sigma_ts))
    }

    /// [`diffuse_from`](Self::diffuse_from) with one target time per row.
    pub fn diffuse_from_each<T: Scalar>(
        self,
        xs: ArrayView2<T>,
        eps: ArrayView2<T>,
        s: f64,
        ts: &[f64],
    ) -> Result<Array2<T>> {
        same_shape(xs, eps)?;
        if ts.len() != xs.nrows() {
            return Err(Error::shape(format!(
                "{} times for {} samples",
                ts.len(),
                xs.nrows()
            )));
        }
        let mut out = Array2::zeros(xs.raw_dim());
        for (i, &t) in ts.iter().enumerate() {
            let b = self.bridge_coeffs(s, t)?;
            let (a, sg) = (T::of(b.alpha_ts), T::of(b.sigma_ts));
            Zip::from(out.row_mut(i))
                .and(xs.row(i))
                .and(eps.row(i))
                .for_each(|o, &x, &e| *o = a * x + sg * e);
        }
        Ok(out)
    }
}

fn same_shape<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    Ok(())
}

fn affine<T: Scalar>(x: ArrayView2<T>, eps: ArrayView2<T>, a: T, s: T) -> Result<Array2<T>> {
    same_shape(x, eps)?;
    Ok(Zip::from(&x).and(&eps).map_collect(|&x, &e| a * x + s * e))
}

impl fmt::Display for NoiseSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseSchedule::RectifiedFlow => "rectified_flow",
            NoiseSchedule::VariancePreservingCosine => "variance_preserving_cosine",
        })
    }
}

impl FromStr for NoiseSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rectified_flow" | "rf" => Ok(NoiseSchedule::RectifiedFlow),
            "variance_preserving_cosine" | "vp_cosine" | "cosine" => {
                Ok(NoiseSchedule::VariancePreservingCosine)
            }
            other => Err(Error::Config(format!("unknown schedule {other:?}"))),
        }
    }
}
