//! Forward Ornstein–Uhlenbeck noising process `dX = -X/2 dt + dW`.
//!
//! The transition kernel is `N(α_t x0, σ_t² I)` with `α_t = e^{-t/2}` and
//! `σ_t² = 1 - e^{-t}`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time window of a diffusion model: early-stopping time `t0` and terminal
/// time `t_end` (the `T` of the forward process).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
}

impl DiffusionSchedule {
    pub fn new(t0: f64, t_end: f64) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite() && t0 > 0.0 && t0 < t_end) {
            return Err(Error::InvalidConfig(format!(
                "schedule needs 0 < t0 < T, got t0 = {t0}, T = {t_end}"
            )));
        }
        Ok(Self { t0, t_end })
    }

    pub fn width(&self) -> f64 {
        self.t_end - self.t0
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t_end
    }
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

/// `(α_t, σ_t)`; σ is evaluated as `sqrt(-expm1(-t))` so that it keeps full
/// relative precision for tiny `t`.
pub fn alpha_sigma(t: f64) -> Result<(f64, f64)> {
    check_time(t)?;
    Ok(alpha_sigma_unchecked(t))
}

#[inline]
pub(crate) fn alpha_sigma_unchecked(t: f64) -> (f64, f64) {
    ((-0.5 * t).exp(), (-(-t).exp_m1()).sqrt())
}

/// Draws `x_t ~ N(α_t x0, σ_t² I)`.
pub fn perturb<R: Rng + ?Sized>(x0: &[f64], t: f64, rng: &mut R) -> Result<Vec<f64>> {
    let (alpha, sigma) = alpha_sigma(t)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("x0 = {x0:?}")));
    }
    Ok(x0
        .iter()
        .map(|&v| {
            let z: f64 = rng.sample(StandardNormal);
            alpha * v + sigma * z
        })
        .collect())
}

/// Score of the transition kernel, `-(x_t - α_t x0) / σ_t²`. This is the
/// regression target of denoising score matching.
pub fn kernel_score(x_t: &[f64], x0: &[f64], t: f64) -> Result<Vec<f64>> {
    check_time(t)?;
    if t == 0.0 {
        return Err(Error::InvalidTime(t));
    }
    if x_t.len() != x0.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: x_t.len(),
        });
    }
    let (alpha, sigma) = alpha_sigma_unchecked(t);
    let var = sigma * sigma;
    Ok(x_t
        .iter()
        .zip(x0)
        .map(|(&xt, &x0)| -(xt - alpha * x0) / var)
        .collect())
}
