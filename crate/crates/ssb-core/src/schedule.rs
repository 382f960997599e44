//! Symmetric triangular noise schedule and the bridge variance bookkeeping
//! built on top of it.
//!
//! The per-step rates form a tent over midpoints u_i = (i+0.5)/n:
//!     beta[i] = beta_max * (1 - |2i + 1 - n| / n)
//! which is exactly symmetric (beta[i] == beta[n-1-i] bitwise, because the
//! integer |2i+1-n| is shared by the mirrored pair).
//!
//! Forward variance accumulates from the x0 side, and the reverse-side
//! variance is its exact complement:
//!     sigma_sq[0] = 0,   sigma_sq[k] = sum(beta[0..k])
//!     sigma_bar_sq[k] = total_variance - sigma_sq[k]
//! so sigma_sq[n] == total_variance and sigma_bar_sq[n] == 0 hold exactly,
//! and every interior sum sigma_sq[k] + sigma_bar_sq[k] is within one
//! rounding of total_variance.
//!
//! At step k the pinned bridge marginal, conditioned on both endpoints, is
//!     X_k ~ N(w0*x0 + w1*x1, var * I)
//! with w0 = sigma_bar_sq[k]/total, w1 = sigma_sq[k]/total and
//! var = sigma_sq[k]*sigma_bar_sq[k]/total; `bridge_coeffs` returns these.

use crate::error::{Result, SsbError};
use serde::{Deserialize, Serialize};

/// Interpolation weights and variance of the bridge marginal at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BridgeCoeffs {
    /// Weight on the x0 endpoint.
    pub w0: f64,
    /// Weight on the x1 endpoint; w0 + w1 == 1 up to rounding.
    pub w1: f64,
    /// Marginal variance; zero at both endpoints.
    pub var: f64,
}

/// Parameters sufficient to rebuild a schedule bit-for-bit. Stored in
/// checkpoints and config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub n_steps: usize,
    pub total_variance: f64,
}

impl ScheduleParams {
    pub fn build(&self) -> Result<Schedule> {
        Schedule::with_total_variance(self.n_steps, self.total_variance)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    beta: Vec<f64>,
    sigma_sq: Vec<f64>,
    sigma_bar_sq: Vec<f64>,
}

impl Schedule {
    /// Tent schedule with peak rate `beta_max`. Total variance falls out as
    /// the sum of the rates (beta_max * n/2 for even n).
    pub fn new(n_steps: usize, beta_max: f64) -> Result<Schedule> {
        if !(beta_max.is_finite() && beta_max > 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "beta_max must be finite and positive, got {beta_max}"
            )));
        }
        let tent = tent_weights(n_steps)?;
        Schedule::from_beta(tent.iter().map(|t| beta_max * t).collect())
    }

    /// Tent schedule rescaled so the accumulated variance equals `total`
    /// exactly (the final sigma_sq entry is total by construction, not by
    /// rounding luck). This is the parameterization checkpoints store.
    pub fn with_total_variance(n_steps: usize, total: f64) -> Result<Schedule> {
        if !(total.is_finite() && total > 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "total variance must be finite and positive, got {total}"
            )));
        }
        let tent = tent_weights(n_steps)?;
        let mut cum = vec![0.0; n_steps + 1];
        for i in 0..n_steps {
            cum[i + 1] = cum[i] + tent[i];
        }
        let raw_total = cum[n_steps];
        // x/x == 1.0 in IEEE arithmetic, so the endpoint is exact.
        let sigma_sq: Vec<f64> = cum.iter().map(|c| total * (c / raw_total)).collect();
        let beta = (0..n_steps).map(|i| sigma_sq[i + 1] - sigma_sq[i]).collect();
        Schedule::assemble(beta, sigma_sq)
    }

    /// Schedule from explicit per-step rates. Rates must be finite and
    /// nonnegative with a positive sum.
    pub fn from_beta(beta: Vec<f64>) -> Result<Schedule> {
        if beta.is_empty() {
            return Err(SsbError::InvalidArgument("beta must be nonempty".into()));
        }
        if beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(SsbError::InvalidArgument(
                "beta entries must be finite and nonnegative".into(),
            ));
        }
        let mut sigma_sq = vec![0.0; beta.len() + 1];
        for (i, b) in beta.iter().enumerate() {
            sigma_sq[i + 1] = sigma_sq[i] + b;
        }
        if sigma_sq[beta.len()] <= 0.0 {
            return Err(SsbError::InvalidArgument("beta must have positive sum".into()));
        }
        Schedule::assemble(beta, sigma_sq)
    }

    fn assemble(beta: Vec<f64>, sigma_sq: Vec<f64>) -> Result<Schedule> {
        let total = *sigma_sq.last().expect("sigma_sq nonempty");
        if sigma_sq.windows(2).any(|w| w[1] < w[0]) {
            return Err(SsbError::Domain("accumulated variance must be nondecreasing".into()));
        }
        let sigma_bar_sq = sigma_sq.iter().map(|s| total - s).collect();
        Ok(Schedule { beta, sigma_sq, sigma_bar_sq })
    }

    pub fn n_steps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    /// Accumulated variance from the x0 side; length n_steps + 1.
    pub fn sigma_sq(&self) -> &[f64] {
        &self.sigma_sq
    }

    /// Remaining variance to the x1 side; length n_steps + 1.
    pub fn sigma_bar_sq(&self) -> &[f64] {
        &self.sigma_bar_sq
    }

    /// sigma_sq at the final step; the bridge's endpoint-to-endpoint variance.
    pub fn total_variance(&self) -> f64 {
        *self.sigma_sq.last().expect("sigma_sq nonempty")
    }

    /// sqrt(sigma_sq[step]).
    pub fn sigma(&self, step: usize) -> f64 {
        self.sigma_sq[step].sqrt()
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step > self.n_steps() {
            return Err(SsbError::InvalidArgument(format!(
                "step {step} out of range 0..={}",
                self.n_steps()
            )));
        }
        Ok(())
    }

    /// Bridge marginal coefficients at `step` (0..=n_steps). Exact at the
    /// endpoints: step 0 gives (1, 0, 0) and step n gives (0, 1, 0).
    pub fn bridge_coeffs(&self, step: usize) -> Result<BridgeCoeffs> {
        self.check_step(step)?;
        let total = self.total_variance();
        let s = self.sigma_sq[step];
        let sb = self.sigma_bar_sq[step];
        Ok(BridgeCoeffs { w0: sb / total, w1: s / total, var: s * sb / total })
    }

    pub fn params(&self) -> ScheduleParams {
        ScheduleParams { n_steps: self.n_steps(), total_variance: self.total_variance() }
    }
}

/// Tent fractions: 1 - |2i+1-n|/n for i in 0..n. Bitwise symmetric.
fn tent_weights(n_steps: usize) -> Result<Vec<f64>> {
    if n_steps == 0 {
        return Err(SsbError::InvalidArgument("n_steps must be at least 1".into()));
    }
    let n = n_steps as f64;
    Ok((0..n_steps)
        .map(|i| {
            let d = (2 * i as i64 + 1 - n_steps as i64).unsigned_abs() as f64;
            1.0 - d / n
        })
        .collect())
}
