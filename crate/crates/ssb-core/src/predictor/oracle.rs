//! Analytic predictors with known closed-form behavior. They exist so the
//! sampler can be tested end to end against exact answers, independent of any
//! training.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use crate::predictor::{ExpertId, Predictor};
use crate::schedule::Schedule;

fn check_predict_step(s: &Schedule, step: usize) -> Result<()> {
    if step == 0 || step > s.n_steps() {
        return Err(SsbError::InvalidArgument(format!(
            "predictor step {step} out of range 1..={}",
            s.n_steps()
        )));
    }
    Ok(())
}

/// Oracle for a point mass at `target`: the true x0 is always `target`, so the
/// exact noise is (x_t - target) / sigma(step). A sampler driven by this must
/// land on `target` up to float rounding regardless of step count.
pub struct DiracOracle {
    target: Grid,
    schedule: Schedule,
}

impl DiracOracle {
    pub fn new(target: Grid, schedule: Schedule) -> DiracOracle {
        DiracOracle { target, schedule }
    }

    pub fn target(&self) -> &Grid {
        &self.target
    }
}

impl Predictor for DiracOracle {
    fn predict(&self, x_t: &Grid, _label: Option<ExpertId>, step: usize) -> Result<Grid> {
        check_predict_step(&self.schedule, step)?;
        x_t.check_same_shape(&self.target, "dirac oracle input")?;
        let sigma = self.schedule.sigma(step);
        x_t.zip_map(&self.target, |x, a| (x - a) / sigma)
    }
}

/// Oracle for a Gaussian prior x0 ~ N(prior_mean, prior_var * I), pixelwise
/// independent, on a bridge pinned at a known x1. Returns the noise whose
/// implied x0_hat is the exact posterior mean of x0 given x_t. The conjugate
/// update is
///
/// ```text
/// E[x0 | x_t] = (m0 * var_t + w0 * tau2 * (x_t - w1 * x1))
///               / (var_t + w0^2 * tau2)
/// ```
///
/// with (w0, w1, var_t) the bridge coefficients at `step` and tau2 the prior
/// variance. Because var_t = w0 * sigma_sq[step], both sides share a factor
/// of w0 that is zero at step n; the implementation cancels it:
///
/// ```text
/// E[x0 | x_t] = (m0 * sigma_sq + tau2 * (x_t - w1 * x1))
///               / (sigma_sq + w0 * tau2)
/// ```
///
/// whose denominator stays positive on every step >= 1, so step n cleanly
/// yields m0 when x_t = x1: the far endpoint carries no information about x0.
pub struct GaussianOracle {
    prior_mean: Grid,
    prior_var: f64,
    x1: Grid,
    schedule: Schedule,
}

impl GaussianOracle {
    pub fn new(prior_mean: Grid, prior_var: f64, x1: Grid, schedule: Schedule) -> Result<GaussianOracle> {
        if !(prior_var.is_finite() && prior_var > 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "prior variance must be finite and positive, got {prior_var}"
            )));
        }
        prior_mean.check_same_shape(&x1, "gaussian oracle endpoints")?;
        Ok(GaussianOracle { prior_mean, prior_var, x1, schedule })
    }

    /// Posterior mean of x0 given x_t at `step`.
    pub fn posterior_mean(&self, x_t: &Grid, step: usize) -> Result<Grid> {
        check_predict_step(&self.schedule, step)?;
        x_t.check_same_shape(&self.prior_mean, "gaussian oracle input")?;
        let c = self.schedule.bridge_coeffs(step)?;
        let s_sq = self.schedule.sigma_sq()[step];
        let tau2 = self.prior_var;
        let denom = s_sq + c.w0 * tau2;
        let mut out = Grid::zeros(x_t.height(), x_t.width());
        for i in 0..x_t.len() {
            let m0 = self.prior_mean.data()[i];
            let shifted = x_t.data()[i] - c.w1 * self.x1.data()[i];
            out.data_mut()[i] = (m0 * s_sq + tau2 * shifted) / denom;
        }
        Ok(out)
    }
}

impl Predictor for GaussianOracle {
    fn predict(&self, x_t: &Grid, _label: Option<ExpertId>, step: usize) -> Result<Grid> {
        let post = self.posterior_mean(x_t, step)?;
        let sigma = self.schedule.sigma(step);
        x_t.zip_map(&post, |x, m| (x - m) / sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge;

    #[test]
    fn dirac_noise_inverts_to_target() {
        let s = Schedule::with_total_variance(50, 1.0).unwrap();
        let a = Grid::constant(2, 2, 0.7);
        let oracle = DiracOracle::new(a.clone(), s.clone());
        let x_t = Grid::from_vec(2, 2, vec![0.1, -0.4, 1.3, 0.9]).unwrap();
        for step in [1usize, 25, 50] {
            let eps = oracle.predict(&x_t, None, step).unwrap();
            let x0 = bridge::predict_x0(&x_t, &eps, step, &s).unwrap();
            for (got, want) in x0.data().iter().zip(a.data()) {
                assert!((got - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_posterior_at_far_endpoint_is_prior_mean() {
        let s = Schedule::with_total_variance(50, 1.0).unwrap();
        let m0 = Grid::constant(1, 1, 0.3);
        let x1 = Grid::constant(1, 1, 2.0);
        let oracle = GaussianOracle::new(m0, 0.25, x1.clone(), s).unwrap();
        let post = oracle.posterior_mean(&x1, 50).unwrap();
        assert_eq!(post.data()[0], 0.3);
    }

    #[test]
    fn gaussian_posterior_matches_hand_value() {
        // step where w0 = w1 = 0.5, var = 0.25 on a total-1 bridge;
        // prior N(0, 1), x1 = 0, x_t = 1:
        // mean = (0*0.25 + 0.5*1*1) / (0.25 + 0.25) = 1.0
        let s = Schedule::with_total_variance(50, 1.0).unwrap();
        let oracle = GaussianOracle::new(
            Grid::constant(1, 1, 0.0),
            1.0,
            Grid::constant(1, 1, 0.0),
            s,
        )
        .unwrap();
        let post = oracle.posterior_mean(&Grid::constant(1, 1, 1.0), 25).unwrap();
        assert!((post.data()[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn predict_rejects_step_zero() {
        let s = Schedule::with_total_variance(10, 1.0).unwrap();
        let oracle = DiracOracle::new(Grid::zeros(1, 1), s);
        assert!(oracle.predict(&Grid::zeros(1, 1), None, 0).is_err());
        assert!(oracle.predict(&Grid::zeros(1, 1), None, 11).is_err());
    }
}
