//! Bridge sampling: forward draws of intermediate states, the training
//! target, classifier-free guidance, and the reverse chain that carries a
//! noise predictor from x1 back to x0.
//!
//! Reverse transition from step `from` to step `to` (to < from), given a
//! current state x and an estimate x0_hat:
//!     r = sigma_sq[to] / sigma_sq[from]
//!     mean = (1 - r) * x0_hat + r * x
//!     var  = sigma_sq[to] * (sigma_sq[from] - sigma_sq[to]) / sigma_sq[from]
//! This is the unique Gaussian kernel that composes to the correct bridge
//! marginals when x0_hat is held at the true x0: the marginal variance
//! satisfies r^2 * s_from^2 + var = s_to^2 exactly.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use crate::predictor::{ExpertId, Predictor};
use crate::rng::StreamRng;
use crate::schedule::Schedule;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Reverse-sampler knobs. `omega` is the guidance weight (0 = conditional
/// only), `nfe` the number of reverse transitions, `stochastic` toggles the
/// per-transition noise, `seed` roots the per-sample noise streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub omega: f64,
    pub nfe: usize,
    pub stochastic: bool,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { omega: 0.0, nfe: 50, stochastic: true, seed: 0 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega.is_finite() && self.omega >= 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "omega must be finite and nonnegative, got {}",
                self.omega
            )));
        }
        if self.nfe == 0 {
            return Err(SsbError::InvalidArgument("nfe must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draw x_step from the bridge marginal given both endpoints:
/// N(w0*x0 + w1*x1, var * I). Always consumes exactly one normal draw per
/// pixel, so callers' streams stay aligned across steps. Exact at the
/// endpoints: step 0 returns x0 and step n returns x1 bit for bit.
pub fn sample_xt(
    x0: &Grid,
    x1: &Grid,
    step: usize,
    s: &Schedule,
    rng: &mut StreamRng,
) -> Result<Grid> {
    x0.check_same_shape(x1, "sample_xt endpoints")?;
    let c = s.bridge_coeffs(step)?;
    let sd = c.var.sqrt();
    let mut out = Grid::zeros(x0.height(), x0.width());
    for i in 0..out.len() {
        let eps: f64 = rng.sample(StandardNormal);
        out.data_mut()[i] = c.w0 * x0.data()[i] + c.w1 * x1.data()[i] + sd * eps;
    }
    Ok(out)
}

/// Regression target for the noise head: (x_t - x0) / sigma(step).
/// Step 0 has sigma = 0 and no target.
pub fn training_target(x_t: &Grid, x0: &Grid, step: usize, s: &Schedule) -> Result<Grid> {
    if step == 0 || step > s.n_steps() {
        return Err(SsbError::InvalidArgument(format!(
            "training target step {step} out of range 1..={}",
            s.n_steps()
        )));
    }
    let sigma = s.sigma(step);
    x_t.zip_map(x0, |xt, x0| (xt - x0) / sigma)
}

/// Invert the noise parameterization: x0_hat = x_t - sigma(step) * eps.
/// No clamping; downstream consumers decide how to treat out-of-range values.
pub fn predict_x0(x_t: &Grid, eps: &Grid, step: usize, s: &Schedule) -> Result<Grid> {
    if step > s.n_steps() {
        return Err(SsbError::InvalidArgument(format!(
            "predict_x0 step {step} out of range 0..={}",
            s.n_steps()
        )));
    }
    let sigma = s.sigma(step);
    x_t.zip_map(eps, |xt, e| xt - sigma * e)
}

/// Classifier-free guided noise: (1 + omega) * eps_cond - omega * eps_uncond.
/// At omega == 0 the unconditional branch is never evaluated and the result
/// is bitwise the conditional prediction.
pub fn guided_eps(
    predictor: &dyn Predictor,
    x_t: &Grid,
    label: ExpertId,
    step: usize,
    omega: f64,
) -> Result<Grid> {
    if !(omega.is_finite() && omega >= 0.0) {
        return Err(SsbError::InvalidArgument(format!(
            "omega must be finite and nonnegative, got {omega}"
        )));
    }
    let cond = predictor.predict(x_t, Some(label), step)?;
    if omega == 0.0 {
        return Ok(cond);
    }
    let uncond = predictor.predict(x_t, None, step)?;
    cond.zip_map(&uncond, |c, u| (1.0 + omega) * c - omega * u)
}

/// One reverse transition; see the module header for the kernel. Requires
/// 0 <= to < from <= n_steps. Deterministic mean when `stochastic` is false.
/// A transition landing on step 0 returns x0_hat exactly (r = 0, var = 0).
pub fn reverse_step(
    x: &Grid,
    x0_hat: &Grid,
    from: usize,
    to: usize,
    s: &Schedule,
    stochastic: bool,
    rng: &mut StreamRng,
) -> Result<Grid> {
    if from > s.n_steps() || to >= from {
        return Err(SsbError::InvalidArgument(format!(
            "reverse step requires 0 <= to < from <= {}, got from={from} to={to}",
            s.n_steps()
        )));
    }
    let s_from = s.sigma_sq()[from];
    let s_to = s.sigma_sq()[to];
    if s_from <= 0.0 {
        return Err(SsbError::Domain(format!("sigma_sq[{from}] must be positive")));
    }
    let r = s_to / s_from;
    let var = s_to * (s_from - s_to) / s_from;
    if var < 0.0 {
        return Err(SsbError::Domain(format!("negative reverse variance at {from}->{to}")));
    }
    let sd = if stochastic { var.sqrt() } else { 0.0 };
    let mut out = Grid::zeros(x.height(), x.width());
    x.check_same_shape(x0_hat, "reverse_step state")?;
    for i in 0..out.len() {
        // Noise is drawn even when deterministic or at var = 0 so that a
        // fixed stream yields aligned draws across configurations.
        let eps: f64 = rng.sample(StandardNormal);
        out.data_mut()[i] = (1.0 - r) * x0_hat.data()[i] + r * x.data()[i] + sd * eps;
    }
    Ok(out)
}

/// Descending step ladder visiting nfe+1 schedule indices:
/// ladder[k] = round((nfe - k) * n_steps / nfe), so ladder[0] = n_steps and
/// ladder[nfe] = 0. Requires 1 <= nfe <= n_steps, which makes it strictly
/// decreasing.
pub fn step_ladder(n_steps: usize, nfe: usize) -> Result<Vec<usize>> {
    if nfe == 0 || nfe > n_steps {
        return Err(SsbError::InvalidArgument(format!(
            "nfe must be in 1..={n_steps}, got {nfe}"
        )));
    }
    let ladder: Vec<usize> = (0..=nfe)
        .rev()
        .map(|j| ((j * n_steps) as f64 / nfe as f64).round() as usize)
        .collect();
    debug_assert!(ladder.windows(2).all(|w| w[0] > w[1]));
    Ok(ladder)
}

/// Run the reverse chain from x1 down to step 0 and return the final state
/// (continuous; binarization is the caller's concern). One predictor call per
/// rung at omega = 0, two otherwise.
pub fn generate(
    predictor: &dyn Predictor,
    x1: &Grid,
    label: ExpertId,
    cfg: &SampleConfig,
    s: &Schedule,
    rng: &mut StreamRng,
) -> Result<Grid> {
    cfg.validate()?;
    let ladder = step_ladder(s.n_steps(), cfg.nfe)?;
    let mut x = x1.clone();
    for w in ladder.windows(2) {
        let (from, to) = (w[0], w[1]);
        let eps = guided_eps(predictor, &x, label, from, cfg.omega)?;
        let x0_hat = predict_x0(&x, &eps, from, s)?;
        x = reverse_step(&x, &x0_hat, from, to, s, cfg.stochastic, rng)?;
        if !x.is_finite() {
            return Err(SsbError::Generation {
                step: to,
                detail: "reverse chain state is not finite".into(),
            });
        }
    }
    Ok(x)
}
