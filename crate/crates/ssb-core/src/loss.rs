//! Training loss: noise-matching mean squared error plus a soft-Dice penalty
//! that pulls the implied mask estimate toward the expert mask.
//!
//! ```text
//! loss = mean((eps_pred - eps_target)^2)
//!      + gamma * (1 - soft_dice(x0_pred, x0_true))
//! ```
//!
//! where x0_pred = clamp01(x_t - sigma * eps_pred). The Dice penalty vanishes
//! on a perfect mask and tops out at gamma. The ablation flag `dice_on_eps`
//! instead feeds the raw noise prediction to the Dice term (the literal
//! reading of the overlap penalty); it exists for comparison runs and is off
//! by default.

use crate::error::{Result, SsbError};
use crate::grid::Grid;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the Dice penalty. Zero disables it.
    pub gamma: f64,
    /// Additive smoothing in the soft Dice; keeps empty/empty at 1.
    pub dice_smooth: f64,
    /// Probability that a training example drops its expert label and trains
    /// the unconditional path.
    pub label_drop_prob: f64,
    /// Ablation: compute the Dice term on eps_pred instead of x0_pred.
    pub dice_on_eps: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { gamma: 0.5, dice_smooth: 1.0, label_drop_prob: 0.1, dice_on_eps: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "gamma must be finite and nonnegative, got {}",
                self.gamma
            )));
        }
        if !(self.dice_smooth.is_finite() && self.dice_smooth > 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "dice_smooth must be finite and positive, got {}",
                self.dice_smooth
            )));
        }
        if !(0.0..=1.0).contains(&self.label_drop_prob) {
            return Err(SsbError::InvalidArgument(format!(
                "label_drop_prob must be in [0, 1], got {}",
                self.label_drop_prob
            )));
        }
        Ok(())
    }
}

/// Elementwise clamp to [0, 1].
pub fn clamp01(g: &Grid) -> Grid {
    g.map(|v| v.clamp(0.0, 1.0))
}

/// Mass-form soft Dice: (2*sum(p*t) + smooth) / (sum(p) + sum(t) + smooth).
/// Equals 1 for a perfect match, including the empty/empty case.
pub fn soft_dice(pred: &Grid, truth: &Grid, smooth: f64) -> Result<f64> {
    pred.check_same_shape(truth, "soft_dice")?;
    if !(smooth.is_finite() && smooth > 0.0) {
        return Err(SsbError::InvalidArgument(format!(
            "dice smoothing must be finite and positive, got {smooth}"
        )));
    }
    let mut inter = 0.0;
    let mut mass = 0.0;
    for (p, t) in pred.data().iter().zip(truth.data()) {
        inter += p * t;
        mass += p + t;
    }
    Ok((2.0 * inter + smooth) / (mass + smooth))
}

/// Loss value from precomputed pieces. `x0_pred` is whatever the caller's
/// pipeline produced (normally clamp01 of the implied x0); no clamping
/// happens here.
pub fn ssb_loss(
    eps_pred: &Grid,
    eps_target: &Grid,
    x0_pred: &Grid,
    x0_true: &Grid,
    cfg: &LossConfig,
) -> Result<f64> {
    cfg.validate()?;
    eps_pred.check_same_shape(eps_target, "ssb_loss noise")?;
    if !(eps_pred.is_finite() && eps_target.is_finite() && x0_pred.is_finite()) {
        return Err(SsbError::Domain("ssb_loss input is not finite".into()));
    }
    let n = eps_pred.len() as f64;
    let mut mse = 0.0;
    for (p, t) in eps_pred.data().iter().zip(eps_target.data()) {
        let d = p - t;
        mse += d * d;
    }
    mse /= n;
    let dice_pred = if cfg.dice_on_eps { eps_pred } else { x0_pred };
    let dice = soft_dice(dice_pred, x0_true, cfg.dice_smooth)?;
    let loss = mse + cfg.gamma * (1.0 - dice);
    if !loss.is_finite() {
        return Err(SsbError::Domain("ssb_loss value is not finite".into()));
    }
    Ok(loss)
}

/// Loss and its gradient with respect to eps_pred, with the x0 estimate tied
/// to the prediction through x0_pred = clamp01(x_t - sigma * eps_pred).
///
/// The clamp passes gradient only strictly inside (0, 1); a pixel pinned at
/// the boundary contributes nothing to the Dice gradient.
pub fn ssb_loss_grad(
    eps_pred: &Grid,
    eps_target: &Grid,
    x_t: &Grid,
    sigma: f64,
    x0_true: &Grid,
    cfg: &LossConfig,
) -> Result<(f64, Grid)> {
    cfg.validate()?;
    eps_pred.check_same_shape(eps_target, "ssb_loss_grad noise")?;
    eps_pred.check_same_shape(x_t, "ssb_loss_grad state")?;
    eps_pred.check_same_shape(x0_true, "ssb_loss_grad mask")?;
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(SsbError::InvalidArgument(format!(
            "sigma must be finite and positive, got {sigma}"
        )));
    }
    let raw = x_t.zip_map(eps_pred, |xt, e| xt - sigma * e)?;
    let x0_pred = clamp01(&raw);
    let loss = ssb_loss(eps_pred, eps_target, &x0_pred, x0_true, cfg)?;

    let n = eps_pred.len() as f64;
    let mut grad = Grid::zeros(eps_pred.height(), eps_pred.width());
    // Dice pieces: dice = a / b with a = 2*inter + smooth, b = mass + smooth.
    let dice_input: &Grid = if cfg.dice_on_eps { eps_pred } else { &x0_pred };
    let mut inter = 0.0;
    let mut mass = 0.0;
    for (p, t) in dice_input.data().iter().zip(x0_true.data()) {
        inter += p * t;
        mass += p + t;
    }
    let a = 2.0 * inter + cfg.dice_smooth;
    let b = mass + cfg.dice_smooth;
    for i in 0..grad.len() {
        let d_mse = 2.0 * (eps_pred.data()[i] - eps_target.data()[i]) / n;
        // d(dice)/d(input_i) = (2*t_i*b - a) / b^2
        let t_i = x0_true.data()[i];
        let d_dice_d_input = (2.0 * t_i * b - a) / (b * b);
        let d_penalty = if cfg.dice_on_eps {
            -cfg.gamma * d_dice_d_input
        } else {
            let r = raw.data()[i];
            let pass = r > 0.0 && r < 1.0;
            if pass {
                // d(input)/d(eps) = -sigma
                cfg.gamma * d_dice_d_input * sigma
            } else {
                0.0
            }
        };
        grad.data_mut()[i] = d_mse + d_penalty;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_dice_perfect_and_empty() {
        let t = Grid::from_vec(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(soft_dice(&t, &t, 1.0).unwrap(), 1.0);
        let z = Grid::zeros(1, 4);
        assert_eq!(soft_dice(&z, &z, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn soft_dice_hand_value() {
        // p = [1,1], t = [1,0], smooth = 1: (2*1 + 1) / (2 + 1 + 1) = 0.75
        let p = Grid::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let t = Grid::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        assert!((soft_dice(&p, &t, 1.0).unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn loss_is_zero_on_perfect_prediction() {
        let eps = Grid::from_vec(1, 4, vec![0.3, -0.2, 0.9, 0.0]).unwrap();
        let mask = Grid::from_vec(1, 4, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let cfg = LossConfig::default();
        let loss = ssb_loss(&eps, &eps, &mask, &mask, &cfg).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn dice_penalty_tops_out_at_gamma() {
        // Disjoint unit masses with tiny smoothing: penalty approaches gamma.
        let eps = Grid::zeros(1, 2);
        let pred = Grid::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let truth = Grid::from_vec(1, 2, vec![0.0, 1.0]).unwrap();
        let cfg = LossConfig { gamma: 0.5, dice_smooth: 1e-9, ..LossConfig::default() };
        let loss = ssb_loss(&eps, &eps, &pred, &truth, &cfg).unwrap();
        assert!((loss - 0.5).abs() < 1e-8);
    }

    #[test]
    fn rejects_non_finite() {
        let bad = Grid::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        let ok = Grid::zeros(1, 2);
        let cfg = LossConfig::default();
        assert!(ssb_loss(&bad, &ok, &ok, &ok, &cfg).is_err());
    }

    fn fd_check(cfg: &LossConfig) {
        // Values engineered so every implied x0 sits strictly inside (0, 1)
        // and at least 1e-2 from the clamp kinks; the FD quotient is then
        // valid for both loss variants.
        let x_t = Grid::from_vec(2, 3, vec![0.45, 0.62, 0.38, 0.51, 0.57, 0.44]).unwrap();
        let eps = Grid::from_vec(2, 3, vec![0.2, -0.3, 0.15, -0.1, 0.25, -0.2]).unwrap();
        let tgt = Grid::from_vec(2, 3, vec![0.1, 0.1, -0.2, 0.3, -0.15, 0.05]).unwrap();
        let mask = Grid::from_vec(2, 3, vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap();
        let sigma = 0.5;
        for v in x_t.data().iter().zip(eps.data()).map(|(xt, e)| xt - sigma * e) {
            assert!(v > 0.01 && v < 0.99, "fixture leaves the safe interior: {v}");
        }
        let (_, grad) = ssb_loss_grad(&eps, &tgt, &x_t, sigma, &mask, cfg).unwrap();
        let h = 1e-6;
        for i in 0..eps.len() {
            let mut plus = eps.clone();
            plus.data_mut()[i] += h;
            let mut minus = eps.clone();
            minus.data_mut()[i] -= h;
            let (lp, _) = ssb_loss_grad(&plus, &tgt, &x_t, sigma, &mask, cfg).unwrap();
            let (lm, _) = ssb_loss_grad(&minus, &tgt, &x_t, sigma, &mask, cfg).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let an = grad.data()[i];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-12);
            assert!(rel < 1e-7, "coord {i}: fd {fd} vs analytic {an} rel {rel}");
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        fd_check(&LossConfig::default());
        fd_check(&LossConfig { gamma: 0.9, dice_smooth: 0.5, ..LossConfig::default() });
        fd_check(&LossConfig { dice_on_eps: true, ..LossConfig::default() });
        fd_check(&LossConfig { gamma: 0.0, ..LossConfig::default() });
    }

    #[test]
    fn clamp_blocks_gradient_outside_unit_interval() {
        // One pixel pushed far below 0: its Dice gradient must be exactly the
        // mse part.
        let x_t = Grid::from_vec(1, 2, vec![0.5, -2.0]).unwrap();
        let eps = Grid::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        let tgt = Grid::zeros(1, 2);
        let mask = Grid::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let (_, grad) = ssb_loss_grad(&eps, &tgt, &x_t, 0.5, &mask, &LossConfig::default()).unwrap();
        assert_eq!(grad.data()[1], 0.0);
        assert_ne!(grad.data()[0], 0.0);
    }
}
