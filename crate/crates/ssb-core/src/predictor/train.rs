//! Training loop: per-iteration minibatches of (record, expert, step) triples
//! drawn from derived RNG streams, hand-written backprop through the network,
//! Adam updates.
//!
//! Reproducibility contract: every batch example b of iteration it draws all
//! of its randomness (record index, step, expert, label-dropout coin, bridge
//! noise) from the dedicated stream (seed, "train-example", it, b). Examples
//! are therefore independent of execution order; gradients are averaged in
//! example order, so runs are bit-identical at any rayon thread count.

use crate::bridge;
use crate::error::{Result, SsbError};
use crate::grid::Grid;
use crate::loss::{ssb_loss_grad, LossConfig};
use crate::predictor::{ArchConfig, ExpertId, TinyUNet};
use crate::rng::stream;
use crate::schedule::Schedule;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Optimizer iterations (minibatches), not epochs.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 8,
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 {
            return Err(SsbError::InvalidArgument("steps and batch must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(SsbError::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(SsbError::InvalidArgument(format!("{name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(SsbError::InvalidArgument(format!(
                "adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        self.loss.validate()
    }
}

/// One training example: an image and its per-expert masks (index k-1 holds
/// expert k).
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub image: Grid,
    pub masks: Vec<Grid>,
}

pub struct TrainOutcome {
    pub net: TinyUNet,
    /// Mean batch loss per iteration.
    pub loss_trace: Vec<f64>,
}

/// Standard Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Adam {
        Adam { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

fn validate_items(items: &[TrainItem], arch: &ArchConfig) -> Result<()> {
    if items.is_empty() {
        return Err(SsbError::InvalidArgument("training set is empty".into()));
    }
    for (i, item) in items.iter().enumerate() {
        if item.image.height() != arch.grid_size || item.image.width() != arch.grid_size {
            return Err(SsbError::InvalidArgument(format!(
                "item {i}: image is {}x{}, expected {}",
                item.image.height(),
                item.image.width(),
                arch.grid_size
            )));
        }
        if item.masks.len() != arch.eta as usize {
            return Err(SsbError::InvalidArgument(format!(
                "item {i}: has {} masks, architecture expects eta = {}",
                item.masks.len(),
                arch.eta
            )));
        }
        for (k, m) in item.masks.iter().enumerate() {
            item.image.check_same_shape(m, "train mask")?;
            if !m.is_binary() {
                return Err(SsbError::InvalidArgument(format!("item {i} mask {k} is not binary")));
            }
        }
    }
    Ok(())
}

/// Train a fresh network on the items. The network is initialized from
/// cfg.seed; all draw streams derive from the same seed under distinct
/// purposes.
pub fn train(
    items: &[TrainItem],
    arch: ArchConfig,
    cfg: &TrainConfig,
    s: &Schedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    validate_items(items, &arch)?;
    let mut net = TinyUNet::init(arch, cfg.seed)?;
    let mut adam = Adam::new(net.params().len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let n_steps = s.n_steps();
    let eta = net.arch().eta;
    for it in 0..cfg.steps {
        let results: Vec<Result<(f64, Vec<f64>)>> = (0..cfg.batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(
                    cfg.seed,
                    &[b"train-example", &(it as u64).to_le_bytes(), &(b as u64).to_le_bytes()],
                );
                let item = &items[rng.gen_range(0..items.len())];
                let step = rng.gen_range(1..=n_steps);
                let expert = rng.gen_range(1..=eta);
                let dropped = rng.gen::<f64>() < cfg.loss.label_drop_prob;
                let label = if dropped { None } else { Some(ExpertId::new(expert)?) };
                let x0 = &item.masks[(expert - 1) as usize];
                let x_t = bridge::sample_xt(x0, &item.image, step, s, &mut rng)?;
                let eps_target = bridge::training_target(&x_t, x0, step, s)?;
                let (eps_pred, tape) = net.forward_train(&x_t, label, step)?;
                let (loss, dldeps) =
                    ssb_loss_grad(&eps_pred, &eps_target, &x_t, s.sigma(step), x0, &cfg.loss)?;
                let grad = net.backward(&tape, &dldeps)?;
                Ok((loss, grad))
            })
            .collect();
        // Ordered reduction keeps the sum independent of thread scheduling.
        let mut grad_sum = vec![0.0; net.params().len()];
        let mut loss_sum = 0.0;
        for r in results {
            let (loss, grad) = r?;
            loss_sum += loss;
            for (acc, g) in grad_sum.iter_mut().zip(&grad) {
                *acc += g;
            }
        }
        let scale = 1.0 / cfg.batch as f64;
        let mean_loss = loss_sum * scale;
        if !mean_loss.is_finite() {
            return Err(SsbError::NonFiniteLoss { iteration: it });
        }
        grad_sum.iter_mut().for_each(|g| *g *= scale);
        adam.step(net.params_mut(), &grad_sum);
        loss_trace.push(mean_loss);
    }
    Ok(TrainOutcome { net, loss_trace })
}
