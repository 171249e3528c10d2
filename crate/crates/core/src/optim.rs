//! Adam and the shared mini-batch training loop with early stopping.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping; `None` disables.
    pub patience: Option<usize>,
    /// Global gradient-norm clip.
    pub clip_norm: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            batch_size: 32,
            max_epochs: 50,
            patience: Some(5),
            clip_norm: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs must be positive"));
        }
        if let Some(p) = self.patience {
            if p == 0 || p > self.max_epochs {
                return Err(Error::invalid(format!(
                    "patience {p} must lie in [1, max_epochs {}]",
                    self.max_epochs
                )));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::invalid(format!("clip_norm {c} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and epsilon be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Adam {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Full-pass training MSE (dropout off) after each epoch.
    pub train_loss: Vec<f64>,
    /// Validation MSE after each epoch; empty when no validation set was given.
    pub val_loss: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }
}

/// A differentiable training problem over a fixed set of examples.
pub(crate) trait Objective {
    fn train_len(&self) -> usize;

    /// Mean loss over `batch` (indices into the training set), adding its
    /// gradient into `grad`. Dropout masks are drawn from `rng`.
    fn loss_grad(&self, params: &[f64], batch: &[usize], rng: &mut ChaCha8Rng, grad: &mut [f64]) -> Result<f64>;

    fn train_loss(&self, params: &[f64]) -> Result<f64>;

    fn val_loss(&self, params: &[f64]) -> Result<Option<f64>>;
}

pub(crate) fn clip_gradient(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Inverted-dropout scale vector: `0` with probability `rate`, else `1/(1-rate)`.
pub(crate) fn dropout_scale(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 - rate;
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
        .collect()
}

/// Seeded mini-batch Adam with early stopping on validation loss (training
/// loss when there is no validation set). Returns the best parameters seen.
pub(crate) fn run<O: Objective>(objective: &O, init: Vec<f64>, cfg: &TrainConfig) -> Result<(Vec<f64>, TrainHistory)> {
    cfg.validate()?;
    let n = objective.train_len();
    if n == 0 {
        return Err(Error::invalid("empty training set"));
    }
    let mut params = init;
    let mut adam = Adam::new(params.len(), cfg);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);

    let mut history = TrainHistory::default();
    let mut best = (f64::INFINITY, params.clone());
    let mut stale = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; params.len()];

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut order_rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = objective
                .loss_grad(&params, batch, &mut dropout_rng, &mut grad)
                .map_err(|e| Error::Divergence {
                    epoch,
                    detail: e.to_string(),
                })?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    detail: format!("mini-batch loss {loss}"),
                });
            }
            if let Some(c) = cfg.clip_norm {
                clip_gradient(&mut grad, c);
            }
            adam.step(&mut params, &grad);
        }
        let diverged = |e: Error| Error::Divergence {
            epoch,
            detail: e.to_string(),
        };
        let train = objective.train_loss(&params).map_err(diverged)?;
        let val = objective.val_loss(&params).map_err(diverged)?;
        if !train.is_finite() || val.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                detail: format!("train loss {train}, val loss {val:?}"),
            });
        }
        history.train_loss.push(train);
        if let Some(v) = val {
            history.val_loss.push(v);
        }
        let monitored = val.unwrap_or(train);
        if monitored < best.0 {
            best = (monitored, params.clone());
            history.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if cfg.patience.is_some_and(|p| stale >= p) {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best.1, history))
}
