use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
use crate::error::{Error, Result};
use crate::evaluation::Standardizer;
use crate::optim::{self, dropout_scale, Objective, TrainConfig, TrainHistory};
use crate::seq_head::TensorSpec;
use crate::traits::TraitId;

/// Two-layer MLP over a mean-pooled embedding: `D → hidden (tanh) → 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfnConfig {
    pub input_dim: usize,
    pub hidden: usize,
    /// Dropout on the hidden activations during training.
    pub dropout: f64,
    pub seed: u64,
}

impl FfnConfig {
    pub fn new(input_dim: usize) -> Self {
        FfnConfig {
            input_dim,
            hidden: 256,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("FFN input and hidden sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let w1 = 0;
        let b1 = self.hidden * self.input_dim;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.hidden;
        (w1, b1, w2, b2)
    }

    pub fn num_params(&self) -> usize {
        self.offsets().3 + 1
    }

    pub fn tensors(&self) -> Vec<TensorSpec> {
        let (w1, b1, w2, b2) = self.offsets();
        vec![
            TensorSpec { name: "ffn.w1".into(), shape: vec![self.hidden, self.input_dim], offset: w1 },
            TensorSpec { name: "ffn.b1".into(), shape: vec![self.hidden], offset: b1 },
            TensorSpec { name: "ffn.w2".into(), shape: vec![1, self.hidden], offset: w2 },
            TensorSpec { name: "ffn.b2".into(), shape: vec![1], offset: b2 },
        ]
    }

    fn init(&self) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut p = vec![0.0; self.num_params()];
        let (w1, b1, w2, b2) = self.offsets();
        let l1 = (6.0 / (self.input_dim + self.hidden) as f64).sqrt();
        p[w1..b1].iter_mut().for_each(|v| *v = rng.gen_range(-l1..l1));
        let l2 = (6.0 / (self.hidden + 1) as f64).sqrt();
        p[w2..b2].iter_mut().for_each(|v| *v = rng.gen_range(-l2..l2));
        p
    }
}

fn forward(cfg: &FfnConfig, p: &[f64], x: &[f64], mask: Option<&[f64]>) -> (Vec<f64>, f64) {
    let (w1, b1, w2, b2) = cfg.offsets();
    let d = cfg.input_dim;
    let mut hidden = vec![0.0; cfg.hidden];
    let mut y = p[b2];
    for (j, h) in hidden.iter_mut().enumerate() {
        let row = &p[w1 + j * d..w1 + (j + 1) * d];
        let a = p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        *h = a.tanh();
        let kept = mask.map_or(*h, |m| *h * m[j]);
        y += p[w2 + j] * kept;
    }
    (hidden, y)
}

/// Adds `dy · ∂y/∂params` for one example.
fn accumulate(cfg: &FfnConfig, p: &[f64], x: &[f64], hidden: &[f64], mask: Option<&[f64]>, dy: f64, grad: &mut [f64]) {
    let (w1, b1, w2, b2) = cfg.offsets();
    let d = cfg.input_dim;
    grad[b2] += dy;
    for (j, &h) in hidden.iter().enumerate() {
        let m = mask.map_or(1.0, |m| m[j]);
        grad[w2 + j] += dy * h * m;
        let da = dy * p[w2 + j] * m * (1.0 - h * h);
        if da != 0.0 {
            grad[b1 + j] += da;
            for (g, &v) in grad[w1 + j * d..w1 + (j + 1) * d].iter_mut().zip(x) {
                *g += da * v;
            }
        }
    }
}

/// Mean-MSE loss and exact gradient with dropout disabled.
pub fn ffn_loss_and_grad(cfg: &FfnConfig, params: &[f64], x: &[Vec<f64>], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    if params.len() != cfg.num_params() || x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape("FFN parameter or batch shape mismatch".into()));
    }
    let mut grad = vec![0.0; params.len()];
    let n = x.len() as f64;
    let mut loss = 0.0;
    for (xi, &yi) in x.iter().zip(y) {
        let (hidden, pred) = forward(cfg, params, xi, None);
        let r = pred - yi;
        loss += r * r / n;
        accumulate(cfg, params, xi, &hidden, None, 2.0 * r / n, &mut grad);
    }
    Ok((loss, grad))
}

struct FfnObjective<'a> {
    cfg: &'a FfnConfig,
    x: &'a [Vec<f64>],
    y: &'a [f64],
    val_x: &'a [Vec<f64>],
    val_y: &'a [f64],
}

fn mean_loss(cfg: &FfnConfig, p: &[f64], x: &[Vec<f64>], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    x.iter()
        .zip(y)
        .map(|(xi, yi)| {
            let r = forward(cfg, p, xi, None).1 - yi;
            r * r
        })
        .sum::<f64>()
        / n
}

impl Objective for FfnObjective<'_> {
    fn train_len(&self) -> usize {
        self.x.len()
    }

    fn loss_grad(&self, p: &[f64], batch: &[usize], rng: &mut ChaCha8Rng, grad: &mut [f64]) -> Result<f64> {
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for &i in batch {
            let mask = (self.cfg.dropout > 0.0).then(|| dropout_scale(rng, self.cfg.hidden, self.cfg.dropout));
            let (hidden, pred) = forward(self.cfg, p, &self.x[i], mask.as_deref());
            let r = pred - self.y[i];
            loss += r * r / n;
            accumulate(self.cfg, p, &self.x[i], &hidden, mask.as_deref(), 2.0 * r / n, grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss".into()));
        }
        Ok(loss)
    }

    fn train_loss(&self, p: &[f64]) -> Result<f64> {
        Ok(mean_loss(self.cfg, p, self.x, self.y))
    }

    fn val_loss(&self, p: &[f64]) -> Result<Option<f64>> {
        Ok((!self.val_x.is_empty()).then(|| mean_loss(self.cfg, p, self.val_x, self.val_y)))
    }
}

/// Trains the FFN with the same optimizer and early-stopping contract as the
/// sequence head.
pub fn ffn_fit(
    cfg: &FfnConfig,
    x: &[Vec<f64>],
    y: &[f64],
    val_x: &[Vec<f64>],
    val_y: &[f64],
    train_config: &TrainConfig,
) -> Result<FfnModel> {
    cfg.validate()?;
    if x.len() != y.len() || val_x.len() != val_y.len() {
        return Err(Error::Shape("features and targets differ in length".into()));
    }
    if x.iter().chain(val_x).any(|r| r.len() != cfg.input_dim) {
        return Err(Error::Shape(format!("feature rows must have width {}", cfg.input_dim)));
    }
    let objective = FfnObjective { cfg, x, y, val_x, val_y };
    let (params, history) = optim::run(&objective, cfg.init(), train_config)?;
    Ok(FfnModel {
        config: *cfg,
        params,
        trait_id: None,
        standardizer: None,
        history: Some(history),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FfnModel {
    pub config: FfnConfig,
    pub params: Vec<f64>,
    pub trait_id: Option<TraitId>,
    pub standardizer: Option<Standardizer>,
    pub history: Option<TrainHistory>,
}

#[derive(Serialize, Deserialize)]
struct FfnMeta {
    config: FfnConfig,
    trait_id: Option<TraitId>,
    standardizer: Option<Standardizer>,
    history: Option<TrainHistory>,
}

impl FfnModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        forward(&self.config, &self.params, x, None).1
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            header: CheckpointHeader {
                kind: ModelKind::Ffn,
                parameter_order: self.config.tensors(),
                meta: serde_json::to_value(FfnMeta {
                    config: self.config,
                    trait_id: self.trait_id,
                    standardizer: self.standardizer,
                    history: self.history.clone(),
                })?,
            },
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::Ffn)?;
        let meta: FfnMeta = serde_json::from_value(ck.header.meta)?;
        if ck.params.len() != meta.config.num_params() {
            return Err(Error::Checkpoint("parameter count does not match FFN config".into()));
        }
        Ok(FfnModel {
            config: meta.config,
            params: ck.params,
            trait_id: meta.trait_id,
            standardizer: meta.standardizer,
            history: meta.history,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::r2;

    fn data(n: usize, d: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let y = x
            .iter()
            .map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + rng.gen_range(-0.05..0.05))
            .collect();
        (x, y)
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = FfnConfig { input_dim: 4, hidden: 5, dropout: 0.0, seed: 2 };
        let mut p = cfg.init();
        // non-zero biases so every parameter has a non-trivial gradient
        let (_, b1, _, b2) = cfg.offsets();
        p[b1..b1 + 5].iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64 - 0.2);
        p[b2] = 0.3;
        let (x, y) = data(6, 4, 1);
        let (_, grad) = ffn_loss_and_grad(&cfg, &p, &x, &y).unwrap();
        let eps = 1e-5;
        for i in 0..p.len() {
            let mut a = p.clone();
            a[i] += eps;
            let mut b = p.clone();
            b[i] -= eps;
            let fd = (mean_loss(&cfg, &a, &x, &y) - mean_loss(&cfg, &b, &x, &y)) / (2.0 * eps);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
            assert!(rel < 1e-4, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn learns_linear_target() {
        let (x, y) = data(300, 6, 3);
        let (train_x, val_x) = x.split_at(240);
        let (train_y, val_y) = y.split_at(240);
        let cfg = FfnConfig { input_dim: 6, hidden: 32, dropout: 0.0, seed: 1 };
        let tc = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 32,
            max_epochs: 150,
            patience: Some(15),
            seed: 4,
            ..TrainConfig::default()
        };
        let model = ffn_fit(&cfg, train_x, train_y, val_x, val_y, &tc).unwrap();
        let preds: Vec<f64> = val_x.iter().map(|r| model.predict(r)).collect();
        let score = r2(val_y, &preds).unwrap();
        assert!(score > 0.9, "val R² {score}");
        let again = ffn_fit(&cfg, train_x, train_y, val_x, val_y, &tc).unwrap();
        assert_eq!(again, model);
        let back = FfnModel::from_checkpoint(Checkpoint::from_bytes(&model.to_checkpoint().unwrap().to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
