//! Recurrent regression head over frozen window embeddings.
//!
//! A unidirectional multi-layer GRU runs over the window embeddings, a
//! bias-free attention vector scores each top-layer hidden state, the
//! softmax-weighted context vector passes through (training-time) dropout
//! and a linear output layer. Only the head's parameters are trained.

mod backward;
mod forward;
mod params;

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use backward::backward;
pub use forward::{attention_pool, gru_forward, loss_mse, masked_softmax, predict, predict_batch, ForwardTrace};
pub use params::{init_params, GruOffsets, Layout, SeqHeadConfig, SeqHeadParams, TensorSpec};

use crate::checkpoint::{Checkpoint, CheckpointHeader, ModelKind};
use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::evaluation::Standardizer;
use crate::optim::{self, dropout_scale, Objective, TrainConfig, TrainHistory};
use crate::traits::TraitId;
use params::ParamsRef;

/// One training example: a sequence and its (standardized) target vector.
#[derive(Debug, Clone)]
pub struct Sample<'a> {
    pub sequence: &'a EmbeddingSequence,
    pub target: Vec<f64>,
}

struct Prepared {
    rows: Vec<Vec<f64>>,
    lengths: Vec<usize>,
    targets: Vec<Vec<f64>>,
}

impl Prepared {
    /// Sorts by transcript id so presentation order never leaks into results.
    fn new(samples: &[Sample<'_>], config: &SeqHeadConfig) -> Result<Self> {
        let mut sorted: Vec<&Sample<'_>> = samples.iter().collect();
        sorted.sort_by(|a, b| a.sequence.transcript_id().cmp(b.sequence.transcript_id()));
        for s in &sorted {
            if s.sequence.dim() != config.input_dim {
                return Err(Error::Shape(format!(
                    "{} has dim {} but the head expects {}",
                    s.sequence.transcript_id(),
                    s.sequence.dim(),
                    config.input_dim
                )));
            }
            if s.target.len() != config.output_dim {
                return Err(Error::Shape(format!(
                    "target of {} has {} values, expected {}",
                    s.sequence.transcript_id(),
                    s.target.len(),
                    config.output_dim
                )));
            }
            if s.target.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("target of {}", s.sequence.transcript_id())));
            }
        }
        Ok(Prepared {
            rows: sorted.iter().map(|s| s.sequence.to_f64()).collect(),
            lengths: sorted.iter().map(|s| s.sequence.len()).collect(),
            targets: sorted.iter().map(|s| s.target.clone()).collect(),
        })
    }

    fn len(&self) -> usize {
        self.rows.len()
    }

    fn loss(&self, params: &ParamsRef<'_>) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for ((x, &steps), y) in self.rows.iter().zip(&self.lengths).zip(&self.targets) {
            let cache = forward::forward_cached(params, x, steps, None)?;
            for (p, t) in cache.prediction.iter().zip(y) {
                total += (p - t) * (p - t);
                count += 1;
            }
        }
        Ok(total / count as f64)
    }
}

struct SeqObjective<'c> {
    config: &'c SeqHeadConfig,
    train: Prepared,
    val: Option<Prepared>,
}

impl Objective for SeqObjective<'_> {
    fn train_len(&self) -> usize {
        self.train.len()
    }

    fn loss_grad(&self, values: &[f64], batch: &[usize], rng: &mut ChaCha8Rng, grad: &mut [f64]) -> Result<f64> {
        let params = ParamsRef {
            config: self.config,
            values,
        };
        let items: Vec<(&[f64], usize)> = batch
            .iter()
            .map(|&i| (&self.train.rows[i][..], self.train.lengths[i]))
            .collect();
        let ys: Vec<&[f64]> = batch.iter().map(|&i| &self.train.targets[i][..]).collect();
        let masks: Option<Vec<Vec<f64>>> = (self.config.dropout > 0.0).then(|| {
            batch
                .iter()
                .map(|_| dropout_scale(rng, self.config.hidden_size, self.config.dropout))
                .collect()
        });
        backward::loss_and_grad(&params, &items, &ys, masks.as_deref(), grad)
    }

    fn train_loss(&self, values: &[f64]) -> Result<f64> {
        self.train.loss(&ParamsRef {
            config: self.config,
            values,
        })
    }

    fn val_loss(&self, values: &[f64]) -> Result<Option<f64>> {
        self.val
            .as_ref()
            .map(|v| {
                v.loss(&ParamsRef {
                    config: self.config,
                    values,
                })
            })
            .transpose()
    }
}

/// Trains a head with mini-batch Adam and early stopping on `val` (or on the
/// training loss when `val` is empty). Deterministic given the two seeds.
pub fn fit(
    config: &SeqHeadConfig,
    train: &[Sample<'_>],
    val: &[Sample<'_>],
    train_config: &TrainConfig,
) -> Result<SeqHeadModel> {
    config.validate()?;
    train_config.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let objective = SeqObjective {
        config,
        train: Prepared::new(train, config)?,
        val: if val.is_empty() {
            None
        } else {
            Some(Prepared::new(val, config)?)
        },
    };
    let init = init_params(config)?.into_values();
    let (values, history) = optim::run(&objective, init, train_config)?;
    Ok(SeqHeadModel {
        params: SeqHeadParams::from_values(config, values)?,
        trait_id: None,
        standardizer: None,
        train_config: Some(train_config.clone()),
        history: Some(history),
    })
}

/// A trained head plus what is needed to report on the raw score scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqHeadModel {
    pub params: SeqHeadParams,
    pub trait_id: Option<TraitId>,
    pub standardizer: Option<Standardizer>,
    pub train_config: Option<TrainConfig>,
    pub history: Option<TrainHistory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SeqHeadMeta {
    config: SeqHeadConfig,
    trait_id: Option<TraitId>,
    standardizer: Option<Standardizer>,
    train_config: Option<TrainConfig>,
    history: Option<TrainHistory>,
}

impl SeqHeadModel {
    pub fn from_params(params: SeqHeadParams) -> Self {
        SeqHeadModel {
            params,
            trait_id: None,
            standardizer: None,
            train_config: None,
            history: None,
        }
    }

    pub fn config(&self) -> &SeqHeadConfig {
        self.params.config()
    }

    pub fn predict(&self, seq: &EmbeddingSequence) -> Result<ForwardTrace> {
        predict(&self.params, seq)
    }

    /// Scalar prediction on the model's training scale.
    pub fn predict_scalar(&self, seq: &EmbeddingSequence) -> Result<f64> {
        Ok(self.predict(seq)?.scalar())
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let meta = SeqHeadMeta {
            config: *self.config(),
            trait_id: self.trait_id,
            standardizer: self.standardizer,
            train_config: self.train_config.clone(),
            history: self.history.clone(),
        };
        Ok(Checkpoint {
            header: CheckpointHeader {
                kind: ModelKind::SeqHead,
                parameter_order: self.params.layout().tensors(),
                meta: serde_json::to_value(meta)?,
            },
            params: self.params.values().to_vec(),
        })
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        ck.expect_kind(ModelKind::SeqHead)?;
        let meta: SeqHeadMeta = serde_json::from_value(ck.header.meta)?;
        if ck.header.parameter_order != meta.config.layout().tensors() {
            return Err(Error::Checkpoint("parameter order does not match the configuration".into()));
        }
        Ok(SeqHeadModel {
            params: SeqHeadParams::from_values(&meta.config, ck.params)?,
            trait_id: meta.trait_id,
            standardizer: meta.standardizer,
            train_config: meta.train_config,
            history: meta.history,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.write(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::read(path)?)
    }
}
