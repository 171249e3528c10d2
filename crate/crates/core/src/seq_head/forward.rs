use serde::{Deserialize, Serialize};

use super::params::{GruOffsets, ParamsRef, SeqHeadParams};
use crate::embedding::{EmbeddingSequence, PaddedBatch};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out[i] = bias[i] + Σ_j w[i, j] x[j]` for a row-major `rows × x.len()` matrix.
#[inline]
fn affine(w: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = bias[i] + dot(&w[i * cols..(i + 1) * cols], x);
    }
}

/// Per-step activations of one GRU layer, each `steps × H` row-major.
#[derive(Debug, Clone)]
pub(crate) struct LayerCache {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
    /// Recurrent candidate term `W_hn h_{t-1} + b_hn`, before the reset gate.
    pub hn: Vec<f64>,
}

pub(crate) fn gru_layer(values: &[f64], g: GruOffsets, hidden: usize, input: &[f64], steps: usize) -> LayerCache {
    let h = hidden;
    let h3 = 3 * h;
    let w_ih = &values[g.w_ih..g.w_ih + h3 * g.in_dim];
    let w_hh = &values[g.w_hh..g.w_hh + h3 * h];
    let b_ih = &values[g.b_ih..g.b_ih + h3];
    let b_hh = &values[g.b_hh..g.b_hh + h3];

    let mut cache = LayerCache {
        h: vec![0.0; steps * h],
        z: vec![0.0; steps * h],
        r: vec![0.0; steps * h],
        n: vec![0.0; steps * h],
        hn: vec![0.0; steps * h],
    };
    let mut gi = vec![0.0; h3];
    let mut gh = vec![0.0; h3];
    let zero = vec![0.0; h];
    for t in 0..steps {
        let x = &input[t * g.in_dim..(t + 1) * g.in_dim];
        affine(w_ih, b_ih, x, &mut gi);
        {
            let prev = if t == 0 { &zero[..] } else { &cache.h[(t - 1) * h..t * h] };
            affine(w_hh, b_hh, prev, &mut gh);
        }
        for j in 0..h {
            let idx = t * h + j;
            let z = sigmoid(gi[j] + gh[j]);
            let r = sigmoid(gi[h + j] + gh[h + j]);
            let hn = gh[2 * h + j];
            let n = (gi[2 * h + j] + r * hn).tanh();
            let prev = if t == 0 { 0.0 } else { cache.h[idx - h] };
            cache.z[idx] = z;
            cache.r[idx] = r;
            cache.n[idx] = n;
            cache.hn[idx] = hn;
            cache.h[idx] = (1.0 - z) * n + z * prev;
        }
    }
    cache
}

pub(crate) fn run_gru(params: &ParamsRef<'_>, x: &[f64], steps: usize) -> Vec<LayerCache> {
    let layout = params.layout();
    let mut caches: Vec<LayerCache> = Vec::with_capacity(layout.layers);
    for l in 0..layout.layers {
        let input = if l == 0 { x } else { &caches[l - 1].h[..] };
        let cache = gru_layer(params.values(), layout.gru(l), layout.hidden, input, steps);
        caches.push(cache);
    }
    caches
}

/// Masked softmax over `aᵀh_t` and the attention-weighted context vector.
///
/// Masked steps get weight exactly zero and never enter a sum.
pub fn attention_pool(hidden: &[f64], mask: &[bool], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (alpha, context, _) = attention_with_scores(hidden, mask, a)?;
    Ok((alpha, context))
}

/// Softmax over the unmasked scores after subtracting their maximum; masked
/// entries are exactly zero.
pub fn masked_softmax(scores: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if scores.len() != mask.len() {
        return Err(Error::Shape(format!("{} scores for {} mask entries", scores.len(), mask.len())));
    }
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::invalid("attention over a fully masked sequence"));
    }
    if !max.is_finite() {
        return Err(Error::NonFinite("attention scores".into()));
    }
    let mut alpha = vec![0.0; mask.len()];
    let mut total = 0.0;
    for ((al, &s), &m) in alpha.iter_mut().zip(scores).zip(mask) {
        if m {
            *al = (s - max).exp();
            total += *al;
        }
    }
    for (al, &m) in alpha.iter_mut().zip(mask) {
        if m {
            *al /= total;
        }
    }
    Ok(alpha)
}

pub(crate) fn attention_with_scores(
    hidden: &[f64],
    mask: &[bool],
    a: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let h = a.len();
    if h == 0 || hidden.len() != mask.len() * h {
        return Err(Error::Shape(format!(
            "hidden states of length {} do not match {} steps of width {h}",
            hidden.len(),
            mask.len()
        )));
    }
    let scores: Vec<f64> = hidden.chunks_exact(h).map(|ht| dot(a, ht)).collect();
    let alpha = masked_softmax(&scores, mask)?;
    let mut context = vec![0.0; h];
    for ((ht, &al), &m) in hidden.chunks_exact(h).zip(&alpha).zip(mask) {
        if m {
            for (c, &v) in context.iter_mut().zip(ht) {
                *c += al * v;
            }
        }
    }
    Ok((alpha, context, scores))
}

/// Everything the head computed for one sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardTrace {
    /// Top-layer hidden states, `steps × H` row-major.
    pub hidden: Vec<f64>,
    pub hidden_size: usize,
    pub mask: Vec<bool>,
    pub scores: Vec<f64>,
    pub alpha: Vec<f64>,
    pub context: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl ForwardTrace {
    pub fn steps(&self) -> usize {
        self.mask.len()
    }

    pub fn hidden_at(&self, t: usize) -> &[f64] {
        &self.hidden[t * self.hidden_size..(t + 1) * self.hidden_size]
    }

    /// First output, the usual single-trait prediction.
    pub fn scalar(&self) -> f64 {
        self.prediction[0]
    }

    /// Attention weights over the unmasked prefix.
    pub fn true_alpha(&self) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(&a, _)| a)
            .collect()
    }
}

/// Internal forward state kept for backpropagation.
pub(crate) struct Cache {
    pub layers: Vec<LayerCache>,
    pub alpha: Vec<f64>,
    /// Context after the dropout mask (equal to `context` at inference).
    pub head_input: Vec<f64>,
    pub prediction: Vec<f64>,
}

pub(crate) fn output_layer(params: &ParamsRef<'_>, input: &[f64]) -> Vec<f64> {
    let layout = params.layout();
    let w = &params.values()[layout.out_w()..layout.out_w() + layout.output * layout.hidden];
    let mut out = vec![0.0; layout.output];
    affine(w, params.output_bias(), input, &mut out);
    out
}

/// Forward pass over the first `steps` rows of `x` (all unmasked).
pub(crate) fn forward_cached(
    params: &ParamsRef<'_>,
    x: &[f64],
    steps: usize,
    dropout_scale: Option<&[f64]>,
) -> Result<Cache> {
    let layers = run_gru(params, x, steps);
    let mask = vec![true; steps];
    let top = &layers.last().expect("at least one layer").h;
    let (alpha, context, _) = attention_with_scores(top, &mask, params.attention())?;
    let head_input = match dropout_scale {
        Some(scale) => context.iter().zip(scale).map(|(c, s)| c * s).collect(),
        None => context.clone(),
    };
    let prediction = output_layer(params, &head_input);
    Ok(Cache {
        layers,
        alpha,
        head_input,
        prediction,
    })
}

fn check_dim(params: &SeqHeadParams, dim: usize) -> Result<()> {
    let expected = params.config().input_dim;
    if dim != expected {
        return Err(Error::Shape(format!(
            "embedding dim {dim} does not match model input dim {expected}"
        )));
    }
    Ok(())
}

/// Top-layer hidden states for every item and every padded step.
pub fn gru_forward(params: &SeqHeadParams, batch: &PaddedBatch) -> Result<Vec<Vec<f64>>> {
    check_dim(params, batch.dim)?;
    Ok((0..batch.batch_size())
        .map(|b| {
            let mut layers = run_gru(&params.view(), batch.item(b), batch.steps);
            layers.pop().expect("at least one layer").h
        })
        .collect())
}

fn trace_from(params: &ParamsRef<'_>, x: &[f64], mask: Vec<bool>) -> Result<ForwardTrace> {
    let steps = mask.len();
    let mut layers = run_gru(params, x, steps);
    let hidden = layers.pop().expect("at least one layer").h;
    let (alpha, context, scores) = attention_with_scores(&hidden, &mask, params.attention())?;
    let prediction = output_layer(params, &context);
    if prediction.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction".into()));
    }
    Ok(ForwardTrace {
        hidden,
        hidden_size: params.layout().hidden,
        mask,
        scores,
        alpha,
        context,
        prediction,
    })
}

/// Inference on one sequence; dropout is never applied here.
pub fn predict(params: &SeqHeadParams, seq: &EmbeddingSequence) -> Result<ForwardTrace> {
    check_dim(params, seq.dim())?;
    trace_from(&params.view(), &seq.to_f64(), vec![true; seq.len()])
}

/// Inference on every item of a padded batch.
pub fn predict_batch(params: &SeqHeadParams, batch: &PaddedBatch) -> Result<Vec<ForwardTrace>> {
    check_dim(params, batch.dim)?;
    (0..batch.batch_size())
        .map(|b| trace_from(&params.view(), batch.item(b), batch.item_mask(b).to_vec()))
        .collect()
}

/// Mean squared error over a flat batch of predictions.
pub fn loss_mse(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(sum / predictions.len() as f64)
}
