//! Reverse-mode gradients of the batch MSE with respect to every head
//! parameter. Input embeddings are constants: no gradient is formed for the
//! bottom layer's inputs.

use super::forward::{forward_cached, Cache, LayerCache};
use super::params::{GruOffsets, ParamsRef, SeqHeadParams};
use crate::embedding::PaddedBatch;
use crate::error::{Error, Result};

/// Backpropagation through one GRU layer over all steps.
///
/// `dh` holds the gradient arriving at each step's output from above. Returns
/// the gradient with respect to the layer input when `want_input_grad`.
fn gru_layer_backward(
    values: &[f64],
    g: GruOffsets,
    hidden: usize,
    input: &[f64],
    cache: &LayerCache,
    dh: &[f64],
    grad: &mut [f64],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let h = hidden;
    let h3 = 3 * h;
    let in_dim = g.in_dim;
    let steps = dh.len() / h;
    let w_ih = &values[g.w_ih..g.w_ih + h3 * in_dim];
    let w_hh = &values[g.w_hh..g.w_hh + h3 * h];

    let mut dx = want_input_grad.then(|| vec![0.0; steps * in_dim]);
    let mut carry = vec![0.0; h];
    let mut dgi = vec![0.0; h3];
    let mut dgh = vec![0.0; h3];
    let zero = vec![0.0; h];

    for t in (0..steps).rev() {
        let prev = if t == 0 { &zero[..] } else { &cache.h[(t - 1) * h..t * h] };
        let x = &input[t * in_dim..(t + 1) * in_dim];
        let mut next_carry = vec![0.0; h];
        for j in 0..h {
            let idx = t * h + j;
            let (z, r, n, hn) = (cache.z[idx], cache.r[idx], cache.n[idx], cache.hn[idx]);
            let d = dh[idx] + carry[j];
            let dn = d * (1.0 - z);
            let dz = d * (prev[j] - n);
            next_carry[j] = d * z;
            let dan = dn * (1.0 - n * n);
            let dr = dan * hn;
            let daz = dz * z * (1.0 - z);
            let dar = dr * r * (1.0 - r);
            dgi[j] = daz;
            dgi[h + j] = dar;
            dgi[2 * h + j] = dan;
            dgh[j] = daz;
            dgh[h + j] = dar;
            dgh[2 * h + j] = dan * r;
        }
        for i in 0..h3 {
            let gi = dgi[i];
            if gi != 0.0 {
                let row = &mut grad[g.w_ih + i * in_dim..g.w_ih + (i + 1) * in_dim];
                for (gw, &xv) in row.iter_mut().zip(x) {
                    *gw += gi * xv;
                }
            }
            grad[g.b_ih + i] += gi;
            let gh = dgh[i];
            if gh != 0.0 && t > 0 {
                let row = &mut grad[g.w_hh + i * h..g.w_hh + (i + 1) * h];
                for (gw, &pv) in row.iter_mut().zip(prev) {
                    *gw += gh * pv;
                }
            }
            grad[g.b_hh + i] += gh;
        }
        if let Some(dx) = dx.as_mut() {
            let dxt = &mut dx[t * in_dim..(t + 1) * in_dim];
            for i in 0..h3 {
                let gi = dgi[i];
                if gi != 0.0 {
                    for (d, &w) in dxt.iter_mut().zip(&w_ih[i * in_dim..(i + 1) * in_dim]) {
                        *d += gi * w;
                    }
                }
            }
        }
        if t > 0 {
            for i in 0..h3 {
                let gh = dgh[i];
                if gh != 0.0 {
                    for (c, &w) in next_carry.iter_mut().zip(&w_hh[i * h..(i + 1) * h]) {
                        *c += gh * w;
                    }
                }
            }
        }
        carry = next_carry;
    }
    dx
}

/// Adds the gradient of `Σ_k dpred[k] · prediction[k]` to `grad`.
pub(crate) fn accumulate(params: &ParamsRef<'_>, x: &[f64], cache: &Cache, dpred: &[f64], dropout_scale: Option<&[f64]>, grad: &mut [f64]) {
    let layout = params.layout();
    let h = layout.hidden;
    let values = params.values();
    let steps = cache.alpha.len();

    // output layer
    let ow = layout.out_w();
    let mut dhead = vec![0.0; h];
    for (k, &dp) in dpred.iter().enumerate() {
        let wrow = &values[ow + k * h..ow + (k + 1) * h];
        let grow = &mut grad[ow + k * h..ow + (k + 1) * h];
        for j in 0..h {
            grow[j] += dp * cache.head_input[j];
            dhead[j] += dp * wrow[j];
        }
        grad[layout.out_b() + k] += dp;
    }
    let dc: Vec<f64> = match dropout_scale {
        Some(scale) => dhead.iter().zip(scale).map(|(d, s)| d * s).collect(),
        None => dhead,
    };

    // attention pooling
    let top = &cache.layers.last().expect("at least one layer").h;
    let a = params.attention();
    let dalpha: Vec<f64> = top.chunks_exact(h).map(|ht| super::forward::dot(&dc, ht)).collect();
    let mean: f64 = cache.alpha.iter().zip(&dalpha).map(|(al, da)| al * da).sum();
    let mut dh = vec![0.0; steps * h];
    let ga = layout.attention();
    for t in 0..steps {
        let al = cache.alpha[t];
        let ds = al * (dalpha[t] - mean);
        let ht = &top[t * h..(t + 1) * h];
        for j in 0..h {
            grad[ga + j] += ds * ht[j];
            dh[t * h + j] = al * dc[j] + ds * a[j];
        }
    }

    // recurrent stack, top layer first
    for l in (0..layout.layers).rev() {
        let input = if l == 0 { x } else { &cache.layers[l - 1].h[..] };
        let below = gru_layer_backward(values, layout.gru(l), h, input, &cache.layers[l], &dh, grad, l > 0);
        match below {
            Some(d) => dh = d,
            None => break,
        }
    }
}

/// Mean-MSE loss of a set of (rows, steps, target) items and its gradient.
///
/// `dropout` supplies one per-item context scaling vector (already divided by
/// the keep probability); `None` evaluates the deterministic network.
pub(crate) fn loss_and_grad(
    params: &ParamsRef<'_>,
    items: &[(&[f64], usize)],
    targets: &[&[f64]],
    dropout: Option<&[Vec<f64>]>,
    grad: &mut [f64],
) -> Result<f64> {
    let out = params.layout().output;
    let denom = (items.len() * out) as f64;
    let mut loss = 0.0;
    for (b, &(x, steps)) in items.iter().enumerate() {
        let scale = dropout.map(|d| &d[b][..]);
        let cache = forward_cached(params, x, steps, scale)?;
        let y = targets[b];
        let mut dpred = vec![0.0; out];
        for k in 0..out {
            let r = cache.prediction[k] - y[k];
            loss += r * r;
            dpred[k] = 2.0 * r / denom;
        }
        accumulate(params, x, &cache, &dpred, scale, grad);
    }
    let loss = loss / denom;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("gradient".into()));
    }
    Ok(loss)
}

/// Loss and exact gradient for a padded batch (dropout disabled).
///
/// `targets` is `batch × output_dim`, row-major. The returned gradient uses
/// the parameter layout of `params`.
pub fn backward(params: &SeqHeadParams, batch: &PaddedBatch, targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let out = params.layout().output;
    if batch.dim != params.config().input_dim {
        return Err(Error::Shape(format!(
            "batch dim {} does not match model input dim {}",
            batch.dim,
            params.config().input_dim
        )));
    }
    if targets.len() != batch.batch_size() * out {
        return Err(Error::Shape(format!(
            "{} targets for {} items of {out} outputs",
            targets.len(),
            batch.batch_size()
        )));
    }
    let items: Vec<(&[f64], usize)> = (0..batch.batch_size())
        .map(|b| (batch.item(b), batch.lengths[b]))
        .collect();
    let ys: Vec<&[f64]> = targets.chunks_exact(out).collect();
    let mut grad = vec![0.0; params.values().len()];
    let loss = loss_and_grad(&params.view(), &items, &ys, None, &mut grad)?;
    Ok((loss, grad))
}
