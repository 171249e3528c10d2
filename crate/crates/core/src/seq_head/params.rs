use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqHeadConfig {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    /// Applied to the context vector before the output layer, training only.
    pub dropout: f64,
    pub output_dim: usize,
    pub seed: u64,
}

impl SeqHeadConfig {
    pub fn new(input_dim: usize) -> Self {
        SeqHeadConfig {
            input_dim,
            hidden_size: 256,
            num_layers: 2,
            dropout: 0.1,
            output_dim: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_size == 0 || self.num_layers == 0 || self.output_dim == 0 {
            return Err(Error::invalid(
                "input_dim, hidden_size, num_layers and output_dim must be at least 1",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout {
            input_dim: self.input_dim,
            hidden: self.hidden_size,
            layers: self.num_layers,
            output: self.output_dim,
        }
    }
}

/// Offsets of one GRU layer's tensors inside the flat parameter vector.
///
/// Gate blocks are stacked in the order update (z), reset (r), candidate (n):
/// `w_ih` is `3H × in`, `w_hh` is `3H × H`, biases are `3H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GruOffsets {
    pub in_dim: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Layout {
    fn layer_size(&self, in_dim: usize) -> usize {
        let h3 = 3 * self.hidden;
        h3 * in_dim + h3 * self.hidden + 2 * h3
    }

    pub fn gru(&self, layer: usize) -> GruOffsets {
        let mut off = 0;
        for l in 0..layer {
            off += self.layer_size(self.in_dim(l));
        }
        let in_dim = self.in_dim(layer);
        let h3 = 3 * self.hidden;
        GruOffsets {
            in_dim,
            w_ih: off,
            w_hh: off + h3 * in_dim,
            b_ih: off + h3 * in_dim + h3 * self.hidden,
            b_hh: off + h3 * in_dim + h3 * self.hidden + h3,
        }
    }

    pub fn in_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    pub fn attention(&self) -> usize {
        (0..self.layers).map(|l| self.layer_size(self.in_dim(l))).sum()
    }

    pub fn out_w(&self) -> usize {
        self.attention() + self.hidden
    }

    pub fn out_b(&self) -> usize {
        self.out_w() + self.output * self.hidden
    }

    pub fn total(&self) -> usize {
        self.out_b() + self.output
    }

    /// Declared parameter ordering used by checkpoints.
    pub fn tensors(&self) -> Vec<TensorSpec> {
        let h = self.hidden;
        let mut specs = Vec::new();
        for l in 0..self.layers {
            let g = self.gru(l);
            specs.push(TensorSpec { name: format!("gru.{l}.w_ih"), shape: vec![3 * h, g.in_dim], offset: g.w_ih });
            specs.push(TensorSpec { name: format!("gru.{l}.w_hh"), shape: vec![3 * h, h], offset: g.w_hh });
            specs.push(TensorSpec { name: format!("gru.{l}.b_ih"), shape: vec![3 * h], offset: g.b_ih });
            specs.push(TensorSpec { name: format!("gru.{l}.b_hh"), shape: vec![3 * h], offset: g.b_hh });
        }
        specs.push(TensorSpec { name: "attention.a".into(), shape: vec![h], offset: self.attention() });
        specs.push(TensorSpec { name: "output.w".into(), shape: vec![self.output, h], offset: self.out_w() });
        specs.push(TensorSpec { name: "output.b".into(), shape: vec![self.output], offset: self.out_b() });
        specs
    }
}

/// All trainable parameters of the head in one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqHeadParams {
    config: SeqHeadConfig,
    values: Vec<f64>,
}

impl SeqHeadParams {
    pub fn zeros(config: &SeqHeadConfig) -> Result<Self> {
        config.validate()?;
        Ok(SeqHeadParams {
            config: *config,
            values: vec![0.0; config.layout().total()],
        })
    }

    pub fn from_values(config: &SeqHeadConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let expected = config.layout().total();
        if values.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameters".into()));
        }
        Ok(SeqHeadParams {
            config: *config,
            values,
        })
    }

    pub fn config(&self) -> &SeqHeadConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn attention(&self) -> &[f64] {
        self.view().attention()
    }

    pub fn output_bias(&self) -> &[f64] {
        self.view().output_bias()
    }

    pub(crate) fn view(&self) -> ParamsRef<'_> {
        ParamsRef {
            config: &self.config,
            values: &self.values,
        }
    }
}

/// Borrowed view over a parameter vector, used on the training hot path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ParamsRef<'a> {
    pub config: &'a SeqHeadConfig,
    pub values: &'a [f64],
}

impl<'a> ParamsRef<'a> {
    pub fn layout(&self) -> Layout {
        self.config.layout()
    }

    pub fn values(&self) -> &'a [f64] {
        self.values
    }

    pub fn attention(&self) -> &'a [f64] {
        let l = self.layout();
        &self.values[l.attention()..l.attention() + l.hidden]
    }

    pub fn output_bias(&self) -> &'a [f64] {
        let l = self.layout();
        &self.values[l.out_b()..l.out_b() + l.output]
    }
}

/// Glorot-uniform weights per gate block, zero biases; deterministic in `config.seed`.
pub fn init_params(config: &SeqHeadConfig) -> Result<SeqHeadParams> {
    let mut params = SeqHeadParams::zeros(config)?;
    let layout = config.layout();
    let h = layout.hidden;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fill = |slice: &mut [f64], fan_in: usize, fan_out: usize| {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for v in slice {
            *v = rng.gen_range(-limit..limit);
        }
    };
    let values = &mut params.values;
    for l in 0..layout.layers {
        let g = layout.gru(l);
        fill(&mut values[g.w_ih..g.w_ih + 3 * h * g.in_dim], g.in_dim, h);
        fill(&mut values[g.w_hh..g.w_hh + 3 * h * h], h, h);
    }
    let a = layout.attention();
    fill(&mut values[a..a + h], h, 1);
    let o = layout.out_w();
    fill(&mut values[o..o + layout.output * h], h, layout.output);
    Ok(params)
}
