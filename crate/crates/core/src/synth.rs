//! Planted-signal synthetic datasets at the embedding level.
//!
//! Every row is isotropic Gaussian noise with standard deviation
//! `1 / snr`. Planted rows additionally carry a unit marker direction and a
//! latent value `z` along an orthogonal unit direction `u`, so an oracle that
//! knows where the planted rows are can read `z` off linearly.
//!
//! * `Linear`: `y = β z + √(1 − β²) ε` with `β² = ev · (1 + σ²)`, which makes
//!   the population R² of a linear readout of one planted row equal to the
//!   requested explainable variance `ev`.
//! * `Sequential`: two motifs A and B each carry `z`; the target also depends
//!   on which motif comes first (`s = ±1`):
//!   `y = a z + b s + c ε` with `a² = ev (1 − ρ)(1 + σ²/2)`, `b² = ev ρ`.
//!   Any order-blind pooling can explain at most `ev (1 − ρ)`.
//!
//! Standardized targets are mapped to a raw scale `raw_mean + raw_sd · y`,
//! resampling the rare draws that fall outside the instrument range.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{save_embedding_file, write_window_predictions, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::manifest::{Dataset, DatasetManifest, EncoderProvenance, Item, ManifestEntry, DEFAULT_MIN_WORDS};
use crate::traits::{ScoreScale, TraitId, TraitScores, RAW_SCORE_RANGE};
use crate::windowing::WindowParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    Linear,
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n: usize,
    pub dim: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Planted rows per transcript for `Linear` (`Sequential` always plants two motifs).
    pub planted: usize,
    pub snr: f64,
    pub target_kind: TargetKind,
    pub explainable_variance: f64,
    /// Share of the explainable variance carried by motif order (`Sequential`).
    pub order_share: f64,
    /// Length of the marker component of planted rows.
    pub marker_gain: f64,
    pub signal_trait: TraitId,
    /// Raw-scale mean of the signal trait; defaults to that trait's population mean.
    pub raw_mean: Option<f64>,
    pub raw_sd: Option<f64>,
    pub window: WindowParams,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n: 200,
            dim: 32,
            t_min: 5,
            t_max: 20,
            planted: 1,
            snr: 5.0,
            target_kind: TargetKind::Linear,
            explainable_variance: 0.9,
            order_share: 0.6,
            marker_gain: 3.0,
            signal_trait: TraitId::Openness,
            raw_mean: None,
            raw_sd: None,
            window: WindowParams::default(),
            seed: 0,
        }
    }
}

/// Population raw-score mean and standard deviation per trait.
pub const TRAIT_STATS: [(f64, f64); 5] = [
    (113.84, 19.31),
    (125.19, 19.7),
    (109.0, 19.4),
    (131.45, 16.5),
    (72.97, 21.7),
];

impl SynthSpec {
    pub fn sequential() -> Self {
        SynthSpec {
            target_kind: TargetKind::Sequential,
            ..SynthSpec::default()
        }
    }

    /// Raw-scale mean and standard deviation of the signal trait.
    pub fn raw_scale(&self) -> (f64, f64) {
        let (m, s) = TRAIT_STATS[self.signal_trait.index()];
        (self.raw_mean.unwrap_or(m), self.raw_sd.unwrap_or(s))
    }

    pub fn noise_sigma(&self) -> f64 {
        1.0 / self.snr
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.n == 0 {
            return fail("n must be positive".into());
        }
        if self.dim < 3 {
            return fail(format!("dim {} too small: need room for three orthogonal directions", self.dim));
        }
        self.window.validate()?;
        if self.t_min < 1 || self.t_min > self.t_max || self.t_max > self.window.cap {
            return fail(format!(
                "need 1 <= t_min ({}) <= t_max ({}) <= cap ({})",
                self.t_min, self.t_max, self.window.cap
            ));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return fail(format!("snr {} must be positive", self.snr));
        }
        if !(self.explainable_variance > 0.0 && self.explainable_variance <= 1.0) {
            return fail(format!("explainable variance {} outside (0, 1]", self.explainable_variance));
        }
        let (raw_mean, raw_sd) = self.raw_scale();
        if !(raw_sd > 0.0) || !raw_mean.is_finite() {
            return fail("raw scale needs finite mean and positive sd".into());
        }
        match self.target_kind {
            TargetKind::Linear => {
                if self.planted < 1 || self.planted > self.t_min {
                    return fail(format!("planted {} must lie in [1, t_min {}]", self.planted, self.t_min));
                }
            }
            TargetKind::Sequential => {
                if self.t_min < 2 {
                    return fail("sequential data needs at least two windows".into());
                }
                if !(0.0..=1.0).contains(&self.order_share) {
                    return fail(format!("order share {} outside [0, 1]", self.order_share));
                }
            }
        }
        let (a, b) = self.coefficients();
        if a * a + b * b > 1.0 + 1e-12 {
            return fail(format!(
                "explainable variance {} unattainable at snr {}",
                self.explainable_variance, self.snr
            ));
        }
        Ok(())
    }

    /// Loadings of the latent value and of the order sign on the standardized target.
    fn coefficients(&self) -> (f64, f64) {
        let s2 = self.noise_sigma().powi(2);
        let ev = self.explainable_variance;
        match self.target_kind {
            TargetKind::Linear => ((ev * (1.0 + s2)).sqrt(), 0.0),
            TargetKind::Sequential => (
                (ev * (1.0 - self.order_share) * (1.0 + s2 / 2.0)).sqrt(),
                (ev * self.order_share).sqrt(),
            ),
        }
    }

    fn residual_loading(&self) -> f64 {
        let (a, b) = self.coefficients();
        (1.0 - a * a - b * b).max(0.0).sqrt()
    }

    /// Raw target implied by the latent parts.
    pub fn raw_target(&self, signal: f64, order_sign: Option<i8>, residual: f64) -> f64 {
        let (a, b) = self.coefficients();
        let s = order_sign.map_or(0.0, f64::from);
        let (m, sd) = self.raw_scale();
        m + sd * (a * signal + b * s + self.residual_loading() * residual)
    }
}

/// Ground truth for one transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub transcript_id: String,
    /// Planted row indices; for sequential data `[motif A, motif B]`.
    pub planted_indices: Vec<usize>,
    /// Raw-scale target of the signal trait, equal to the manifest target.
    pub latent_target: f64,
    pub noise_sigma: f64,
    /// Latent value `z` written into the planted rows.
    pub signal: f64,
    /// `+1` when motif A precedes motif B, `-1` otherwise (sequential only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_sign: Option<i8>,
    /// Unobservable residual `ε`.
    pub residual: f64,
}

impl SidecarRecord {
    /// Target after reordering rows so that new row `i` is old row `order[i]`.
    pub fn target_after_reorder(&self, spec: &SynthSpec, order: &[usize]) -> f64 {
        let sign = self.order_sign.map(|_| {
            let pos = |old: usize| order.iter().position(|&o| o == old).expect("permutation");
            if pos(self.planted_indices[0]) < pos(self.planted_indices[1]) {
                1
            } else {
                -1
            }
        });
        spec.raw_target(self.signal, sign, self.residual)
    }
}

/// Unit directions used by the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Directions {
    pub marker_a: Vec<f64>,
    pub marker_b: Vec<f64>,
    pub latent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub directions: Directions,
    pub sequences: Vec<EmbeddingSequence>,
    pub targets: Vec<TraitScores>,
    pub n_tokens: Vec<usize>,
    pub genders: Vec<u8>,
    pub window_predictions: Vec<Vec<f32>>,
    pub truth: Vec<SidecarRecord>,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn orthonormal(rng: &mut ChaCha8Rng, dim: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    basis
}

fn token_count(rng: &mut ChaCha8Rng, t: usize, w: &WindowParams) -> usize {
    if t == 1 {
        rng.gen_range(DEFAULT_MIN_WORDS.min(w.w)..=w.w)
    } else {
        let hi = w.w + (t - 1) * w.s;
        rng.gen_range(hi - w.s + 1..=hi)
    }
}

/// Builds the dataset in memory; deterministic in `spec.seed`. Each
/// transcript draws from its own ChaCha stream.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut shared = ChaCha8Rng::seed_from_u64(spec.seed);
    let dirs = orthonormal(&mut shared, spec.dim, 3);
    let directions = Directions {
        marker_a: dirs[0].clone(),
        marker_b: dirs[1].clone(),
        latent: dirs[2].clone(),
    };
    let sigma = spec.noise_sigma();
    let width = (spec.n.max(2) - 1).to_string().len();

    let mut data = SynthData {
        spec: spec.clone(),
        directions: directions.clone(),
        sequences: Vec::with_capacity(spec.n),
        targets: Vec::with_capacity(spec.n),
        n_tokens: Vec::with_capacity(spec.n),
        genders: Vec::with_capacity(spec.n),
        window_predictions: Vec::with_capacity(spec.n),
        truth: Vec::with_capacity(spec.n),
    };

    for i in 0..spec.n {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64 + 1);
        let id = format!("synth-{i:0width$}");
        let t = rng.gen_range(spec.t_min..=spec.t_max);

        let (planted, order_sign) = match spec.target_kind {
            TargetKind::Linear => {
                let mut idx = sample(&mut rng, t, spec.planted).into_vec();
                idx.sort_unstable();
                (idx, None)
            }
            TargetKind::Sequential => {
                let idx = sample(&mut rng, t, 2).into_vec();
                let sign = if idx[0] < idx[1] { 1 } else { -1 };
                (idx, Some(sign))
            }
        };

        let (signal, residual, raw) = loop {
            let z = gaussian(&mut rng);
            let e = gaussian(&mut rng);
            let raw = spec.raw_target(z, order_sign, e);
            if (RAW_SCORE_RANGE.0..=RAW_SCORE_RANGE.1).contains(&raw) {
                break (z, e, raw);
            }
        };

        let mut rows = vec![0.0f64; t * spec.dim];
        rows.iter_mut().for_each(|v| *v = sigma * gaussian(&mut rng));
        for (k, &p) in planted.iter().enumerate() {
            let marker = if spec.target_kind == TargetKind::Sequential && k == 1 {
                &directions.marker_b
            } else {
                &directions.marker_a
            };
            let row = &mut rows[p * spec.dim..(p + 1) * spec.dim];
            for ((v, m), u) in row.iter_mut().zip(marker).zip(&directions.latent) {
                *v += spec.marker_gain * m + signal * u;
            }
        }
        let sequence = EmbeddingSequence::new(
            id.clone(),
            spec.dim,
            rows.iter().map(|&v| v as f32).collect(),
            spec.window.cap,
        )?;

        let mut values = [0.0; 5];
        for (k, trait_id) in TraitId::ALL.into_iter().enumerate() {
            values[k] = if trait_id == spec.signal_trait {
                raw
            } else {
                let (m, s) = TRAIT_STATS[k];
                (m + s * gaussian(&mut rng)).clamp(RAW_SCORE_RANGE.0, RAW_SCORE_RANGE.1)
            };
        }

        // stand-in for per-window fine-tuned predictions: planted windows see the
        // order-blind part of the target, others are noise around the mean
        let (a, _) = spec.coefficients();
        let (raw_mean, raw_sd) = spec.raw_scale();
        let preds = (0..t)
            .map(|w| {
                let centre = if planted.contains(&w) {
                    raw_mean + raw_sd * a * signal
                } else {
                    raw_mean
                };
                (centre + 0.5 * raw_sd * gaussian(&mut rng)) as f32
            })
            .collect();

        data.n_tokens.push(token_count(&mut rng, t, &spec.window));
        data.genders.push(rng.gen_range(0..2));
        data.targets.push(TraitScores::new(ScoreScale::Raw, values));
        data.window_predictions.push(preds);
        data.truth.push(SidecarRecord {
            transcript_id: id,
            planted_indices: planted,
            latent_target: raw,
            noise_sigma: sigma,
            signal,
            order_sign,
            residual,
        });
        data.sequences.push(sequence);
    }
    Ok(data)
}

impl SynthData {
    pub fn to_dataset(&self) -> Dataset {
        Dataset {
            provenance: EncoderProvenance::PT,
            scale: ScoreScale::Raw,
            dim: self.spec.dim,
            window: self.spec.window,
            items: self
                .sequences
                .iter()
                .enumerate()
                .map(|(i, s)| Item {
                    sequence: s.clone(),
                    targets: self.targets[i].clone(),
                    n_tokens: self.n_tokens[i],
                    gender: Some(self.genders[i]),
                    window_predictions: Some(self.window_predictions[i].clone()),
                })
                .collect(),
        }
    }

    pub fn manifest(&self) -> DatasetManifest {
        DatasetManifest {
            encoder_provenance: EncoderProvenance::PT,
            embedding_dim: self.spec.dim,
            window: self.spec.window,
            entries: self
                .sequences
                .iter()
                .enumerate()
                .map(|(i, s)| ManifestEntry {
                    transcript_id: s.transcript_id().to_string(),
                    embedding_file_path: Path::new("embeddings").join(format!("{}.ltre", s.transcript_id())),
                    targets: self.targets[i].clone(),
                    n_tokens: self.n_tokens[i],
                    gender: Some(self.genders[i]),
                })
                .collect(),
        }
    }

    /// Writes `manifest.json`, `sidecar.json` and `embeddings/<id>.{ltre,preds}`
    /// under `dir`; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let emb = dir.join("embeddings");
        fs::create_dir_all(&emb).map_err(|e| Error::io(&emb, e))?;
        for (seq, preds) in self.sequences.iter().zip(&self.window_predictions) {
            save_embedding_file(seq, emb.join(format!("{}.ltre", seq.transcript_id())))?;
            write_window_predictions(preds, emb.join(format!("{}.preds", seq.transcript_id())))?;
        }
        let manifest_path = dir.join("manifest.json");
        self.manifest().write(&manifest_path)?;
        let sidecar = dir.join("sidecar.json");
        fs::write(&sidecar, serde_json::to_string_pretty(&self.truth)?).map_err(|e| Error::io(&sidecar, e))?;
        Ok(manifest_path)
    }
}

pub fn gen_dataset(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    let data = generate(spec)?;
    data.write(dir)?;
    Ok(data)
}

pub fn gen_sequential_dataset(spec: &SynthSpec, dir: &Path) -> Result<SynthData> {
    if spec.target_kind != TargetKind::Sequential {
        return Err(Error::invalid("gen_sequential_dataset needs target_kind = sequential"));
    }
    gen_dataset(spec, dir)
}

pub fn read_sidecar(path: &Path) -> Result<Vec<SidecarRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
