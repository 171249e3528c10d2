//! Attention profiles, window removal, cross-trait overlap and their exports.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingSequence;
use crate::error::{Error, Result};
use crate::evaluation::Standardizer;
use crate::seq_head::SeqHeadModel;
use crate::traits::{ScoreScale, TraitId};
use crate::windowing::WindowPlan;

/// Removal percentages are undefined when the prediction before removal is
/// within this many trait standard deviations of zero.
pub const UNDEFINED_PERCENT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub transcript_id: String,
    #[serde(rename = "trait")]
    pub trait_id: Option<TraitId>,
    /// Attention over the true windows only.
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spans: Option<Vec<(usize, usize)>>,
    pub prediction: f64,
    pub scale: ScoreScale,
}

impl AttentionProfile {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn argmax(&self) -> usize {
        top_k_windows(&self.alpha, 1).map(|t| t.indices[0]).unwrap_or(0)
    }

    /// Attaches token spans; the plan must have one span per window.
    pub fn with_spans(mut self, plan: &WindowPlan) -> Result<Self> {
        if plan.len() != self.alpha.len() {
            return Err(Error::Shape(format!(
                "plan has {} windows, profile {}",
                plan.len(),
                self.alpha.len()
            )));
        }
        self.spans = Some(plan.spans.clone());
        Ok(self)
    }
}

/// Attention weights and prediction for one sequence. With a standardizer the
/// prediction is reported on the raw score scale.
pub fn attention_profile(
    model: &SeqHeadModel,
    seq: &EmbeddingSequence,
    standardizer: Option<&Standardizer>,
) -> Result<AttentionProfile> {
    let trace = model.predict(seq)?;
    let (prediction, scale) = match standardizer {
        Some(st) => (st.invert(trace.scalar()), ScoreScale::Raw),
        None => (trace.scalar(), ScoreScale::Standardized),
    };
    Ok(AttentionProfile {
        transcript_id: seq.transcript_id().to_string(),
        trait_id: model.trait_id,
        alpha: trace.true_alpha(),
        spans: None,
        prediction,
        scale,
    })
}

/// Profiles for many sequences, computed in parallel, in input order.
pub fn attention_profiles(
    model: &SeqHeadModel,
    seqs: &[&EmbeddingSequence],
    standardizer: Option<&Standardizer>,
) -> Result<Vec<AttentionProfile>> {
    seqs.par_iter()
        .map(|s| attention_profile(model, s, standardizer))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopK {
    pub indices: Vec<usize>,
    /// Set when more windows were requested than exist.
    pub truncated: bool,
}

/// Indices of the `k` largest weights, descending; ties go to the lower index.
pub fn top_k_windows(alpha: &[f64], k: usize) -> Result<TopK> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if alpha.is_empty() {
        return Err(Error::invalid("empty attention profile"));
    }
    let mut order: Vec<usize> = (0..alpha.len()).collect();
    order.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(TopK {
        indices: order,
        truncated: k > alpha.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactResult {
    pub removed: usize,
    /// Raw-scale predictions.
    pub before: f64,
    pub after: f64,
    /// `after − before`.
    pub delta: f64,
    /// `100 · (before − after) / |before|`; `None` when `before` is too close
    /// to zero for a percentage to mean anything.
    pub percent_change: Option<f64>,
}

/// Deletes window `index`, re-packs the remaining windows and re-predicts.
pub fn removal_impact(
    model: &SeqHeadModel,
    seq: &EmbeddingSequence,
    index: usize,
    standardizer: &Standardizer,
) -> Result<ImpactResult> {
    let shorter = seq.without_row(index)?;
    let before = standardizer.invert(model.predict_scalar(seq)?);
    let after = standardizer.invert(model.predict_scalar(&shorter)?);
    let percent_change = (before.abs() >= UNDEFINED_PERCENT_THRESHOLD * standardizer.std)
        .then(|| 100.0 * (before - after) / before.abs());
    Ok(ImpactResult {
        removed: index,
        before,
        after,
        delta: after - before,
        percent_change,
    })
}

pub fn jaccard(a: &[usize], b: &[usize]) -> f64 {
    let a: BTreeSet<usize> = a.iter().copied().collect();
    let b: BTreeSet<usize> = b.iter().copied().collect();
    let union = a.union(&b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Pairwise Jaccard similarity of the top-`k` window sets of profiles of the
/// same transcript (typically one per trait).
pub fn trait_overlap(profiles: &[AttentionProfile], k: usize) -> Result<Vec<Vec<f64>>> {
    if profiles.len() < 2 {
        return Err(Error::invalid("overlap needs at least two profiles"));
    }
    let first = &profiles[0];
    for p in &profiles[1..] {
        if p.transcript_id != first.transcript_id || p.len() != first.len() {
            return Err(Error::Shape(format!(
                "profiles differ: {} ({} windows) vs {} ({} windows)",
                first.transcript_id,
                first.len(),
                p.transcript_id,
                p.len()
            )));
        }
    }
    let tops: Vec<Vec<usize>> = profiles
        .iter()
        .map(|p| top_k_windows(&p.alpha, k).map(|t| t.indices))
        .collect::<Result<_>>()?;
    Ok(tops
        .iter()
        .map(|a| tops.iter().map(|b| jaccard(a, b)).collect())
        .collect())
}

/// One row of the heatmap export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub transcript_id: String,
    #[serde(rename = "trait")]
    pub trait_id: Option<TraitId>,
    pub prediction: f64,
    pub top_k: Vec<usize>,
    pub alpha: Vec<f64>,
}

fn heatmap_rows(profiles: &[AttentionProfile], k: usize) -> Result<Vec<HeatmapRow>> {
    profiles
        .iter()
        .map(|p| {
            Ok(HeatmapRow {
                transcript_id: p.transcript_id.clone(),
                trait_id: p.trait_id,
                prediction: p.prediction,
                top_k: top_k_windows(&p.alpha, k)?.indices,
                alpha: p.alpha.clone(),
            })
        })
        .collect()
}

/// Writes the profiles as CSV at `csv_path` (columns `transcript_id, trait,
/// prediction, top_k, a0 … a{T−1}`, short rows padded with empty cells) and
/// as JSON next to it with the `.json` extension.
pub fn export_heatmap(profiles: &[AttentionProfile], k: usize, csv_path: &Path) -> Result<()> {
    if profiles.is_empty() {
        return Err(Error::invalid("no profiles to export"));
    }
    let rows = heatmap_rows(profiles, k)?;
    let width = rows.iter().map(|r| r.alpha.len()).max().unwrap_or(0);

    let mut w = csv::Writer::from_path(csv_path)?;
    let mut header: Vec<String> = ["transcript_id", "trait", "prediction", "top_k"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|t| format!("a{t}")));
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![
            r.transcript_id.clone(),
            r.trait_id.map(|t| t.name().to_string()).unwrap_or_default(),
            r.prediction.to_string(),
            r.top_k.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"),
        ];
        rec.extend((0..width).map(|t| r.alpha.get(t).map(|a| a.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(csv_path, e))?;

    let json_path = csv_path.with_extension("json");
    fs::write(&json_path, serde_json::to_string_pretty(&rows)?).map_err(|e| Error::io(&json_path, e))
}

/// Reads a CSV written by [`export_heatmap`].
pub fn read_heatmap(csv_path: &Path) -> Result<Vec<HeatmapRow>> {
    let mut r = csv::Reader::from_path(csv_path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let bad = |what: &str| Error::invalid(format!("heatmap row {}: bad {what}", rows.len()));
        let trait_id = match field(1) {
            "" => None,
            s => Some(s.parse().map_err(|_| bad("trait"))?),
        };
        let top_k = field(3)
            .split(';')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad("top_k")))
            .collect::<Result<_>>()?;
        let alpha = (4..rec.len())
            .map(field)
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad("alpha")))
            .collect::<Result<_>>()?;
        rows.push(HeatmapRow {
            transcript_id: field(0).to_string(),
            trait_id,
            prediction: field(2).parse().map_err(|_| bad("prediction"))?,
            top_k,
            alpha,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopWindow {
    pub rank: usize,
    pub index: usize,
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopWindowsRecord {
    pub transcript_id: String,
    #[serde(rename = "trait")]
    pub trait_id: Option<TraitId>,
    pub windows: Vec<TopWindow>,
}

/// One JSON line per profile listing its top-`k` windows (with token spans
/// when known), for downstream topic modeling of the window texts.
pub fn export_top_windows(profiles: &[AttentionProfile], k: usize, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for p in profiles {
        let top = top_k_windows(&p.alpha, k)?;
        let rec = TopWindowsRecord {
            transcript_id: p.transcript_id.clone(),
            trait_id: p.trait_id,
            windows: top
                .indices
                .iter()
                .enumerate()
                .map(|(rank, &index)| TopWindow {
                    rank,
                    index,
                    alpha: p.alpha[index],
                    span: p.spans.as_ref().map(|s| s[index]),
                })
                .collect(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
