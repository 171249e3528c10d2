//! Dataset manifest: which transcripts exist, where their embeddings live,
//! and what they should predict.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{load_embedding_file_with_cap, EmbeddingSequence};
use crate::error::{Error, Result};
use crate::traits::{ScoreScale, TraitId, TraitScores};
use crate::windowing::WindowParams;

pub const DEFAULT_MIN_WORDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderProvenance {
    /// Pretrained encoder used as-is.
    PT,
    /// Encoder fine-tuned on the regression task before extraction.
    FT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub transcript_id: String,
    /// Relative paths resolve against the manifest's directory.
    pub embedding_file_path: PathBuf,
    pub targets: TraitScores,
    pub n_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gender: Option<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub encoder_provenance: EncoderProvenance,
    pub embedding_dim: usize,
    pub window: WindowParams,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, base_dir: &Path, entry: &ManifestEntry) -> PathBuf {
        if entry.embedding_file_path.is_absolute() {
            entry.embedding_file_path.clone()
        } else {
            base_dir.join(&entry.embedding_file_path)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId,
    MissingFile { path: PathBuf },
    UnreadableFile { path: PathBuf, reason: String },
    IdMismatch { file_id: String },
    DimMismatch { declared: usize, found: usize },
    BelowMinimumLength { n_tokens: usize, min_words: usize },
    WindowCountMismatch { expected: usize, found: usize },
    TargetOutOfRange { traits: Vec<TraitId> },
}

impl Violation {
    pub fn describe(&self) -> String {
        match self {
            Violation::DuplicateId => "duplicate transcript_id".into(),
            Violation::MissingFile { path } => format!("missing file {}", path.display()),
            Violation::UnreadableFile { path, reason } => {
                format!("unreadable file {}: {reason}", path.display())
            }
            Violation::IdMismatch { file_id } => format!("file declares transcript id {file_id:?}"),
            Violation::DimMismatch { declared, found } => {
                format!("dimension {found} does not match declared {declared}")
            }
            Violation::BelowMinimumLength { n_tokens, min_words } => {
                format!("below minimum length ({n_tokens} < {min_words})")
            }
            Violation::WindowCountMismatch { expected, found } => {
                format!("window count mismatch: plan gives {expected}, file has {found}")
            }
            Violation::TargetOutOfRange { traits } => {
                let names: Vec<_> = traits.iter().map(|t| t.name()).collect();
                format!("target out of range for {}", names.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub transcript_id: String,
    pub violation: Violation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub min_words: usize,
    /// Compare each file's row count with the manifest's window plan.
    pub check_window_counts: bool,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            min_words: DEFAULT_MIN_WORDS,
            check_window_counts: true,
        }
    }
}

/// Lists every problem with the manifest; never filters entries itself.
pub fn validate_manifest(
    manifest: &DatasetManifest,
    base_dir: &Path,
    opts: &ValidationOptions,
) -> ValidationReport {
    let mut findings = Vec::new();
    let mut push = |id: &str, violation| {
        findings.push(Finding {
            transcript_id: id.to_string(),
            violation,
        })
    };
    let mut seen = HashSet::new();
    for entry in &manifest.entries {
        let id = entry.transcript_id.as_str();
        if !seen.insert(id) {
            push(id, Violation::DuplicateId);
        }
        if entry.n_tokens < opts.min_words.max(1) {
            push(
                id,
                Violation::BelowMinimumLength {
                    n_tokens: entry.n_tokens,
                    min_words: opts.min_words,
                },
            );
        }
        let bad = entry.targets.violations();
        if !bad.is_empty() {
            push(id, Violation::TargetOutOfRange { traits: bad });
        }
        let path = manifest.resolve(base_dir, entry);
        if !path.is_file() {
            push(id, Violation::MissingFile { path });
            continue;
        }
        let seq = match load_embedding_file_with_cap(&path, manifest.window.cap) {
            Ok(s) => s,
            Err(e) => {
                push(
                    id,
                    Violation::UnreadableFile {
                        path,
                        reason: e.to_string(),
                    },
                );
                continue;
            }
        };
        if seq.transcript_id() != id {
            push(
                id,
                Violation::IdMismatch {
                    file_id: seq.transcript_id().to_string(),
                },
            );
        }
        if seq.dim() != manifest.embedding_dim {
            push(
                id,
                Violation::DimMismatch {
                    declared: manifest.embedding_dim,
                    found: seq.dim(),
                },
            );
        }
        if opts.check_window_counts && entry.n_tokens > 0 {
            if let Ok(expected) = manifest.window.count(entry.n_tokens) {
                if expected != seq.len() {
                    push(
                        id,
                        Violation::WindowCountMismatch {
                            expected,
                            found: seq.len(),
                        },
                    );
                }
            }
        }
    }
    ValidationReport { findings }
}

/// A manifest entry with its embeddings loaded.
#[derive(Debug, Clone)]
pub struct Item {
    pub sequence: EmbeddingSequence,
    pub targets: TraitScores,
    pub n_tokens: usize,
    pub gender: Option<u8>,
    /// Per-window scalar predictions, when a `.preds` sidecar exists.
    pub window_predictions: Option<Vec<f32>>,
}

impl Item {
    pub fn id(&self) -> &str {
        self.sequence.transcript_id()
    }

    pub fn target(&self, t: TraitId) -> f64 {
        self.targets.get(t)
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub provenance: EncoderProvenance,
    pub scale: ScoreScale,
    pub dim: usize,
    pub window: WindowParams,
    pub items: Vec<Item>,
}

impl Dataset {
    /// Loads every embedding file; per-window predictions are picked up from
    /// a sibling `<stem>.preds` file when present.
    pub fn load(manifest: &DatasetManifest, base_dir: &Path) -> Result<Self> {
        let mut items = Vec::with_capacity(manifest.entries.len());
        let mut scale = None;
        for entry in &manifest.entries {
            let path = manifest.resolve(base_dir, entry);
            let sequence = load_embedding_file_with_cap(&path, manifest.window.cap)?;
            if sequence.dim() != manifest.embedding_dim {
                return Err(Error::Shape(format!(
                    "{} has dim {} but manifest declares {}",
                    path.display(),
                    sequence.dim(),
                    manifest.embedding_dim
                )));
            }
            match scale {
                None => scale = Some(entry.targets.scale),
                Some(s) if s != entry.targets.scale => {
                    return Err(Error::invalid("entries mix raw and standardized targets"))
                }
                _ => {}
            }
            let preds_path = path.with_extension("preds");
            let window_predictions = if preds_path.is_file() {
                Some(crate::embedding::read_window_predictions(&preds_path)?)
            } else {
                None
            };
            items.push(Item {
                sequence,
                targets: entry.targets.clone(),
                n_tokens: entry.n_tokens,
                gender: entry.gender,
                window_predictions,
            });
        }
        Ok(Dataset {
            provenance: manifest.encoder_provenance,
            scale: scale.unwrap_or(ScoreScale::Raw),
            dim: manifest.embedding_dim,
            window: manifest.window,
            items,
        })
    }

    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::read(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        Self::load(&manifest, base)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|i| i.id().to_string()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::save_embedding_file;

    fn scores() -> TraitScores {
        TraitScores::new(ScoreScale::Raw, [110.0, 120.0, 100.0, 130.0, 70.0])
    }

    fn build(dir: &Path, ids: &[(&str, usize)]) -> DatasetManifest {
        let mut entries = Vec::new();
        for &(id, n_tokens) in ids {
            let t = WindowParams::default().count(n_tokens).unwrap();
            let seq = EmbeddingSequence::new(id, 4, vec![0.5; 4 * t], 200).unwrap();
            let file = format!("{id}.ltre");
            save_embedding_file(&seq, dir.join(&file)).unwrap();
            entries.push(ManifestEntry {
                transcript_id: id.into(),
                embedding_file_path: file.into(),
                targets: scores(),
                n_tokens,
                gender: None,
            });
        }
        DatasetManifest {
            encoder_provenance: EncoderProvenance::PT,
            embedding_dim: 4,
            window: WindowParams::default(),
            entries,
        }
    }

    #[test]
    fn consistent_manifest_is_clean() {
        let dir = tempfile::tempdir().unwrap();
        let m = build(dir.path(), &[("a", 1000), ("b", 300)]);
        let report = validate_manifest(&m, dir.path(), &ValidationOptions::default());
        assert!(report.is_valid(), "{report:?}");
        // pure: same answer twice
        assert_eq!(report, validate_manifest(&m, dir.path(), &ValidationOptions::default()));
    }

    #[test]
    fn short_transcript_flagged() {
        let dir = tempfile::tempdir().unwrap();
        let m = build(dir.path(), &[("a", 30)]);
        let report = validate_manifest(&m, dir.path(), &ValidationOptions::default());
        assert_eq!(report.findings.len(), 1);
        assert!(report.findings[0].violation.describe().contains("below minimum length"));
    }

    #[test]
    fn duplicate_and_missing() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build(dir.path(), &[("a", 1000)]);
        m.entries.push(m.entries[0].clone());
        let mut ghost = m.entries[0].clone();
        ghost.transcript_id = "ghost".into();
        ghost.embedding_file_path = "ghost.ltre".into();
        m.entries.push(ghost);
        let report = validate_manifest(&m, dir.path(), &ValidationOptions::default());
        let kinds: Vec<_> = report.findings.iter().map(|f| &f.violation).collect();
        assert!(kinds.contains(&&Violation::DuplicateId));
        assert!(kinds.iter().any(|v| matches!(v, Violation::MissingFile { .. })));
    }

    #[test]
    fn dim_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = build(dir.path(), &[("a", 1000)]);
        m.embedding_dim = 8;
        m.entries[0].n_tokens = 5000;
        let report = validate_manifest(&m, dir.path(), &ValidationOptions::default());
        let kinds: Vec<_> = report.findings.iter().map(|f| f.violation.clone()).collect();
        assert!(kinds.contains(&Violation::DimMismatch { declared: 8, found: 4 }));
        assert!(kinds.contains(&Violation::WindowCountMismatch { expected: 19, found: 3 }));
    }

    #[test]
    fn json_rejects_unknown_fields() {
        let dir = tempfile::tempdir().unwrap();
        let m = build(dir.path(), &[("a", 1000)]);
        let mut v = serde_json::to_value(&m).unwrap();
        v["extra"] = serde_json::json!(1);
        assert!(DatasetManifest::from_json(&v.to_string()).is_err());
        let back = DatasetManifest::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
