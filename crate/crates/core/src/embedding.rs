//! Per-transcript window embeddings and their on-disk format.
//!
//! Embedding file layout (all integers little-endian):
//!
//! | field          | bytes                      |
//! |----------------|----------------------------|
//! | magic          | `b"LTRE"`                  |
//! | version        | u8 (= 1)                   |
//! | id length      | u16                        |
//! | transcript id  | UTF-8, `id length` bytes   |
//! | T (rows)       | u32                        |
//! | D (columns)    | u32                        |
//! | payload        | T·D × f32, row-major       |
//!
//! Per-window prediction files (`<id>.preds`) are a u32 count followed by
//! that many f32 values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LTRE";
pub const FORMAT_VERSION: u8 = 1;
pub const DEFAULT_CAP: usize = 200;
pub const DEFAULT_DIM: usize = 1024;

/// One transcript's ordered window embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    transcript_id: String,
    dim: usize,
    cap: usize,
    rows: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(transcript_id: impl Into<String>, dim: usize, rows: Vec<f32>, cap: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if cap == 0 {
            return Err(Error::invalid("window cap must be positive"));
        }
        if !rows.len().is_multiple_of(dim) {
            return Err(Error::Shape(format!(
                "{} values do not form rows of width {dim}",
                rows.len()
            )));
        }
        let len = rows.len() / dim;
        if len == 0 {
            return Err(Error::invalid("sequence must contain at least one window"));
        }
        if len > cap {
            return Err(Error::invalid(format!("{len} windows exceed cap {cap}")));
        }
        if let Some(i) = rows.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteEmbedding {
                row: i / dim,
                col: i % dim,
            });
        }
        Ok(EmbeddingSequence {
            transcript_id: transcript_id.into(),
            dim,
            cap,
            rows,
        })
    }

    pub fn from_rows(transcript_id: impl Into<String>, rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let flat = rows.iter().flatten().copied().collect();
        Self::new(transcript_id, dim, flat, DEFAULT_CAP.max(rows.len()))
    }

    pub fn transcript_id(&self) -> &str {
        &self.transcript_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.rows[t * self.dim..(t + 1) * self.dim]
    }

    pub fn values(&self) -> &[f32] {
        &self.rows
    }

    /// Row-major copy widened to f64 for the training numerics.
    pub fn to_f64(&self) -> Vec<f64> {
        self.rows.iter().map(|&v| v as f64).collect()
    }

    /// Copy with row `index` deleted and later rows shifted up.
    pub fn without_row(&self, index: usize) -> Result<Self> {
        if self.len() < 2 {
            return Err(Error::invalid("cannot remove the only window"));
        }
        if index >= self.len() {
            return Err(Error::invalid(format!(
                "window {index} out of range for length {}",
                self.len()
            )));
        }
        let mut rows = Vec::with_capacity(self.rows.len() - self.dim);
        rows.extend_from_slice(&self.rows[..index * self.dim]);
        rows.extend_from_slice(&self.rows[(index + 1) * self.dim..]);
        Self::new(self.transcript_id.clone(), self.dim, rows, self.cap)
    }

    /// Copy with rows reordered so that row `i` of the result is row `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::Shape("permutation length differs from sequence length".into()));
        }
        let mut rows = Vec::with_capacity(self.rows.len());
        for &i in order {
            rows.extend_from_slice(self.row(i));
        }
        Self::new(self.transcript_id.clone(), self.dim, rows, self.cap)
    }

    pub fn with_cap(mut self, cap: usize) -> Result<Self> {
        if cap < self.len() {
            return Err(Error::invalid(format!("{} windows exceed cap {cap}", self.len())));
        }
        self.cap = cap;
        Ok(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let id = self.transcript_id.as_bytes();
        let id_len = u16::try_from(id.len()).map_err(|_| Error::HeaderOverflow {
            field: "transcript_id length",
            value: id.len(),
            max: u16::MAX as usize,
        })?;
        let t = u32::try_from(self.len()).map_err(|_| Error::HeaderOverflow {
            field: "T",
            value: self.len(),
            max: u32::MAX as usize,
        })?;
        let d = u32::try_from(self.dim).map_err(|_| Error::HeaderOverflow {
            field: "D",
            value: self.dim,
            max: u32::MAX as usize,
        })?;
        let mut out = Vec::with_capacity(header_len(id.len()) + 4 * self.rows.len());
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&id_len.to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        for v in &self.rows {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], cap: usize) -> Result<Self> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != MAGIC {
            return Err(Error::BadMagic("<buffer>".into()));
        }
        let version = cur.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let id_len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let id = std::str::from_utf8(cur.take(id_len)?)
            .map_err(|e| Error::invalid(format!("transcript id is not UTF-8: {e}")))?
            .to_string();
        let t = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize;
        let payload_len = t
            .checked_mul(d)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::invalid("declared payload size overflows"))?;
        let remaining = bytes.len() - cur.pos;
        if remaining < payload_len {
            return Err(Error::Truncated {
                expected: payload_len,
                found: remaining,
            });
        }
        if remaining > payload_len {
            return Err(Error::invalid(format!(
                "{} trailing bytes after payload",
                remaining - payload_len
            )));
        }
        let rows = bytes[cur.pos..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(id, d, rows, cap.max(t))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                expected: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}

/// Header size in bytes for a transcript id of `id_bytes` UTF-8 bytes.
pub fn header_len(id_bytes: usize) -> usize {
    4 + 1 + 2 + id_bytes + 4 + 4
}

pub fn save_embedding_file(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = seq.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    load_embedding_file_with_cap(path, DEFAULT_CAP)
}

/// Loads a file, tagging the sequence with `cap`. Files holding more rows
/// than `cap` are still accepted; the cap widens to fit them.
pub fn load_embedding_file_with_cap(path: impl AsRef<Path>, cap: usize) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSequence::from_bytes(&bytes, cap).map_err(|e| match e {
        Error::BadMagic(_) => Error::BadMagic(path.to_path_buf()),
        other => other,
    })
}

pub fn write_window_predictions(values: &[f32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = u32::try_from(values.len()).map_err(|_| Error::HeaderOverflow {
        field: "prediction count",
        value: values.len(),
        max: u32::MAX as usize,
    })?;
    let mut out = Vec::with_capacity(4 + 4 * values.len());
    out.extend_from_slice(&n.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_window_predictions(path: impl AsRef<Path>) -> Result<Vec<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 {
        return Err(Error::Truncated {
            expected: 4,
            found: bytes.len(),
        });
    }
    let n = u32::from_le_bytes(bytes[..4].try_into().unwrap()) as usize;
    let body = &bytes[4..];
    if body.len() != 4 * n {
        return Err(Error::Truncated {
            expected: 4 * n,
            found: body.len(),
        });
    }
    let values: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("window predictions in {}", path.display())));
    }
    Ok(values)
}

/// Zero-padded batch of sequences, `batch × steps × dim`, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub dim: usize,
    pub steps: usize,
    pub data: Vec<f64>,
    pub mask: Vec<bool>,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    /// Pads every sequence to `steps` rows (use the shared cap, or the longest
    /// length when `steps` is `None`).
    pub fn from_sequences(seqs: &[&EmbeddingSequence], steps: Option<usize>) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::invalid("cannot batch zero sequences"))?;
        let dim = first.dim();
        if let Some(s) = seqs.iter().find(|s| s.dim() != dim) {
            return Err(Error::Shape(format!(
                "sequence {} has dim {} but batch dim is {dim}",
                s.transcript_id(),
                s.dim()
            )));
        }
        let longest = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let steps = steps.unwrap_or(longest);
        if longest > steps {
            return Err(Error::Shape(format!("sequence of length {longest} exceeds {steps} steps")));
        }
        let mut data = vec![0.0; seqs.len() * steps * dim];
        let mut mask = vec![false; seqs.len() * steps];
        for (b, s) in seqs.iter().enumerate() {
            let base = b * steps * dim;
            for (dst, &src) in data[base..base + s.values().len()].iter_mut().zip(s.values()) {
                *dst = src as f64;
            }
            mask[b * steps..b * steps + s.len()].fill(true);
        }
        Ok(PaddedBatch {
            dim,
            steps,
            data,
            mask,
            lengths: seqs.iter().map(|s| s.len()).collect(),
        })
    }

    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.steps * self.dim;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mask(&self, b: usize) -> &[bool] {
        &self.mask[b * self.steps..(b + 1) * self.steps]
    }
}
