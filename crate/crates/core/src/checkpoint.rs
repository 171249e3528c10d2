//! Model checkpoint container shared by every model kind.
//!
//! Layout (little-endian): magic `b"LTRM"`, version u8, u32 header length,
//! UTF-8 JSON header, u64 parameter count, then that many f64 values in the
//! order declared by the header's `parameter_order`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seq_head::TensorSpec;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LTRM";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    SeqHead,
    Ffn,
    Ridge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub parameter_order: Vec<TensorSpec>,
    /// Model-specific metadata: configuration, seed, trait, standardization
    /// statistics and training history.
    pub meta: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let declared: usize = self
            .header
            .parameter_order
            .iter()
            .map(|t| t.shape.iter().product::<usize>())
            .sum();
        if declared != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "header declares {declared} parameters but {} are present",
                self.params.len()
            )));
        }
        let header = serde_json::to_vec(&self.header)?;
        let header_len = u32::try_from(header.len()).map_err(|_| Error::HeaderOverflow {
            field: "checkpoint header",
            value: header.len(),
            max: u32::MAX as usize,
        })?;
        let mut out = Vec::with_capacity(17 + header.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&header_len.to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in &self.params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let take = |from: usize, n: usize| -> Result<&[u8]> {
            bytes.get(from..from + n).ok_or(Error::Truncated {
                expected: from + n,
                found: bytes.len(),
            })
        };
        if take(0, 4)? != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic("<checkpoint>".into()));
        }
        let version = take(4, 1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let header_len = u32::from_le_bytes(take(5, 4)?.try_into().unwrap()) as usize;
        let header: CheckpointHeader = serde_json::from_slice(take(9, header_len)?)?;
        let mut pos = 9 + header_len;
        let count = u64::from_le_bytes(take(pos, 8)?.try_into().unwrap()) as usize;
        pos += 8;
        let body = take(pos, count.checked_mul(8).ok_or_else(|| Error::Checkpoint("parameter count overflows".into()))?)?;
        if pos + body.len() != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after parameters".into()));
        }
        let params = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let ck = Checkpoint { header, params };
        ck.to_bytes().map(|_| ck)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.header.kind != kind {
            return Err(Error::Checkpoint(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.header.kind
            )));
        }
        Ok(())
    }
}
