//! Versioned binary container for model snapshots.
//!
//! Byte layout, version 1, all integers little-endian:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "SDPL"
//! 4       4     format version (u32) = 1
//! 8       4     context_window k (u32)
//! 12      4     embedding_dim d (u32)
//! 16      4     hidden_dim h (u32)
//! 20      4     vocab_size V (u32)
//! 24      8     rng_seed (u64)
//! 32      4     step_index t (u32)
//! 36      4+a   chunk_id: byte length (u32), then UTF-8 bytes
//!         4+b   config_hash: byte length (u32), then UTF-8 bytes
//!         4+4c  vocabulary: symbol count c (u32), then one u32 code point
//!               per printable symbol in index order (specials are implicit,
//!               so c = V - 3)
//!         8+8L  theta: length L (u64), then L f64 values
//!         32    SHA-256 over the four arch u32s followed by the theta bytes
//! ```
//!
//! The trailing digest is the snapshot's content hash: it covers the
//! architecture and parameters, so two snapshots of the same model state
//! share it regardless of step index or provenance strings. `load` recomputes
//! and verifies it, and rejects truncated or oversized files.

use crate::error::{Error, Result};
use crate::policy::{hex_string, Arch, PolicyModel};
use crate::vocab::Vocabulary;
use crate::Policy;
use sha2::{Digest, Sha256};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SDPL";
const VERSION: u32 = 1;

/// Frozen model after one training step, with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    /// 0 for the SFT base model, t for the model after chunk t.
    pub step_index: u32,
    /// Chunk that produced this model; empty for step 0.
    pub chunk_id: String,
    /// Hash of the run configuration that produced this snapshot.
    pub config_hash: String,
    pub model: Policy,
}

impl StepSnapshot {
    /// Hex SHA-256 over architecture and parameters (the trailing digest of
    /// the file format).
    pub fn content_hash(&self) -> String {
        self.model.content_hash()
    }

    /// Conventional file name inside a run directory.
    pub fn file_name(&self) -> String {
        format!("step_{}.bin", self.step_index)
    }
}

/// Serializes a snapshot to `path`.
pub fn snapshot_store(snapshot: &StepSnapshot, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let arch = snapshot.model.arch();
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for dim in [
        arch.context_window,
        arch.embedding_dim,
        arch.hidden_dim,
        arch.vocab_size,
    ] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    buf.extend_from_slice(&snapshot.model.rng_seed().to_le_bytes());
    buf.extend_from_slice(&snapshot.step_index.to_le_bytes());
    for text in [&snapshot.chunk_id, &snapshot.config_hash] {
        buf.extend_from_slice(&(text.len() as u32).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
    }
    let symbols = snapshot.model.vocab().symbols();
    buf.extend_from_slice(&(symbols.len() as u32).to_le_bytes());
    for &c in symbols {
        buf.extend_from_slice(&(c as u32).to_le_bytes());
    }
    buf.extend_from_slice(&(snapshot.model.theta().len() as u64).to_le_bytes());
    let mut hasher = Sha256::new();
    for dim in [
        arch.context_window,
        arch.embedding_dim,
        arch.hidden_dim,
        arch.vocab_size,
    ] {
        hasher.update((dim as u32).to_le_bytes());
    }
    for &w in snapshot.model.theta() {
        let bytes = w.to_le_bytes();
        buf.extend_from_slice(&bytes);
        hasher.update(bytes);
    }
    buf.extend_from_slice(&hasher.finalize());
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Reads a snapshot back, verifying structure and content hash.
pub fn snapshot_load(path: impl AsRef<Path>) -> Result<StepSnapshot> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |message: &str| Error::Corrupt {
        path: path.to_path_buf(),
        message: message.to_string(),
    };

    let mut cursor = Cursor::new(&buf);
    if cursor.take(4).ok_or_else(|| corrupt("truncated magic"))? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    if cursor.u32().ok_or_else(|| corrupt("truncated version"))? != VERSION {
        return Err(corrupt("unsupported format version"));
    }
    let k = cursor.u32().ok_or_else(|| corrupt("truncated arch"))?;
    let d = cursor.u32().ok_or_else(|| corrupt("truncated arch"))?;
    let h = cursor.u32().ok_or_else(|| corrupt("truncated arch"))?;
    let v = cursor.u32().ok_or_else(|| corrupt("truncated arch"))?;
    let rng_seed = cursor.u64().ok_or_else(|| corrupt("truncated seed"))?;
    let step_index = cursor.u32().ok_or_else(|| corrupt("truncated step index"))?;
    let chunk_id = cursor
        .string()
        .ok_or_else(|| corrupt("truncated chunk id"))?;
    let config_hash = cursor
        .string()
        .ok_or_else(|| corrupt("truncated config hash"))?;

    let symbol_count = cursor.u32().ok_or_else(|| corrupt("truncated vocabulary"))? as usize;
    if symbol_count + 3 != v as usize {
        return Err(corrupt("vocabulary size does not match arch"));
    }
    let mut symbols = Vec::with_capacity(symbol_count);
    for _ in 0..symbol_count {
        let code = cursor.u32().ok_or_else(|| corrupt("truncated vocabulary"))?;
        symbols.push(char::from_u32(code).ok_or_else(|| corrupt("invalid symbol code point"))?);
    }
    let vocab = Vocabulary::new(symbols).map_err(|_| corrupt("invalid vocabulary"))?;

    let theta_len = cursor.u64().ok_or_else(|| corrupt("truncated theta length"))? as usize;
    let arch = Arch {
        context_window: k as usize,
        embedding_dim: d as usize,
        hidden_dim: h as usize,
        vocab_size: v as usize,
    };
    if theta_len != arch.param_count() {
        return Err(corrupt("theta length does not match arch"));
    }
    let mut theta = Vec::with_capacity(theta_len);
    for _ in 0..theta_len {
        theta.push(cursor.f64().ok_or_else(|| corrupt("truncated theta"))?);
    }
    let stored_hash = cursor.take(32).ok_or_else(|| corrupt("truncated hash"))?;
    if !cursor.at_end() {
        return Err(corrupt("trailing bytes after hash"));
    }

    let model = PolicyModel::from_parts(vocab, arch, rng_seed, theta)
        .map_err(|e| corrupt(&format!("invalid model: {e}")))?;
    if hex_string(stored_hash) != model.content_hash() {
        return Err(corrupt("content hash mismatch"));
    }
    Ok(StepSnapshot {
        step_index,
        chunk_id,
        config_hash,
        model,
    })
}


struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.buf.len() {
            return None;
        }
        let slice = &self.buf[self.pos..end];
        self.pos = end;
        Some(slice)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).ok()
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}
