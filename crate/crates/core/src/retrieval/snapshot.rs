//! JSON snapshot of a [`HybridIndex`].
//!
//! Only chunks, vectors and parameters are stored; lexical statistics are
//! rebuilt on load. Chunks are written in id order, so equal indexes always
//! produce identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Bm25Params, HybridIndex, RetrievalError};
use crate::types::{Chunk, EmbeddingVector};

pub const SNAPSHOT_FORMAT: &str = "ragway-index";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize)]
struct SnapshotOut<'a> {
    format: &'static str,
    version: u32,
    dim: Option<usize>,
    bm25: Bm25Params,
    chunks: Vec<RecordOut<'a>>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    chunk: &'a Chunk,
    vector: &'a EmbeddingVector,
}

#[derive(Deserialize)]
struct SnapshotIn {
    format: String,
    version: u32,
    dim: Option<usize>,
    bm25: Bm25Params,
    chunks: Vec<RecordIn>,
}

#[derive(Deserialize)]
struct RecordIn {
    chunk: Chunk,
    vector: EmbeddingVector,
}

impl HybridIndex {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), RetrievalError> {
        let snap = SnapshotOut {
            format: SNAPSHOT_FORMAT,
            version: SNAPSHOT_VERSION,
            dim: self.dim,
            bm25: self.bm25,
            chunks: self
                .iter()
                .map(|(chunk, vector)| RecordOut { chunk, vector })
                .collect(),
        };
        serde_json::to_writer(&mut w, &snap)
            .map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(r: R) -> Result<Self, RetrievalError> {
        let snap: SnapshotIn =
            serde_json::from_reader(r).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }

    /// Decode a snapshot held in memory.
    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, RetrievalError> {
        let snap: SnapshotIn =
            serde_json::from_slice(bytes).map_err(|e| RetrievalError::Snapshot(e.to_string()))?;
        Self::from_snapshot(snap)
    }

    fn from_snapshot(snap: SnapshotIn) -> Result<Self, RetrievalError> {
        if snap.format != SNAPSHOT_FORMAT {
            return Err(RetrievalError::Snapshot(format!(
                "unknown format {:?}",
                snap.format
            )));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(RetrievalError::Snapshot(format!(
                "unsupported version {}",
                snap.version
            )));
        }
        if !(snap.bm25.k1.is_finite() && snap.bm25.b.is_finite()) {
            return Err(RetrievalError::Snapshot(
                "non-finite bm25 parameters".into(),
            ));
        }
        let mut index = HybridIndex::new(snap.bm25);
        index.dim = snap.dim;
        let mut seen = std::collections::HashSet::new();
        let mut items = Vec::with_capacity(snap.chunks.len());
        for rec in snap.chunks {
            if !seen.insert(rec.chunk.id.clone()) {
                return Err(RetrievalError::Snapshot(format!(
                    "duplicate chunk id {}",
                    rec.chunk.id
                )));
            }
            items.push((rec.chunk, rec.vector));
        }
        index.upsert_chunks(items)?;
        Ok(index)
    }

    /// Write atomically: the snapshot goes to a sibling temp file first.
    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
            self.write_snapshot(&mut f)?;
            f.flush()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let f = fs::File::open(path)?;
        Self::read_snapshot(std::io::BufReader::new(f))
    }
}
