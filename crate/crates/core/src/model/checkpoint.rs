//! Checkpoint container.
//!
//! Layout: the 8-byte magic `CCTFCKPT`, a little-endian `u64` header length,
//! a JSON header (model config, optional vocabulary text, tensor names and
//! shapes), then every tensor as little-endian `f32` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::tokens::Vocabulary;

const MAGIC: &[u8; 8] = b"CCTFCKPT";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab: Option<String>,
    tensors: Vec<TensorEntry>,
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, vocab: Option<&Vocabulary>) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        vocab: vocab.map(Vocabulary::to_text),
        tensors: params
            .names
            .iter()
            .zip(&params.tensors)
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                rows: t.rows,
                cols: t.cols,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for t in &params.tensors {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in &t.data {
            buf.extend_from_slice(&(x as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelParams, Option<Vocabulary>)> {
    let bad = |m: &str| Error::Checkpoint(m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated magic"))?;
    if &magic != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| bad("truncated header length"))?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json)?;
    let fresh = ModelParams::init(header.config.clone(), 0)?;
    if fresh.names.len() != header.tensors.len() {
        return Err(bad("tensor count does not match config"));
    }
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for (entry, (name, t)) in header.tensors.iter().zip(fresh.names.iter().zip(&fresh.tensors)) {
        if &entry.name != name || entry.rows != t.rows || entry.cols != t.cols {
            return Err(Error::Checkpoint(format!("unexpected tensor {}", entry.name)));
        }
        let mut buf = vec![0u8; entry.rows * entry.cols * 4];
        r.read_exact(&mut buf).map_err(|_| bad("truncated tensor data"))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        tensors.push(Tensor::from_vec(entry.rows, entry.cols, data));
    }
    let vocab = header.vocab.as_deref().map(Vocabulary::from_text).transpose()?;
    Ok((
        ModelParams {
            config: header.config,
            names: fresh.names,
            tensors,
        },
        vocab,
    ))
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, vocab: Option<&Vocabulary>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(std::io::BufWriter::new(f), params, vocab)
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, Option<Vocabulary>)> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f))
}
