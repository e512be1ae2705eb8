//! Binary checkpoint format.
//!
//! ```text
//! offset  size  content
//! 0       8     magic "UDECKPT1"
//! 8       8     header length N, u64 little-endian
//! 16      N     UTF-8 JSON header: {"config": ModelConfig, "tensors": [{"name", "rows", "cols"}, ...]}
//! 16+N    ...   every tensor in header order, row-major, f64 little-endian
//! ```
//!
//! The training seed lives in `config.encoder.seed`. Values are stored as raw
//! IEEE-754 bits, so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::model::EncoderModel;
use super::params::row_major;
use super::{ModelConfig, Params};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UDECKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorHeader>,
}

pub fn write_checkpoint(model: &EncoderModel, mut w: impl Write) -> Result<()> {
    let header = Header {
        config: model.config,
        tensors: model
            .params
            .tensors()
            .into_iter()
            .map(|(name, _, t)| TensorHeader {
                name,
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * model.param_count());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, _, t) in model.params.tensors() {
        for v in row_major(t) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf)
        .map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<EncoderModel> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

    let mut params = Params::zeros(&header.config.param_shape());
    let mut offset = body_start;
    {
        let mut slots = params.tensors_mut();
        if slots.len() != header.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "header lists {} tensors, config implies {}",
                header.tensors.len(),
                slots.len()
            )));
        }
        for ((name, _, slot), th) in slots.iter_mut().zip(&header.tensors) {
            if *name != th.name || slot.shape() != (th.rows, th.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {} ({}x{}) does not match expected {} {:?}",
                    th.name,
                    th.rows,
                    th.cols,
                    name,
                    slot.shape()
                )));
            }
            let n = th.rows * th.cols;
            let end = offset + 8 * n;
            if end > bytes.len() {
                return Err(Error::Checkpoint(format!("truncated data in {}", th.name)));
            }
            let values: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            **slot = DMatrix::from_row_slice(th.rows, th.cols, &values);
            offset = end;
        }
    }
    if offset != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - offset
        )));
    }
    EncoderModel::from_params(header.config, params)
}

pub fn save_checkpoint(model: &EncoderModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, std::io::BufWriter::new(file))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EncoderModel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(file))
}
