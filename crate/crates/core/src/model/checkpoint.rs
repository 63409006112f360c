//! Checkpoint files.
//!
//! ```text
//! "LENSCKPT" | u32 version | u32 meta length | meta JSON
//! | u32 tensor count | per tensor: u16 name length, name, u32 rows, u32 cols, u64 offset
//! | f32 little-endian data
//! ```
//!
//! Offsets count floats from the start of the data section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use super::tensor::{Mat, Scalar};
use super::ModelError;

pub const CKPT_MAGIC: &[u8; 8] = b"LENSCKPT";
pub const CKPT_VERSION: u32 = 1;

/// Parameters plus provenance.
#[derive(Debug, Clone)]
pub struct Checkpoint<F> {
    pub params: ModelParams<F>,
    pub meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub step: u64,
    /// Free-form provenance, e.g. input checksums.
    #[serde(default)]
    pub extra: serde_json::Value,
}

fn bad(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

pub fn write_checkpoint<F: Scalar, W: Write>(mut out: W, params: &ModelParams<F>, step: u64, extra: serde_json::Value) -> Result<(), ModelError> {
    let meta = CheckpointMeta {
        config: params.config.clone(),
        step,
        extra,
    };
    let json = serde_json::to_vec(&meta).map_err(|e| bad(e.to_string()))?;
    out.write_all(CKPT_MAGIC)?;
    out.write_u32::<LittleEndian>(CKPT_VERSION)?;
    out.write_u32::<LittleEndian>(json.len() as u32)?;
    out.write_all(&json)?;
    out.write_u32::<LittleEndian>(params.tensors.len() as u32)?;
    let mut offset = 0u64;
    for (name, t) in params.names.iter().zip(&params.tensors) {
        out.write_u16::<LittleEndian>(name.len() as u16)?;
        out.write_all(name.as_bytes())?;
        out.write_u32::<LittleEndian>(t.rows as u32)?;
        out.write_u32::<LittleEndian>(t.cols as u32)?;
        out.write_u64::<LittleEndian>(offset)?;
        offset += t.data.len() as u64;
    }
    for t in &params.tensors {
        for &x in &t.data {
            out.write_f32::<LittleEndian>(x.as_f64() as f32)?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<F: Scalar, R: Read>(mut input: R) -> Result<Checkpoint<F>, ModelError> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(bad("missing LENSCKPT magic"));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let len = input.read_u32::<LittleEndian>()? as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let meta: CheckpointMeta = serde_json::from_slice(&json).map_err(|e| bad(e.to_string()))?;
    let count = input.read_u32::<LittleEndian>()? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let n = input.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; n];
        input.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| bad(e.to_string()))?;
        let rows = input.read_u32::<LittleEndian>()? as usize;
        let cols = input.read_u32::<LittleEndian>()? as usize;
        let offset = input.read_u64::<LittleEndian>()?;
        manifest.push((name, rows, cols, offset));
    }
    let mut tensors = Vec::with_capacity(count);
    let mut expected = 0u64;
    for (name, rows, cols, offset) in &manifest {
        if *offset != expected {
            return Err(bad(format!("{name}: offset {offset}, expected {expected}")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(F::from_f64(input.read_f32::<LittleEndian>()? as f64));
        }
        expected += (rows * cols) as u64;
        tensors.push(Mat::from_vec(*rows, *cols, data));
    }
    let params = ModelParams::from_tensors(&meta.config, tensors)?;
    for ((name, ..), want) in manifest.iter().zip(&params.names) {
        if name != want {
            return Err(bad(format!("tensor {name} where {want} was expected")));
        }
    }
    Ok(Checkpoint { params, meta })
}

pub fn save_checkpoint<F: Scalar>(path: &Path, params: &ModelParams<F>, step: u64, extra: serde_json::Value) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params, step, extra)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<Checkpoint<F>, ModelError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
