//! Input checksums recorded in every artifact the CLI writes.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::corpus::io as corpus_io;
use crate::model::{load_checkpoint, CKPT_MAGIC};

pub const TOOL: &str = "lens";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub inputs: Vec<InputDigest>,
}

impl Provenance {
    pub fn new(command: &str, seed: u64, inputs: &[&Path]) -> Result<Provenance, CliError> {
        Ok(Provenance {
            tool: TOOL.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            inputs: inputs
                .iter()
                .map(|p| {
                    Ok(InputDigest {
                        path: p.to_path_buf(),
                        sha256: sha256_file(p)?,
                    })
                })
                .collect::<Result<_, CliError>>()?,
        })
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("provenance serializes")
    }
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Vocabulary files carry provenance as a hex-encoded JSON header field.
pub const VOCAB_FIELD: &str = "#provenance=";

pub fn vocab_header_field(p: &Provenance) -> String {
    let json = serde_json::to_vec(p).expect("provenance serializes");
    format!("{VOCAB_FIELD}{}", hex::encode(json))
}

fn from_value(v: &serde_json::Value, path: &Path) -> Result<Provenance, CliError> {
    serde_json::from_value(v.clone()).map_err(|e| CliError::Usage(format!("{}: bad provenance: {e}", path.display())))
}

/// Reads the provenance block of any artifact the CLI produces.
pub fn read_provenance(path: &Path) -> Result<Provenance, CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let missing = || CliError::Usage(format!("{}: no provenance found", path.display()));
    if bytes.starts_with(CKPT_MAGIC) {
        let ckpt = load_checkpoint::<f32>(path)?;
        return from_value(ckpt.meta.extra.get("provenance").ok_or_else(missing)?, path);
    }
    if bytes.starts_with(corpus_io::MAGIC) {
        let header = corpus_io::read_header(&mut &bytes[..])?;
        let meta: serde_json::Value = serde_json::from_str(&header.meta).map_err(|_| missing())?;
        return from_value(meta.get("provenance").ok_or_else(missing)?, path);
    }
    let text = String::from_utf8_lossy(&bytes);
    let first = text.lines().next().unwrap_or_default();
    if first.starts_with('#') {
        let field = first
            .split_whitespace()
            .find_map(|f| f.strip_prefix(VOCAB_FIELD))
            .ok_or_else(missing)?;
        let json = hex::decode(field).map_err(|_| missing())?;
        return serde_json::from_slice(&json).map_err(|_| missing());
    }
    // JSON document, or JSON-lines whose first line is the header.
    let doc: serde_json::Value = serde_json::from_str(&text)
        .or_else(|_| serde_json::from_str(first))
        .map_err(|_| missing())?;
    from_value(doc.get("provenance").ok_or_else(missing)?, path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerifyLine {
    pub artifact: PathBuf,
    pub input: PathBuf,
    pub expected: String,
    pub actual: Option<String>,
}

impl VerifyLine {
    pub fn ok(&self) -> bool {
        self.actual.as_deref() == Some(self.expected.as_str())
    }
}

/// Recomputes every recorded input checksum of `artifact`.
pub fn verify(artifact: &Path) -> Result<Vec<VerifyLine>, CliError> {
    let p = read_provenance(artifact)?;
    Ok(p.inputs
        .into_iter()
        .map(|i| VerifyLine {
            artifact: artifact.to_path_buf(),
            actual: sha256_file(&i.path).ok(),
            input: i.path,
            expected: i.sha256,
        })
        .collect())
}
