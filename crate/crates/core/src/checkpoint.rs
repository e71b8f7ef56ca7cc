//! Policy checkpoints.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic   8 bytes  "SGRPOCKP"
//! version u32      1
//! P, L, V u64 x 3
//! logits  f64 x P*L*V, row-major [prompt][position][token]
//! ```
//!
//! The JSON form carries the same header fields plus the logits array.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, Shape};

const MAGIC: &[u8; 8] = b"SGRPOCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 3 * 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointFormat {
    #[default]
    Binary,
    Json,
}

impl CheckpointFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CheckpointFormat::Binary => "bin",
            CheckpointFormat::Json => "json",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonCheckpoint {
    version: u32,
    num_prompts: usize,
    seq_len: usize,
    vocab_size: usize,
    logits: Vec<f64>,
}

pub fn encode_binary(params: &PolicyParams) -> Vec<u8> {
    let s = params.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * s.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for dim in [s.num_prompts, s.seq_len, s.vocab_size] {
        out.extend_from_slice(&(dim as u64).to_le_bytes());
    }
    for x in &params.logits.data {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8]) -> Result<PolicyParams> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != MAGIC {
        return Err(Error::Input("not a policy checkpoint".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {version}")));
    }
    let dim = |i: usize| {
        let o = 12 + 8 * i;
        u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize
    };
    let shape = Shape::new(dim(0), dim(1), dim(2))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * shape.numel() {
        return Err(Error::Input(format!(
            "checkpoint body holds {} bytes, expected {}",
            body.len(),
            8 * shape.numel()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolicyParams::from_logits(shape, data)
}

pub fn encode_json(params: &PolicyParams) -> Result<String> {
    let s = params.shape();
    Ok(serde_json::to_string(&JsonCheckpoint {
        version: CHECKPOINT_VERSION,
        num_prompts: s.num_prompts,
        seq_len: s.seq_len,
        vocab_size: s.vocab_size,
        logits: params.logits.data.clone(),
    })?)
}

pub fn decode_json(text: &str) -> Result<PolicyParams> {
    let ck: JsonCheckpoint = serde_json::from_str(text)?;
    if ck.version != CHECKPOINT_VERSION {
        return Err(Error::Input(format!("unsupported checkpoint version {}", ck.version)));
    }
    let shape = Shape::new(ck.num_prompts, ck.seq_len, ck.vocab_size)?;
    PolicyParams::from_logits(shape, ck.logits)
}

pub fn save(params: &PolicyParams, path: &Path, format: CheckpointFormat) -> Result<()> {
    let bytes = match format {
        CheckpointFormat::Binary => encode_binary(params),
        CheckpointFormat::Json => encode_json(params)?.into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, detecting the format from its leading bytes.
pub fn load(path: &Path) -> Result<PolicyParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        decode_binary(&bytes)
    } else {
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Input(format!("{} is not a checkpoint", path.display())))?;
        decode_json(&text)
    }
}
