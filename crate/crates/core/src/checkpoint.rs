//! Binary checkpoint container:
//!
//! ```text
//! b"AUTKCKPT" | u32 version | u64 header length | JSON header | raw little-endian arrays
//! ```
//!
//! The header lists every array with its dtype, shape and byte offset.

use std::io::{Read, Write};
use std::path::Path;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ArrayValues, NamedArray};

pub const MAGIC: &[u8; 8] = b"AUTKCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    /// Decimal string; JSON numbers cannot hold a u128.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let bytes = hex::decode(&self.seed).map_err(|e| Error::Parse(format!("rng seed: {e}")))?;
        let seed: [u8; 32] = bytes
            .try_into()
            .map_err(|_| Error::Parse("rng seed must be 32 bytes".into()))?;
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Parse("rng word position".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    kind: String,
    config_hash: String,
    step: u64,
    rng: Option<RngState>,
    meta: serde_json::Value,
    params: Vec<ArrayEntry>,
    optimizer: Vec<ArrayEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub config_hash: String,
    pub step: u64,
    pub rng: Option<RngState>,
    pub meta: serde_json::Value,
    pub params: Vec<NamedArray>,
    pub optimizer: Vec<NamedArray>,
}

fn dtype_name(d: DType) -> &'static str {
    if d == DType::F64 {
        "f64"
    } else {
        "f32"
    }
}

impl Checkpoint {
    pub fn new(kind: &str, config_hash: &str, params: Vec<NamedArray>) -> Self {
        Self {
            kind: kind.to_string(),
            config_hash: config_hash.to_string(),
            step: 0,
            rng: None,
            meta: serde_json::Value::Null,
            params,
            optimizer: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let mut index = |arrays: &[NamedArray]| -> Vec<ArrayEntry> {
            arrays
                .iter()
                .map(|a| {
                    let e = ArrayEntry {
                        name: a.name.clone(),
                        dtype: dtype_name(a.dtype).into(),
                        shape: a.shape.clone(),
                        offset,
                    };
                    offset += a.byte_len() as u64;
                    e
                })
                .collect()
        };
        let params = index(&self.params);
        let optimizer = index(&self.optimizer);
        let header = Header {
            kind: self.kind.clone(),
            config_hash: self.config_hash.clone(),
            step: self.step,
            rng: self.rng.clone(),
            meta: self.meta.clone(),
            params,
            optimizer,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(20 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for a in self.params.iter().chain(&self.optimizer) {
            out.extend_from_slice(&a.bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Parse("not a checkpoint file".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Schema(format!("unsupported checkpoint version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = 20usize
            .checked_add(hlen)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Parse("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..body])
            .map_err(|e| Error::Parse(format!("checkpoint header: {e}")))?;
        let data = &bytes[body..];
        let read = |entries: &[ArrayEntry]| -> Result<Vec<NamedArray>> {
            entries
                .iter()
                .map(|e| {
                    let n: usize = e.shape.iter().product();
                    let start = e.offset as usize;
                    let (dtype, width) = match e.dtype.as_str() {
                        "f32" => (DType::F32, 4),
                        "f64" => (DType::F64, 8),
                        other => return Err(Error::Schema(format!("unknown dtype `{other}`"))),
                    };
                    let raw = data
                        .get(start..start + n * width)
                        .ok_or_else(|| Error::Parse(format!("array `{}` truncated", e.name)))?;
                    let values = if width == 4 {
                        ArrayValues::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
                    } else {
                        ArrayValues::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
                    };
                    Ok(NamedArray { name: e.name.clone(), dtype, shape: e.shape.clone(), values })
                })
                .collect()
        };
        Ok(Self {
            params: read(&header.params)?,
            optimizer: read(&header.optimizer)?,
            kind: header.kind,
            config_hash: header.config_hash,
            step: header.step,
            rng: header.rng,
            meta: header.meta,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        drop(f);
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and checks that the checkpoint holds the expected model kind.
    pub fn load_kind(path: &Path, kind: &str) -> Result<Self> {
        let c = Self::load(path)?;
        if c.kind != kind {
            return Err(Error::Schema(format!(
                "{} holds a `{}` checkpoint, expected `{kind}`",
                path.display(),
                c.kind
            )));
        }
        Ok(c)
    }
}
