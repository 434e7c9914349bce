//! Named-tensor binary files.
//!
//! ```text
//! header_len  u64 little-endian
//! header      header_len bytes of UTF-8 JSON:
//!             {"format": "proust-tensors/1", "alphabet": "ACDEFGHIKLMNPQRSTVWY",
//!              "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...],
//!              "metadata": {...}}
//! data        tensor payloads, little-endian, row-major; `offset` counts
//!             from the first byte after the header
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::ALPHABET;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const FORMAT: &str = "proust-tensors/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    alphabet: String,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn encode<S: Scalar>(
    tensors: &[(String, &Tensor<S>)],
    dtype: Dtype,
    metadata: serde_json::Value,
) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut data = Vec::new();
    for (name, t) in tensors {
        let offset = data.len() as u64;
        for &x in t.data() {
            match dtype {
                Dtype::F32 => data.extend_from_slice(&(x.f64() as f32).to_le_bytes()),
                Dtype::F64 => data.extend_from_slice(&x.f64().to_le_bytes()),
            }
        }
        entries.push(TensorEntry {
            name: name.clone(),
            dtype,
            shape: t.shape().to_vec(),
            offset,
            nbytes: data.len() as u64 - offset,
        });
    }
    let header = serde_json::to_vec(&Header {
        format: FORMAT.into(),
        alphabet: ALPHABET.into(),
        tensors: entries,
        metadata,
    })?;
    let mut out = Vec::with_capacity(8 + header.len() + data.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&data);
    Ok(out)
}

pub type Decoded<S> = (Vec<(String, Tensor<S>)>, serde_json::Value);

pub fn decode<S: Scalar>(bytes: &[u8]) -> Result<Decoded<S>> {
    let bad = |m: String| Error::Format(format!("tensor file: {m}"));
    if bytes.len() < 8 {
        return Err(bad("truncated header length".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = bytes
        .get(8..8usize.saturating_add(hlen))
        .ok_or_else(|| bad("truncated header".into()))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format != FORMAT {
        return Err(bad(format!("unknown format {:?}", header.format)));
    }
    if header.alphabet != ALPHABET {
        return Err(bad(format!(
            "alphabet {:?} differs from {ALPHABET:?}",
            header.alphabet
        )));
    }
    let data = &bytes[8 + hlen..];
    let mut out = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        if e.nbytes as usize != n * e.dtype.size() {
            return Err(bad(format!("{}: nbytes does not match shape", e.name)));
        }
        let raw = e
            .offset
            .checked_add(e.nbytes)
            .and_then(|end| data.get(e.offset as usize..end as usize))
            .ok_or_else(|| bad(format!("{}: payload out of bounds", e.name)))?;
        let vals: Vec<S> = match e.dtype {
            Dtype::F32 => raw
                .chunks_exact(4)
                .map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            Dtype::F64 => raw
                .chunks_exact(8)
                .map(|c| S::lit(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        out.push((e.name, Tensor::new(e.shape, vals)?));
    }
    Ok((out, header.metadata))
}

pub fn write_file<S: Scalar>(
    path: &Path,
    tensors: &[(String, &Tensor<S>)],
    dtype: Dtype,
    metadata: serde_json::Value,
) -> Result<()> {
    let bytes = encode(tensors, dtype, metadata)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_file<S: Scalar>(path: &Path) -> Result<Decoded<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
