//! Named-tensor container.
//!
//! Layout: the 8-byte magic `BKTENSOR`, a little-endian `u64` header length,
//! a UTF-8 JSON header, then every tensor's values back to back as little-endian
//! `f32` or `f64` (per the header's `dtype`) in header order.

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

const MAGIC: &[u8; 8] = b"BKTENSOR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: u32,
    dtype: Dtype,
    kind: String,
    meta: serde_json::Value,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub kind: String,
    pub dtype: Dtype,
    pub meta: serde_json::Value,
    pub tensors: Vec<(TensorInfo, Vec<f64>)>,
}

impl TensorFile {
    pub fn new(kind: &str, dtype: Dtype, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.to_string(),
            dtype,
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: &str, shape: [usize; 2], data: Vec<f64>) {
        assert_eq!(shape[0] * shape[1], data.len(), "tensor {name} has the wrong length");
        self.tensors.push((
            TensorInfo {
                name: name.to_string(),
                shape,
            },
            data,
        ));
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(info, _)| info.name == name)
            .map(|(_, d)| d.as_slice())
            .with_context(|| format!("tensor `{name}` missing from {} file", self.kind))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format: 1,
            dtype: self.dtype,
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: self.tensors.iter().map(|(i, _)| i.clone()).collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, data) in &self.tensors {
            for &v in data {
                match self.dtype {
                    Dtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Dtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        ensure!(
            bytes.len() >= 16 && &bytes[..8] == MAGIC,
            "not a tensor file (bad magic)"
        );
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        ensure!(bytes.len() >= 16 + len, "truncated header");
        let header: Header = serde_json::from_slice(&bytes[16..16 + len]).context("malformed header")?;
        if header.format != 1 {
            bail!("unsupported tensor file format {}", header.format);
        }
        let width = header.dtype.width();
        let mut at = 16 + len;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for info in header.tensors {
            let n = info.shape[0] * info.shape[1];
            let end = at + n * width;
            ensure!(bytes.len() >= end, "truncated data for tensor `{}`", info.name);
            let data = bytes[at..end]
                .chunks_exact(width)
                .map(|c| match header.dtype {
                    Dtype::F32 => f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64,
                    Dtype::F64 => f64::from_le_bytes(c.try_into().expect("8 bytes")),
                })
                .collect();
            tensors.push((info, data));
            at = end;
        }
        ensure!(
            at == bytes.len(),
            "{} trailing bytes after the last tensor",
            bytes.len() - at
        );
        Ok(Self {
            kind: header.kind,
            dtype: header.dtype,
            meta: header.meta,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&bytes).with_context(|| format!("parsing {}", path.display()))
    }
}
