//! Encoder-only checkpoints.
//!
//! Layout: the line `SENSELEARN-CKPT 1`, a little-endian `u64` header length,
//! the JSON header, then every tensor as raw little-endian values in the
//! header's dtype.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{EncoderConfig, Network};
use super::real::Real;
use crate::error::{Error, Result};
use crate::seed::SeedStream;
use crate::types::TaskSpec;

pub const MAGIC: &str = "SENSELEARN-CKPT 1\n";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub epochs: usize,
    pub dataset: String,
    #[serde(default)]
    pub subjects: Vec<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    task: Option<TaskSpec>,
    provenance: Provenance,
    channels: Vec<usize>,
    window_len: usize,
    dtype: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Values widened to f64; narrowing back is exact for f32 checkpoints.
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: EncoderConfig,
    pub task: Option<TaskSpec>,
    pub provenance: Provenance,
    pub channels: Vec<usize>,
    pub window_len: usize,
    pub dtype: String,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    /// Captures the encoder (modality streams and shared layer) only.
    pub fn from_network<R: Real>(
        net: &mut Network<R>,
        task: Option<TaskSpec>,
        provenance: Provenance,
    ) -> Self {
        let tensors = net
            .encoder_state()
            .into_iter()
            .map(|(name, shape, values)| Tensor {
                name,
                shape,
                data: values.iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self {
            config: net.config.clone(),
            task,
            provenance,
            channels: net.channels.clone(),
            window_len: net.window_len,
            dtype: R::DTYPE.to_string(),
            tensors,
        }
    }

    /// Rebuilds an encoder-only network with these parameters.
    pub fn to_network<R: Real>(&self) -> Result<Network<R>> {
        let mut net =
            Network::<R>::encoder_only(&self.config, &self.channels, self.window_len, &SeedStream::new(0))?;
        let mut expected = Vec::new();
        net.visit_encoder(&mut |_, p| expected.push((p.name.clone(), p.shape.clone())));
        if expected.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} encoder tensors, found {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&self.tensors) {
            if name != &t.name || shape != &t.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor {} {:?} does not match expected {} {:?}",
                    t.name, t.shape, name, shape
                )));
            }
        }
        let mut tensors = self.tensors.iter();
        net.visit_encoder(&mut |_, p| {
            let t = tensors.next().expect("length checked");
            for (dst, &src) in p.value.iter_mut().zip(&t.data) {
                *dst = R::c(src);
            }
        });
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let width = dtype_width(&self.dtype)?;
        let mut offset = 0;
        let entries = self
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += t.data.len() * width;
                e
            })
            .collect();
        let header = Header {
            config: self.config.clone(),
            task: self.task.clone(),
            provenance: self.provenance.clone(),
            channels: self.channels.clone(),
            window_len: self.window_len,
            dtype: self.dtype.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + offset);
        out.extend_from_slice(MAGIC.as_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.tensors {
            for &v in &t.data {
                if width == 4 {
                    out.extend_from_slice(&(v as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .ok_or_else(|| bad("not a senselearn checkpoint"))?;
        if rest.len() < 8 {
            return Err(bad("truncated header"));
        }
        let hlen = u64::from_le_bytes(rest[..8].try_into().expect("8 bytes")) as usize;
        let rest = &rest[8..];
        if rest.len() < hlen {
            return Err(bad("truncated header"));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen])?;
        let data = &rest[hlen..];
        let width = dtype_width(&header.dtype)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * width;
            let raw = data
                .get(e.offset..end)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let values = raw
                .chunks_exact(width)
                .map(|c| {
                    if width == 4 {
                        f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    } else {
                        f64::from_le_bytes(c.try_into().expect("8 bytes"))
                    }
                })
                .collect();
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: values,
            });
        }
        Ok(Self {
            config: header.config,
            task: header.task,
            provenance: header.provenance,
            channels: header.channels,
            window_len: header.window_len,
            dtype: header.dtype,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// SHA-256 over the serialized checkpoint, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex(&Sha256::digest(self.to_bytes()?)))
    }
}

/// SHA-256 of every parameter the visitor reaches, in visiting order.
pub fn param_hash<R: Real>(net: &mut Network<R>, encoder_only: bool) -> String {
    let mut h = Sha256::new();
    let mut feed = |name: &str, values: &[R]| {
        h.update(name.as_bytes());
        for v in values {
            h.update(v.as_f64().to_le_bytes());
        }
    };
    if encoder_only {
        net.visit_encoder(&mut |_, p| feed(&p.name, p.value));
    } else {
        net.visit_params(&mut |_, p| feed(&p.name, p.value));
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn dtype_width(dtype: &str) -> Result<usize> {
    match dtype {
        "f32" => Ok(4),
        "f64" => Ok(8),
        other => Err(Error::Checkpoint(format!("unsupported dtype {other:?}"))),
    }
}
