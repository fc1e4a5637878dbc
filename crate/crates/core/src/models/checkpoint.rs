//! Binary checkpoint files.
//!
//! Layout: 8-byte magic, `u64` LE manifest length, JSON manifest, then every
//! tensor as little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, QNetwork};
use crate::error::{Error, Result};
use crate::nn::{Module, TensorRole};

pub const MAGIC: [u8; 8] = *b"QFCKPT01";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredRole {
    Param,
    Buffer,
    Extra,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: StoredRole,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub model: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub extra: serde_json::Value,
}

/// A decoded checkpoint held in memory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub data: Vec<Vec<f64>>,
}

impl Checkpoint {
    /// Captures the network plus optional extra arrays (optimizer moments).
    pub fn capture(net: &QNetwork, extras: &[(String, Vec<usize>, Vec<f64>)], extra: serde_json::Value) -> Self {
        let mut tensors = Vec::new();
        let mut data = Vec::new();
        for (name, t, role) in net.state() {
            let role = match role {
                TensorRole::Param => StoredRole::Param,
                TensorRole::Buffer => StoredRole::Buffer,
            };
            tensors.push(TensorEntry { name, shape: t.dims().to_vec(), role });
            data.push(t.to_vec());
        }
        for (name, shape, values) in extras {
            tensors.push(TensorEntry { name: name.clone(), shape: shape.clone(), role: StoredRole::Extra });
            data.push(values.clone());
        }
        Checkpoint {
            manifest: Manifest { format_version: FORMAT_VERSION, model: net.config().clone(), tensors, extra },
            data,
        }
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        w.write_all(&MAGIC)?;
        w.write_all(&(manifest.len() as u64).to_le_bytes())?;
        w.write_all(&manifest)?;
        for values in &self.data {
            for v in values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
        if magic != MAGIC {
            return Err(Error::BadMagic { expected: MAGIC, found: magic });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        if len > 64 << 20 {
            return Err(Error::Checkpoint(format!("manifest length {len} is implausible")));
        }
        let mut manifest = vec![0u8; len];
        r.read_exact(&mut manifest)?;
        let manifest: Manifest = serde_json::from_slice(&manifest)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let mut data = Vec::with_capacity(manifest.tensors.len());
        let mut buf = [0u8; 8];
        for entry in &manifest.tensors {
            let n: usize = entry.shape.iter().product();
            let mut values = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut buf)
                    .map_err(|_| Error::Checkpoint(format!("truncated data in tensor {}", entry.name)))?;
                values.push(f64::from_le_bytes(buf));
            }
            data.push(values);
        }
        Ok(Checkpoint { manifest, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    /// Values of an extra array by name.
    pub fn extra_tensor(&self, name: &str) -> Option<&[f64]> {
        self.manifest
            .tensors
            .iter()
            .position(|e| e.role == StoredRole::Extra && e.name == name)
            .map(|i| self.data[i].as_slice())
    }

    /// Writes stored parameters and buffers into `net`, checking names and shapes.
    pub fn restore_into(&self, net: &QNetwork) -> Result<()> {
        if net.config() != &self.manifest.model {
            return Err(Error::Checkpoint("model configuration differs from checkpoint".into()));
        }
        let stored: Vec<_> = self
            .manifest
            .tensors
            .iter()
            .zip(&self.data)
            .filter(|(e, _)| e.role != StoredRole::Extra)
            .collect();
        let state = net.state();
        if stored.len() != state.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, network has {}",
                stored.len(),
                state.len()
            )));
        }
        for ((entry, values), (name, t, _)) in stored.into_iter().zip(state) {
            if entry.name != name || entry.shape != t.dims() {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: stored {} {:?}, expected {name} {:?}",
                    entry.name,
                    entry.shape,
                    t.dims()
                )));
            }
            t.data_mut().copy_from_slice(values);
        }
        Ok(())
    }

    /// Builds a network from the stored configuration and values.
    pub fn to_network(&self) -> Result<QNetwork> {
        let net = QNetwork::new(&self.manifest.model)?;
        self.restore_into(&net)?;
        Ok(net)
    }
}

pub fn save(path: impl AsRef<Path>, net: &QNetwork) -> Result<()> {
    Checkpoint::capture(net, &[], serde_json::Value::Null).save(path)
}

pub fn load(path: impl AsRef<Path>) -> Result<QNetwork> {
    Checkpoint::load(path)?.to_network()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ConvSpec, Variant};

    fn tiny() -> ModelConfig {
        let mut cfg = ModelConfig::new(Variant::Dcqn, 3);
        cfg.frame_size = 12;
        cfg.frames = 2;
        cfg.conv = vec![ConvSpec::new(3, 4, 2), ConvSpec::new(4, 3, 1)];
        cfg.fc = vec![6, 5];
        cfg
    }

    #[test]
    fn round_trip_is_bitwise() {
        let net = QNetwork::new(&tiny()).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::capture(&net, &[("adam.step".into(), vec![1], vec![7.0])], serde_json::json!({"episode": 3}))
            .write_to(&mut bytes)
            .unwrap();
        let ck = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(ck.extra_tensor("adam.step"), Some(&[7.0][..]));
        assert_eq!(ck.manifest.extra["episode"], 3);
        let back = ck.to_network().unwrap();
        assert_eq!(back.max_abs_diff(&net), 0.0);
    }

    #[test]
    fn bad_magic_is_reported() {
        let err = Checkpoint::read_from(&b"NOTACKPT\0\0\0\0\0\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, Error::BadMagic { .. }));
    }

    #[test]
    fn mismatched_config_rejected() {
        let net = QNetwork::new(&tiny()).unwrap();
        let ck = Checkpoint::capture(&net, &[], serde_json::Value::Null);
        let mut other = tiny();
        other.fc = vec![7, 5];
        assert!(ck.restore_into(&QNetwork::new(&other).unwrap()).is_err());
    }
}
