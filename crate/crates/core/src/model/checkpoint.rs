//! Versioned binary checkpoints: a JSON header (network config plus free-form
//! metadata) followed by named, shaped `f32` arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Fanet, NetworkConfig};
use crate::error::{Error, Result};
use crate::nn::Module;
use crate::tensor::Scalar;

const MAGIC: &[u8; 8] = b"FANETCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    #[serde(default)]
    metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub network: NetworkConfig,
    /// Training config, seed, epoch and anything else worth keeping with the weights.
    pub metadata: serde_json::Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn from_model<F: Scalar>(model: &mut Fanet<F>, metadata: serde_json::Value) -> Self {
        let mut arrays = Vec::new();
        model.visit("", &mut |name, _, p| {
            arrays.push(NamedArray {
                name: name.to_string(),
                shape: p.shape.clone(),
                values: p.value.iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
        });
        Self {
            network: model.config().clone(),
            metadata,
            arrays,
        }
    }

    /// Builds a model with this checkpoint's weights.
    pub fn to_model<F: Scalar>(&self) -> Result<Fanet<F>> {
        let mut model = Fanet::new(self.network.clone(), 0)?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Copies weights into an existing model; the config must match exactly.
    pub fn load_into<F: Scalar>(&self, model: &mut Fanet<F>) -> Result<()> {
        if model.config() != &self.network {
            return Err(Error::Checkpoint(format!(
                "checkpoint was saved for {:?} but the model is {:?}",
                self.network,
                model.config()
            )));
        }
        let mut arrays = self.arrays.iter();
        let mut failure = None;
        model.visit("", &mut |name, _, p| {
            if failure.is_some() {
                return;
            }
            match arrays.next() {
                Some(a) if a.name == name && a.shape == p.shape => {
                    for (dst, &src) in p.value.iter_mut().zip(&a.values) {
                        *dst = F::from_f64_lossy(f64::from(src));
                    }
                }
                Some(a) => {
                    failure = Some(format!(
                        "expected `{name}` {:?}, found `{}` {:?}",
                        p.shape, a.name, a.shape
                    ))
                }
                None => failure = Some(format!("missing array `{name}`")),
            }
        });
        if let Some(msg) = failure {
            return Err(Error::Checkpoint(msg));
        }
        if arrays.next().is_some() {
            return Err(Error::Checkpoint("checkpoint has extra arrays".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&Header {
            network: self.network.clone(),
            metadata: self.metadata.clone(),
        })
        .expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.extend_from_slice(&(a.shape.len() as u32).to_le_bytes());
            for &d in &a.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &a.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        let count = r.u32()?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("array name is not utf-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = shape.iter().product();
            let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            arrays.push(NamedArray { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Self {
            network: header.network,
            metadata: header.metadata,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Ablation;

    fn tiny() -> NetworkConfig {
        NetworkConfig::default().with_widths(&[4, 8])
    }

    #[test]
    fn round_trip_restores_weights() {
        let mut a = Fanet::<f32>::new(tiny(), 1).unwrap();
        let ckpt = Checkpoint::from_model(&mut a, serde_json::json!({"seed": 1}));
        let bytes = ckpt.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        let mut b: Fanet<f32> = back.to_model().unwrap();
        assert_eq!(Checkpoint::from_model(&mut b, serde_json::json!({"seed": 1})), ckpt);
    }

    #[test]
    fn mismatched_config_is_rejected() {
        let mut a = Fanet::<f32>::new(tiny(), 1).unwrap();
        let ckpt = Checkpoint::from_model(&mut a, serde_json::Value::Null);
        let mut other = Fanet::<f32>::new(tiny().with_ablation(Ablation::B1), 1).unwrap();
        assert!(matches!(ckpt.load_into(&mut other), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn truncated_bytes_are_rejected() {
        let mut a = Fanet::<f32>::new(tiny(), 1).unwrap();
        let bytes = Checkpoint::from_model(&mut a, serde_json::Value::Null).to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!").is_err());
    }
}
