//! Binary model checkpoint.
//!
//! Layout: magic `HGCN`, `u32` version, `u32` header length, JSON header
//! (layer spec, class names, provenance), every parameter tensor as
//! little-endian `f64` in declaration order, optional standardization
//! mean and std, then the SHA-256 of all preceding bytes.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::layers::{DenseParams, EmbedPoolParams, GraphConvParams};
use super::model::{Layer, ModelParams};
use crate::error::{Error, Result};
use crate::train::FeatureStats;

const MAGIC: &[u8; 4] = b"HGCN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub stats: Option<FeatureStats>,
    pub class_names: Vec<String>,
    pub provenance: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum LayerSpec {
    GraphConv { relations: usize, f_in: usize, f_out: usize },
    EmbedPool { f_in: usize, k: usize },
    Dense { d_in: usize, d_out: usize },
    Relu,
}

#[derive(Serialize, Deserialize)]
struct Header {
    input_width: usize,
    classes: usize,
    class_names: Vec<String>,
    layers: Vec<LayerSpec>,
    stats_dim: Option<usize>,
    provenance: BTreeMap<String, String>,
}

pub fn write_checkpoint(c: &Checkpoint) -> Vec<u8> {
    let layers = c
        .params
        .layers()
        .iter()
        .map(|l| match l {
            Layer::GraphConv(p) => LayerSpec::GraphConv {
                relations: p.relations(),
                f_in: p.f_in(),
                f_out: p.f_out(),
            },
            Layer::EmbedPool(p) => LayerSpec::EmbedPool { f_in: p.f_in(), k: p.k() },
            Layer::Dense(p) => LayerSpec::Dense { d_in: p.d_in(), d_out: p.d_out() },
            Layer::Relu => LayerSpec::Relu,
        })
        .collect();
    let header = Header {
        input_width: c.params.input_width(),
        classes: c.params.classes(),
        class_names: c.class_names.clone(),
        layers,
        stats_dim: c.stats.as_ref().map(|s| s.mean.len()),
        provenance: c.provenance.clone(),
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    let mut put = |vals: &[f64]| vals.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    for t in c.params.tensors() {
        put(t);
    }
    if let Some(s) = &c.stats {
        put(&s.mean);
        put(&s.std);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Corrupt {
                path: Default::default(),
                message: "checkpoint truncated".into(),
            }
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8))?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let corrupt = |m: &str| Error::Corrupt {
        path: Default::default(),
        message: m.into(),
    };
    if bytes.len() < 4 + 4 + 4 + 32 || &bytes[..4] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::ChecksumMismatch);
    }
    r.bytes = body;
    let header_len = r.u32()? as usize;
    let header: Header =
        serde_json::from_slice(r.take(header_len)?).map_err(|e| corrupt(&e.to_string()))?;
    let mut layers = Vec::with_capacity(header.layers.len());
    for spec in &header.layers {
        layers.push(match *spec {
            LayerSpec::GraphConv { relations, f_in, f_out } => {
                let taps = r.f64s((relations + 1) * f_in * f_out)?;
                let bias = r.f64s(f_out)?;
                Layer::GraphConv(GraphConvParams {
                    taps: Array3::from_shape_vec((relations + 1, f_in, f_out), taps).expect("sized"),
                    bias: Array1::from(bias),
                })
            }
            LayerSpec::EmbedPool { f_in, k } => Layer::EmbedPool(EmbedPoolParams {
                w: Array2::from_shape_vec((f_in, k), r.f64s(f_in * k)?).expect("sized"),
            }),
            LayerSpec::Dense { d_in, d_out } => {
                let w = r.f64s(d_in * d_out)?;
                let bias = r.f64s(d_out)?;
                Layer::Dense(DenseParams {
                    w: Array2::from_shape_vec((d_in, d_out), w).expect("sized"),
                    bias: Array1::from(bias),
                })
            }
            LayerSpec::Relu => Layer::Relu,
        });
    }
    let stats = match header.stats_dim {
        Some(d) => Some(FeatureStats {
            mean: r.f64s(d)?,
            std: r.f64s(d)?,
        }),
        None => None,
    };
    if r.pos != body.len() {
        return Err(corrupt("trailing bytes after tensors"));
    }
    let params = ModelParams::new(layers, header.input_width, header.classes)?;
    Ok(Checkpoint {
        params,
        stats,
        class_names: header.class_names,
        provenance: header.provenance,
    })
}

pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(c)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|e| match e {
        Error::Corrupt { message, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gcn::Architecture;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: ModelParams::init(&Architecture::default(), 54, 2, 3).unwrap(),
            stats: Some(FeatureStats {
                mean: (0..54).map(|i| i as f64 * 0.1).collect(),
                std: vec![1.5; 54],
            }),
            class_names: vec!["clustered".into(), "dispersed".into()],
            provenance: [("seed".to_string(), "3".to_string())].into(),
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let c = sample();
        let bytes = write_checkpoint(&c);
        assert_eq!(&bytes[..4], b"HGCN");
        assert_eq!(read_checkpoint(&bytes).unwrap(), c);
    }

    #[test]
    fn corruption_detected() {
        let bytes = write_checkpoint(&sample());
        let mut flipped = bytes.clone();
        flipped[200] ^= 1;
        assert!(matches!(read_checkpoint(&flipped), Err(Error::ChecksumMismatch)));
        assert!(read_checkpoint(&bytes[..bytes.len() - 10]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(read_checkpoint(&ver), Err(Error::VersionMismatch { .. })));
    }
}
