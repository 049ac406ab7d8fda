//! Versioned binary checkpoint container.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic        8 bytes   "HATCKPT\0"
//! version      u32       currently 1
//! manifest     u64 length, then that many bytes of UTF-8 JSON
//! count        u32       number of tensors
//! tensor × count:
//!   name       u16 length, then UTF-8 bytes
//!   rank       u8
//!   dims       u64 × rank
//!   data       f64 × Π dims, row-major
//! trailer      32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Tensor names: `body.{l}.weight`, `body.{l}.bias`, `head.{t}.weight`,
//! `head.{t}.bias`, and for HAT state `hat.embedding.{t}.{l}`,
//! `hat.snapshot.{t}.{l}`, `hat.cumulative.{k}.{l}`, where `{l}` is a body
//! layer index or `input` for the input-attention vector.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hat::{AttentionSet, CumulativeAttention, HatConfig, HatState, UnitVectors};
use crate::nn::{DenseLayer, Network};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"HATCKPT\0";
pub const VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub head_sizes: Vec<usize>,
    pub tasks_trained: usize,
    pub hat: Option<HatManifest>,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HatManifest {
    pub config: HatConfig,
    pub input_dim: Option<usize>,
    pub embeddings: usize,
    pub snapshot_scales: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub net: Network,
    pub hat: Option<HatState>,
    pub tasks_trained: usize,
    pub meta: BTreeMap<String, String>,
}

fn unit_tensors(prefix: &str, u: &UnitVectors, out: &mut Vec<(String, Tensor)>) {
    if let Some(v) = &u.input {
        out.push((format!("{prefix}.input"), Tensor::vector(v)));
    }
    for (l, v) in u.layers.iter().enumerate() {
        out.push((format!("{prefix}.{l}"), Tensor::vector(v)));
    }
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            input_dim: self.net.input_dim(),
            hidden: self.net.layer_sizes(),
            dropout: self.net.body().iter().map(DenseLayer::dropout_rate).collect(),
            head_sizes: self.net.heads().iter().map(DenseLayer::outputs).collect(),
            tasks_trained: self.tasks_trained,
            hat: self.hat.as_ref().map(|h| HatManifest {
                config: h.config().clone(),
                input_dim: h.input_dim(),
                embeddings: h.task_count(),
                snapshot_scales: h.snapshots().iter().map(|s| s.scale).collect(),
            }),
            meta: self.meta.clone(),
        }
    }

    fn tensors(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.net.body().iter().enumerate() {
            out.push((format!("body.{l}.weight"), layer.weight.clone()));
            out.push((format!("body.{l}.bias"), layer.bias.clone()));
        }
        for (t, head) in self.net.heads().iter().enumerate() {
            out.push((format!("head.{t}.weight"), head.weight.clone()));
            out.push((format!("head.{t}.bias"), head.bias.clone()));
        }
        if let Some(h) = &self.hat {
            for (t, e) in h.all_embeddings().iter().enumerate() {
                unit_tensors(&format!("hat.embedding.{t}"), e, &mut out);
            }
            for (t, s) in h.snapshots().iter().enumerate() {
                unit_tensors(&format!("hat.snapshot.{t}"), &s.units, &mut out);
            }
            for (k, c) in h.history().iter().enumerate() {
                unit_tensors(&format!("hat.cumulative.{k}"), &c.units, &mut out);
            }
        }
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest()).map_err(|e| Error::Format(e.to_string()))?;
        let tensors = self.tensors();
        let mut buf = Vec::with_capacity(64 + manifest.len() + tensors.iter().map(|(_, t)| 8 * t.len() + 64).sum::<usize>());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        buf.extend_from_slice(&manifest);
        buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, t) in &tensors {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                buf.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        Ok(buf)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(Error::Format("checkpoint digest mismatch".into()));
        }
        let mut r = Reader { buf: body, at: MAGIC.len() };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let mlen = r.u64()? as usize;
        let manifest: Manifest = serde_json::from_slice(r.take(mlen)?).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u16()? as usize;
            let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Tensor::from_vec(&shape, data).map_err(|e| Error::Format(format!("tensor {name}: {e}")))?;
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::Format(format!("duplicate tensor {name}")));
            }
        }
        if r.at != body.len() {
            return Err(Error::Format(format!("{} trailing bytes before digest", body.len() - r.at)));
        }
        Self::assemble(manifest, tensors)
    }

    fn assemble(m: Manifest, mut tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        let mut take = |name: String| -> Result<Tensor> {
            tensors.remove(&name).ok_or_else(|| Error::Format(format!("missing tensor {name}")))
        };
        if m.dropout.len() != m.hidden.len() {
            return Err(Error::Format("dropout list does not match hidden layers".into()));
        }
        let mut body = Vec::with_capacity(m.hidden.len());
        for (l, &rate) in m.dropout.iter().enumerate() {
            body.push(DenseLayer::new(take(format!("body.{l}.weight"))?, take(format!("body.{l}.bias"))?, rate)?);
        }
        let heads = (0..m.head_sizes.len())
            .map(|t| DenseLayer::new(take(format!("head.{t}.weight"))?, take(format!("head.{t}.bias"))?, 0.0))
            .collect::<Result<Vec<_>>>()?;
        let net = Network::from_parts(m.input_dim, body, heads)?;
        if net.layer_sizes() != m.hidden || net.heads().iter().map(DenseLayer::outputs).collect::<Vec<_>>() != m.head_sizes {
            return Err(Error::Format("manifest shapes disagree with stored tensors".into()));
        }

        let hat = match m.hat {
            None => None,
            Some(h) => {
                let layers = m.hidden.len();
                let mut units = |prefix: String| -> Result<UnitVectors> {
                    let input = match h.input_dim {
                        Some(_) => Some(take(format!("{prefix}.input"))?.into_data()),
                        None => None,
                    };
                    let layers = (0..layers)
                        .map(|l| take(format!("{prefix}.{l}")).map(Tensor::into_data))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(UnitVectors { input, layers })
                };
                let embeddings = (0..h.embeddings)
                    .map(|t| units(format!("hat.embedding.{t}")))
                    .collect::<Result<Vec<_>>>()?;
                let snapshots = h
                    .snapshot_scales
                    .iter()
                    .enumerate()
                    .map(|(t, &scale)| Ok(AttentionSet { units: units(format!("hat.snapshot.{t}"))?, scale }))
                    .collect::<Result<Vec<_>>>()?;
                let history = (0..=snapshots.len())
                    .map(|k| Ok(CumulativeAttention { units: units(format!("hat.cumulative.{k}"))?, tasks: k }))
                    .collect::<Result<Vec<_>>>()?;
                Some(HatState::from_parts(h.config, h.input_dim, m.hidden.clone(), embeddings, snapshots, history)?)
            }
        };
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::Format(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            net,
            hat,
            tasks_trained: m.tasks_trained,
            meta: m.meta,
        })
    }

    /// Write atomically: a sibling temporary file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let tmp = path.with_extension("tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&bytes)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Io(io::Error::new(io::ErrorKind::UnexpectedEof, "truncated checkpoint"))
        })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
