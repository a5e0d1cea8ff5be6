//! `.erpc`: named-tensor checkpoint container.
//!
//! ```text
//! "ERPC" | version u16
//! cfg_len u32 | architecture text (utf-8) | sha256(architecture text) [32]
//! step u64 | metric f64 | has_parent u8 | parent sha256 [32] if has_parent
//! state count u32 | tensors      graph parameters then buffers
//! extra count u32 | tensors      normalizer, attribution baseline, ...
//! tensor: name_len u16 | name | ndim u8 | ndim x u32 | f64 x numel
//! ```

use std::path::Path;

use erpcal_tensor::{Mode, ModelGraph, NamedTensor, Tensor};
use sha2::{Digest, Sha256};

use crate::bytes::{put_str, Reader};
use crate::models::{build, ArchConfig};
use crate::preprocess::Normalizer;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"ERPC";
pub const FORMAT_VERSION: u16 = 1;

pub type Hash = [u8; 32];

const NORM_MU: &str = "normalizer.mu";
const NORM_SIGMA: &str = "normalizer.sigma";
const NORM_EPS: &str = "normalizer.epsilon";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub step: u64,
    pub metric: f64,
    /// Hash of the checkpoint this one was fine-tuned from.
    pub parent: Option<Hash>,
    pub state: Vec<NamedTensor>,
    pub extras: Vec<NamedTensor>,
}

pub fn sha256(bytes: &[u8]) -> Hash {
    Sha256::digest(bytes).into()
}

pub fn hex(h: &Hash) -> String {
    h.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_graph(arch: &ArchConfig, graph: &ModelGraph, step: u64, metric: f64) -> Self {
        Checkpoint { arch: arch.clone(), step, metric, parent: None, state: graph.state(), extras: Vec::new() }
    }

    /// Rebuilds the graph in eval mode with the stored weights.
    pub fn to_graph(&self) -> Result<ModelGraph> {
        let mut g = build(&self.arch, 0)?;
        g.load_state(&self.state)?;
        g.set_mode(Mode::Eval);
        Ok(g)
    }

    pub fn extra(&self, name: &str) -> Option<&Tensor> {
        self.extras.iter().find(|n| n.name == name).map(|n| &n.tensor)
    }

    pub fn set_extra(&mut self, name: &str, tensor: Tensor) {
        match self.extras.iter_mut().find(|n| n.name == name) {
            Some(slot) => slot.tensor = tensor,
            None => self.extras.push(NamedTensor { name: name.to_string(), tensor }),
        }
    }

    pub fn set_normalizer(&mut self, n: &Normalizer) {
        self.set_extra(NORM_MU, n.mu.clone());
        self.set_extra(NORM_SIGMA, n.sigma.clone());
        self.set_extra(NORM_EPS, Tensor::scalar(n.epsilon));
    }

    pub fn normalizer(&self) -> Result<Option<Normalizer>> {
        match (self.extra(NORM_MU), self.extra(NORM_SIGMA), self.extra(NORM_EPS)) {
            (None, None, None) => Ok(None),
            (Some(mu), Some(sigma), Some(eps)) if mu.shape() == sigma.shape() && eps.numel() == 1 => {
                Ok(Some(Normalizer { mu: mu.clone(), sigma: sigma.clone(), epsilon: eps.data()[0] }))
            }
            _ => Err(Error::Format("incomplete normalizer in checkpoint".into())),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let text = self.arch.to_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32_len(text.len(), "architecture text")?.to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&sha256(text.as_bytes()));
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.metric.to_bits().to_le_bytes());
        match &self.parent {
            Some(h) => {
                out.push(1);
                out.extend_from_slice(h);
            }
            None => out.push(0),
        }
        for list in [&self.state, &self.extras] {
            out.extend_from_slice(&u32_len(list.len(), "tensors")?.to_le_bytes());
            for nt in list {
                put_tensor(&mut out, nt)?;
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic").map_err(|_| Error::Format("file too short for magic".into()))? != MAGIC {
            return Err(Error::Format("bad magic, not an .erpc checkpoint".into()));
        }
        let version = r.u16("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32("architecture length")? as usize;
        let text_bytes = r.take(n, "architecture text")?;
        let stored: Hash = r.take(32, "architecture hash")?.try_into().expect("32 bytes");
        if sha256(text_bytes) != stored {
            return Err(Error::Format("architecture hash mismatch".into()));
        }
        let text = std::str::from_utf8(text_bytes).map_err(|_| Error::Format("architecture text is not utf-8".into()))?;
        let arch = ArchConfig::from_text(text)?;
        let step = r.u64("step")?;
        let metric = r.f64("metric")?;
        let parent = match r.u8("parent flag")? {
            0 => None,
            1 => Some(r.take(32, "parent hash")?.try_into().expect("32 bytes")),
            f => return Err(Error::Format(format!("parent flag {f}"))),
        };
        let mut lists = [Vec::new(), Vec::new()];
        for list in &mut lists {
            let count = r.u32("tensor count")?;
            for _ in 0..count {
                list.push(read_tensor(&mut r)?);
            }
        }
        r.finish()?;
        let [state, extras] = lists;
        Ok(Checkpoint { arch, step, metric, parent, state, extras })
    }

    pub fn hash(&self) -> Result<Hash> {
        Ok(sha256(&self.encode()?))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::decode(&std::fs::read(path)?)
    }
}

fn u32_len(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("too many {what}")))
}

fn put_tensor(out: &mut Vec<u8>, nt: &NamedTensor) -> Result<()> {
    put_str(out, &nt.name)?;
    let shape = nt.tensor.shape();
    out.push(u8::try_from(shape.len()).map_err(|_| Error::Format(format!("{}: too many dims", nt.name)))?);
    for &d in shape {
        out.extend_from_slice(&u32_len(d, "elements")?.to_le_bytes());
    }
    for v in nt.tensor.data() {
        out.extend_from_slice(&v.to_bits().to_le_bytes());
    }
    Ok(())
}

fn read_tensor(r: &mut Reader<'_>) -> Result<NamedTensor> {
    let name = r.string("tensor name")?;
    let ndim = r.u8("tensor rank")? as usize;
    let shape = (0..ndim).map(|_| r.u32("tensor dim").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Format("tensor size overflow".into()))?;
    let raw = r.take(numel.checked_mul(8).ok_or_else(|| Error::Format("tensor size overflow".into()))?, &name)?;
    let data = raw.chunks_exact(8).map(|b| f64::from_bits(u64::from_le_bytes(b.try_into().expect("8 bytes")))).collect();
    Ok(NamedTensor { tensor: Tensor::new(shape, data)?, name })
}
