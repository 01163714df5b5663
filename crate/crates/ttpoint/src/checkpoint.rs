//! Checkpoint container.
//!
//! Layout (little-endian): `TTPT`, `u32` version, `u32` byte length and UTF-8
//! TOML text (the run configuration plus a `[state]` table), then entries until
//! end of file. Each entry is a `u32` length and UTF-8 name, a `u8` dtype tag
//! (0 = f32), a `u32` rank, `u32` dims and the `f32` payload.

use std::path::Path;

use serde::{Deserialize, Serialize};
use ttpoint_core::harness::SgdMomentum;
use ttpoint_core::model::Model;
use ttpoint_core::nn::Module;
use ttpoint_core::rng::rng_from;
use ttpoint_core::Tensor;

use crate::config::RunConfig;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTPT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
/// Prefix of optimizer velocity entries.
pub const OPTIM_PREFIX: &str = "optim/";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainState {
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    #[serde(flatten)]
    config: RunConfig,
    state: TrainState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub state: TrainState,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    /// Parameters, then batch-norm buffers, then optimizer velocities.
    pub fn from_model(
        model: &Model<f32>,
        config: &RunConfig,
        state: TrainState,
        optimizer: Option<&SgdMomentum<f32>>,
    ) -> Self {
        let mut entries = Vec::new();
        for p in model.params_vec() {
            entries.push(Entry { name: p.name, shape: p.value.shape().to_vec(), data: p.value.data().to_vec() });
        }
        let mut bufs = Vec::new();
        model.buffers("", &mut bufs);
        for b in bufs {
            entries.push(Entry { name: b.name, shape: b.value.shape().to_vec(), data: b.value.data().to_vec() });
        }
        if let Some(opt) = optimizer {
            for (name, v) in opt.velocities() {
                entries.push(Entry {
                    name: format!("{OPTIM_PREFIX}{name}"),
                    shape: v.shape().to_vec(),
                    data: v.data().to_vec(),
                });
            }
        }
        let mut config = config.clone();
        config.model = model.config().clone();
        Self { version: VERSION, config, state, entries }
    }

    pub fn config_text(&self) -> String {
        toml::to_string(&Header { config: self.config.clone(), state: self.state.clone() })
            .expect("checkpoint header always serializes")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let text = self.config_text();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
            for &d in &e.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("missing TTPT magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("config text is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        let mut entries = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(n)?).map_err(|_| Error::format("entry name is not UTF-8"))?.to_owned();
            let dtype = r.take(1)?[0];
            if dtype != DTYPE_F32 {
                return Err(Error::format(format!("{name}: unknown dtype tag {dtype}")));
            }
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = r
                .take(count.checked_mul(4).ok_or_else(|| Error::format("entry too large"))?)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            entries.push(Entry { name, shape, data });
        }
        Ok(Self { version, config: header.config, state: header.state, entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn entry(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Rebuilds the model and copies every parameter and buffer.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::build(&self.config.model, &mut rng_from(0, &[]))?;
        let mut ps = Vec::new();
        model.params_mut("", &mut ps);
        for p in ps {
            self.copy_into(&p.name, p.value)?;
        }
        let mut bs = Vec::new();
        model.buffers_mut("", &mut bs);
        for b in bs {
            self.copy_into(&b.name, b.value)?;
        }
        Ok(model)
    }

    fn copy_into(&self, name: &str, t: &mut Tensor<f32>) -> Result<()> {
        let e = self.entry(name).ok_or_else(|| Error::format(format!("checkpoint lacks {name}")))?;
        if e.shape != t.shape() {
            return Err(Error::format(format!("{name}: shape {:?}, model expects {:?}", e.shape, t.shape())));
        }
        t.data_mut().copy_from_slice(&e.data);
        Ok(())
    }

    /// Optimizer velocities stored in the checkpoint, if any.
    pub fn optimizer(&self) -> Result<Option<SgdMomentum<f32>>> {
        let v: Vec<(String, Tensor<f32>)> = self
            .entries
            .iter()
            .filter_map(|e| {
                e.name.strip_prefix(OPTIM_PREFIX).map(|n| Tensor::from_vec(&e.shape, e.data.clone()).map(|t| (n.to_owned(), t)))
            })
            .collect::<std::result::Result<_, _>>()?;
        if v.is_empty() {
            return Ok(None);
        }
        let mut opt = SgdMomentum::new(self.config.train.momentum);
        opt.set_velocities(v);
        Ok(Some(opt))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
