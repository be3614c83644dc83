//! Checkpoint files.
//!
//! | field | encoding |
//! |---|---|
//! | magic | `MHOICKPT` |
//! | version | u32 LE, currently 1 |
//! | step | u64 LE, completed optimizer updates |
//! | tensor count | u32 LE |
//! | per tensor | name length u32, UTF-8 name, rows u32, cols u32, `rows·cols` f32 LE |
//!
//! Parameters are stored under their own names and the optimizer moments as
//! `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use maskhoi_core::{Error, Result};

use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MHOICKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn capture(params: &ParamStore, adam: &AdamState) -> Self {
        let mut tensors: Vec<(String, Tensor)> =
            params.entries.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (prefix, moments) in [("adam.m.", &adam.m), ("adam.v.", &adam.v)] {
            for (p, t) in params.entries.iter().zip(moments) {
                tensors.push((format!("{prefix}{}", p.name), t.clone()));
            }
        }
        Self { step: adam.step, tensors }
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format(format!("checkpoint has no tensor {name}")))
    }

    /// Copies weights into `params`, requiring every name and shape to match.
    pub fn restore_params(&self, params: &mut ParamStore) -> Result<()> {
        for p in &mut params.entries {
            let t = self.get(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::Format(format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn restore(&self, params: &mut ParamStore) -> Result<AdamState> {
        self.restore_params(params)?;
        let mut adam = AdamState::new(params);
        adam.step = self.step;
        for (prefix, moments) in [("adam.m.", &mut adam.m), ("adam.v.", &mut adam.v)] {
            for (p, slot) in params.entries.iter().zip(moments.iter_mut()) {
                let t = self.get(&format!("{prefix}{}", p.name))?;
                if t.shape() != slot.shape() {
                    return Err(Error::Format(format!("optimizer moment for {} has the wrong shape", p.name)));
                }
                *slot = t.clone();
            }
        }
        Ok(adam)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols as u32).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad magic; not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}; this build reads version {CHECKPOINT_VERSION}"
            )));
        }
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u32()? as usize;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let n = rows.checked_mul(cols).filter(|n| n.checked_mul(4).is_some());
            let n = n.ok_or_else(|| Error::Format(format!("tensor {name} is too large")))?;
            let raw = r.take(n * 4)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            tensors.push((name, Tensor::from_vec(rows, cols, data)));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok(Self { step, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
