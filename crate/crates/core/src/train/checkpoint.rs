//! Little-endian binary checkpoints.
//!
//! ```text
//! "DPSNETCK"  u32 version  u32 len + config text  u64 step
//! u32 count, then per tensor: u32 len + name, u32 rank, u64 extents, f64 data
//! ```
//! Tensors are the parameters in store order followed by Adam's first and
//! second moments, named `adam.m/<param>` and `adam.v/<param>`.

use std::path::Path;

use crate::blocks::DpsNet;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;
use crate::train::{Adam, TrainConfig};

pub const MAGIC: &[u8; 8] = b"DPSNETCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub step: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> std::result::Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "string is not UTF-8".to_string())
    }

    fn tensor(&mut self) -> std::result::Result<(String, Tensor), String> {
        let name = self.string()?;
        let rank = self.u32()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|e| e as usize)).collect::<std::result::Result<Vec<_>, _>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b)).ok_or("tensor extents overflow")?;
        let raw = self.take(numel.checked_mul(8).ok_or("tensor extents overflow")?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let t = Tensor::new(&shape, data).map_err(|e| e.to_string())?;
        Ok((name, t))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u32).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_str(out, name);
    out.extend((t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend((e as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn new(config: &TrainConfig, store: &ParamStore, adam: &Adam) -> Self {
        Checkpoint {
            config: config.clone(),
            step: adam.step,
            params: store.names().iter().cloned().zip(store.tensors().iter().cloned()).collect(),
            adam_m: adam.m.clone(),
            adam_v: adam.v.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(VERSION.to_le_bytes());
        put_str(&mut out, &self.config.to_text());
        out.extend(self.step.to_le_bytes());
        out.extend(((self.params.len() * 3) as u32).to_le_bytes());
        for (name, t) in &self.params {
            put_tensor(&mut out, name, t);
        }
        for (prefix, moments) in [("adam.m/", &self.adam_m), ("adam.v/", &self.adam_v)] {
            for ((name, _), t) in self.params.iter().zip(moments) {
                put_tensor(&mut out, &format!("{prefix}{name}"), t);
            }
        }
        out
    }

    /// `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let err = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(MAGIC.as_slice()) {
            return Err(err("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32().map_err(err)?;
        if version != VERSION {
            return Err(err(format!("format version {version}, this build reads version {VERSION}")));
        }
        let text = r.string().map_err(err)?;
        let config = TrainConfig::parse(&text).map_err(|e| err(format!("embedded config: {e}")))?;
        let step = r.u64().map_err(err)?;
        let count = r.u32().map_err(err)? as usize;
        if count % 3 != 0 {
            return Err(err(format!("{count} tensors is not params plus two moment sets")));
        }
        let mut tensors = (0..count).map(|_| r.tensor()).collect::<std::result::Result<Vec<_>, _>>().map_err(err)?;
        if r.pos != bytes.len() {
            return Err(err(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let n = count / 3;
        let adam_v: Vec<_> = tensors.split_off(2 * n);
        let adam_m: Vec<_> = tensors.split_off(n);
        for (prefix, moments) in [("adam.m/", &adam_m), ("adam.v/", &adam_v)] {
            for ((name, p), (mname, m)) in tensors.iter().zip(moments) {
                if *mname != format!("{prefix}{name}") || m.shape() != p.shape() {
                    return Err(err(format!("moment record {mname} does not match parameter {name}")));
                }
            }
        }
        Ok(Checkpoint {
            config,
            step,
            params: tensors,
            adam_m: adam_m.into_iter().map(|(_, t)| t).collect(),
            adam_v: adam_v.into_iter().map(|(_, t)| t).collect(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Rebuilds the network with these weights.
    pub fn network(&self) -> Result<(DpsNet, ParamStore)> {
        let (net, mut store) = DpsNet::new(self.config.net.clone(), self.config.seed)?;
        store.load(self.params.clone())?;
        Ok((net, store))
    }

    pub fn optimizer(&self) -> Adam {
        Adam {
            beta1: self.config.adam_beta1,
            beta2: self.config.adam_beta2,
            eps: self.config.adam_eps,
            step: self.step,
            m: self.adam_m.clone(),
            v: self.adam_v.clone(),
        }
    }
}
