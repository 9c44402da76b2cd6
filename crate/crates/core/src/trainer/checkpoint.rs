//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic    "MELMO1\0"
//! version  u32
//! config   u32 byte length + UTF-8 "key=value" lines
//! count    u32
//! tensor*  u16 name length, UTF-8 name, u8 rank, u64 dims[rank],
//!          u8 dtype (0 = f32, 1 = f64), raw values
//! ```
//!
//! Optimizer moments are stored as `opt/m/<param>` and `opt/v/<param>`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::model::{ModelConfig, ModelParams};
use crate::numkernel::Tensor;

use super::optim::OptimState;
use super::TrainError;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"MELMO1\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optim: Option<OptimState>,
    /// Free-form run metadata, stored in the config block under `run.`.
    pub meta: BTreeMap<String, String>,
}

fn config_block(ck: &Checkpoint) -> String {
    let c = &ck.params.config;
    let mut kv: Vec<(String, String)> = vec![
        ("model.layers".into(), c.layers.to_string()),
        ("model.width".into(), c.width.to_string()),
        ("model.hidden".into(), c.hidden.to_string()),
        ("model.proj".into(), c.proj.to_string()),
        ("model.vocab".into(), c.vocab.to_string()),
        ("model.cell_clip".into(), c.cell_clip.to_string()),
        ("model.proj_clip".into(), c.proj_clip.to_string()),
        ("model.variant".into(), c.variant.to_string()),
    ];
    if let Some(o) = &ck.optim {
        kv.extend([
            ("optim.step".into(), o.step.to_string()),
            ("optim.epoch".into(), o.epoch.to_string()),
            ("optim.base_lr".into(), o.base_lr.to_string()),
            ("optim.decay".into(), o.decay.to_string()),
            ("optim.beta1".into(), o.beta1.to_string()),
            ("optim.beta2".into(), o.beta2.to_string()),
            ("optim.eps".into(), o.eps.to_string()),
        ]);
    }
    for (k, v) in &ck.meta {
        kv.push((format!("run.{k}"), v.replace(['\n', '\r'], " ")));
    }
    kv.into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u16).to_le_bytes());
    out.extend(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend((d as u64).to_le_bytes());
    }
    out.push(DTYPE_F64);
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(CHECKPOINT_MAGIC);
    out.extend(CHECKPOINT_VERSION.to_le_bytes());
    let block = config_block(ck);
    out.extend((block.len() as u32).to_le_bytes());
    out.extend(block.as_bytes());
    let named = ck.params.named_tensors();
    let count = named.len() + ck.optim.as_ref().map_or(0, |o| o.m.len() + o.v.len());
    out.extend((count as u32).to_le_bytes());
    for (name, t) in &named {
        put_tensor(&mut out, name, t);
    }
    if let Some(o) = &ck.optim {
        for ((name, _), m) in named.iter().zip(&o.m) {
            put_tensor(&mut out, &format!("opt/m/{name}"), m);
        }
        for ((name, _), v) in named.iter().zip(&o.v) {
            put_tensor(&mut out, &format!("opt/v/{name}"), v);
        }
    }
    out
}

pub fn save_checkpoint(ck: &Checkpoint, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ck)).map_err(|source| TrainError::Io { path: path.display().to_string(), source })
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.buf.len() < n {
            return Err(TrainError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], TrainError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, TrainError> {
        Ok(self.array::<1>()?[0])
    }

    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn utf8(&mut self, n: usize) -> Result<&'a str, TrainError> {
        std::str::from_utf8(self.take(n)?).map_err(|_| TrainError::Format("invalid UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), TrainError> {
        let len = self.u16()? as usize;
        let name = self.utf8(len)?.to_string();
        let rank = self.u8()? as usize;
        let shape = (0..rank).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(TrainError::Truncated)?;
        let data = match self.u8()? {
            DTYPE_F64 => {
                let raw = self.take(n.checked_mul(8).ok_or(TrainError::Truncated)?)?;
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            }
            DTYPE_F32 => {
                let raw = self.take(n.checked_mul(4).ok_or(TrainError::Truncated)?)?;
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
            d => return Err(TrainError::Format(format!("tensor {name}: unknown dtype {d}"))),
        };
        let t = Tensor::new(shape, data).map_err(|e| TrainError::Format(format!("tensor {name}: {e}")))?;
        Ok((name, t))
    }
}

fn parse<T: std::str::FromStr>(kv: &HashMap<&str, &str>, key: &str) -> Result<T, TrainError> {
    kv.get(key)
        .ok_or_else(|| TrainError::Format(format!("missing config key {key}")))?
        .parse()
        .map_err(|_| TrainError::Format(format!("bad value for {key}")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, TrainError> {
    let mut r = Reader { buf: bytes };
    let magic = r.take(CHECKPOINT_MAGIC.len().min(bytes.len()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(if CHECKPOINT_MAGIC.starts_with(magic) { TrainError::Truncated } else { TrainError::BadMagic });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(TrainError::Format(format!("unsupported version {version}")));
    }
    let block_len = r.u32()? as usize;
    let block = r.utf8(block_len)?;
    let kv: HashMap<&str, &str> = block.lines().filter_map(|l| l.split_once('=')).collect();
    let config = ModelConfig {
        layers: parse(&kv, "model.layers")?,
        width: parse(&kv, "model.width")?,
        hidden: parse(&kv, "model.hidden")?,
        proj: parse(&kv, "model.proj")?,
        vocab: parse(&kv, "model.vocab")?,
        cell_clip: parse(&kv, "model.cell_clip")?,
        proj_clip: parse(&kv, "model.proj_clip")?,
        variant: kv
            .get("model.variant")
            .ok_or_else(|| TrainError::Format("missing config key model.variant".into()))?
            .parse()
            .map_err(TrainError::Format)?,
    };
    let count = r.u32()? as usize;
    let mut tensors = HashMap::with_capacity(count);
    for _ in 0..count {
        let (name, t) = r.tensor()?;
        tensors.insert(name, t);
    }
    if !r.buf.is_empty() {
        return Err(TrainError::Format(format!("{} trailing bytes", r.buf.len())));
    }
    let params = ModelParams::from_named(&config, |n| tensors.remove(n))?;
    let optim = if kv.contains_key("optim.step") {
        let names = ModelParams::names(&config);
        let mut moments = |prefix: &str| {
            names
                .iter()
                .map(|n| {
                    let key = format!("opt/{prefix}/{n}");
                    tensors.remove(&key).ok_or_else(|| TrainError::Format(format!("missing tensor {key}")))
                })
                .collect::<Result<Vec<_>, _>>()
        };
        let (m, v) = (moments("m")?, moments("v")?);
        Some(OptimState {
            m,
            v,
            step: parse(&kv, "optim.step")?,
            epoch: parse(&kv, "optim.epoch")?,
            base_lr: parse(&kv, "optim.base_lr")?,
            decay: parse(&kv, "optim.decay")?,
            beta1: parse(&kv, "optim.beta1")?,
            beta2: parse(&kv, "optim.beta2")?,
            eps: parse(&kv, "optim.eps")?,
        })
    } else {
        None
    };
    let meta = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("run.").map(|k| (k.to_string(), v.to_string())))
        .collect();
    Ok(Checkpoint { params, optim, meta })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, TrainError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TrainError::Io { path: path.display().to_string(), source })?;
    decode_checkpoint(&bytes)
}
