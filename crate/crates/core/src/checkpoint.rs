//! Binary checkpoint: parameters, optimizer state and the resolved config text.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HSAL" u32:version
//! u32:count { u32:name_len name u32:ndim u64:dims.. f64:data.. }
//! u8:has_state [ u64:epoch u64:batches u64:step f64:lr f64:beta1 f64:beta2 f64:eps
//!                u32:slots { tensor:first tensor:second } ]
//! u32:config_len config
//! ```
//!
//! where `tensor` is `u32:ndim u64:dims.. f64:data..`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::learning::TrainState;
use crate::ndgrad::{Adam, AdamConfig, ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"HSAL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub state: Option<TrainState>,
    pub config: String,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len() as u32);
        for &d in t.shape() {
            self.u64(d as u64);
        }
        for &x in t.data() {
            self.f64(x);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            found: self.buf.len(),
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("checkpoint string is not UTF-8".into()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32()? as usize;
        if ndim > 8 {
            return Err(Error::Format(format!("implausible tensor rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(self.u64()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Format(format!("tensor of shape {shape:?} exceeds the file")))?;
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(self.f64()?);
        }
        Tensor::new(shape, data)
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u32(VERSION);
    w.u32(ckpt.params.len() as u32);
    for (name, value) in ckpt.params.iter() {
        w.bytes(name.as_bytes());
        w.tensor(value);
    }
    match &ckpt.state {
        None => w.0.push(0),
        Some(st) => {
            w.0.push(1);
            w.u64(st.epoch as u64);
            w.u64(st.batches as u64);
            let opt = &st.optimizer;
            w.u64(opt.step);
            for v in [opt.config.lr, opt.config.beta1, opt.config.beta2, opt.config.eps] {
                w.f64(v);
            }
            w.u32(opt.first.len() as u32);
            for (m, v) in opt.first.iter().zip(&opt.second) {
                w.tensor(m);
                w.tensor(v);
            }
        }
    }
    w.bytes(ckpt.config.as_bytes());
    w.0
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4).map_err(|_| Error::Format("file too short for a checkpoint".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:02x?}")));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version} is not supported (expected {VERSION})"
        )));
    }
    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let value = r.tensor()?;
        if params.find(&name).is_some() {
            return Err(Error::Format(format!("duplicate parameter `{name}`")));
        }
        params.insert(name, value);
    }
    let state = match r.u8()? {
        0 => None,
        1 => {
            let epoch = r.u64()? as usize;
            let batches = r.u64()? as usize;
            let step = r.u64()?;
            let config = AdamConfig {
                lr: r.f64()?,
                beta1: r.f64()?,
                beta2: r.f64()?,
                eps: r.f64()?,
            };
            let slots = r.u32()? as usize;
            let (mut first, mut second) = (Vec::new(), Vec::new());
            for _ in 0..slots {
                first.push(r.tensor()?);
                second.push(r.tensor()?);
            }
            Some(TrainState {
                epoch,
                batches,
                optimizer: Adam {
                    config,
                    step,
                    first,
                    second,
                },
            })
        }
        other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
    };
    let config = r.string()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { params, state, config })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}
