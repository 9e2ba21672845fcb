//! Binary checkpoint container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes  "DISPCKPT"
//! version      u32      FORMAT_VERSION
//! monomials    u32      MONOMIAL_ORDER_VERSION
//! n_ll n_hl width hl_width   u32 × 4
//! epoch        u64      completed epochs
//! task         str      (u32 length + UTF-8)
//! config       str      training configuration as TOML, may be empty
//! tensors      u32 count, then per tensor:
//!                str name, u32 ndim, u64 × ndim extents, f64 × len values
//! adam         u8 flag; if 1: u64 t, then m and v tensors in parameter order
//!                (u64 len + f64 × len each)
//! ```
//!
//! Parameter tensors appear in [`ModelParams::named_tensors`] order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams, MONOMIAL_ORDER_VERSION};
use crate::optim::AdamState;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DISPCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: Option<AdamState>,
    pub epoch: u64,
    pub task: String,
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
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
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
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u32(MONOMIAL_ORDER_VERSION);
        let c = &self.params.config;
        for v in [c.n_ll, c.n_hl, c.width, c.hl_width] {
            w.u32(v as u32);
        }
        w.u64(self.epoch);
        w.str(&self.task);
        w.str(&self.config);
        let tensors = self.params.named_tensors();
        w.u32(tensors.len() as u32);
        for (name, t) in &tensors {
            w.str(name);
            w.u32(t.shape().len() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f64s(t.data());
        }
        match &self.adam {
            None => w.0.push(0),
            Some(state) => {
                w.0.push(1);
                w.u64(state.t);
                for t in state.m.iter().chain(&state.v) {
                    w.u64(t.len() as u64);
                    w.f64s(t.data());
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let order = r.u32()?;
        if order != MONOMIAL_ORDER_VERSION {
            return Err(Error::Checkpoint(format!(
                "monomial order version {order}, this build uses {MONOMIAL_ORDER_VERSION}"
            )));
        }
        let config = ModelConfig {
            n_ll: r.u32()? as usize,
            n_hl: r.u32()? as usize,
            width: r.u32()? as usize,
            hl_width: r.u32()? as usize,
        };
        let epoch = r.u64()?;
        let task = r.str()?;
        let train_config = r.str()?;
        let mut params = ModelParams::zeros(&config).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        let count = r.u32()? as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!("{count} tensors, expected {}", expected.len())));
        }
        let mut loaded = Vec::with_capacity(count);
        for (want_name, want_shape) in &expected {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if &name != want_name || &shape != want_shape {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` {shape:?}, expected `{want_name}` {want_shape:?}"
                )));
            }
            let len = shape.iter().product();
            loaded.push(Tensor::new(shape, r.f64s(len)?)?);
        }
        for (slot, t) in params.tensors_mut().into_iter().zip(loaded) {
            *slot = t;
        }
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let t = r.u64()?;
                let mut moments = Vec::with_capacity(2 * count);
                for (_, shape) in expected.iter().chain(&expected) {
                    let len = r.u64()? as usize;
                    if len != shape.iter().product::<usize>() {
                        return Err(Error::Checkpoint(format!("moment length {len} does not match {shape:?}")));
                    }
                    moments.push(Tensor::new(shape.clone(), r.f64s(len)?)?);
                }
                let v = moments.split_off(count);
                Some(AdamState { m: moments, v, t })
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self {
            params,
            adam,
            epoch,
            task,
            config: train_config,
        })
    }

    /// Writes to a sibling temporary file and renames it over `path`, so an
    /// interrupted save never clobbers the previous checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}
