//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FGCK"  u32 version  u32 tag_len  tag (UTF-8)  u32 count
//! count × { u32 name_len  name  u32 ndim  ndim × u64 extent  numel × f64 }
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::ModelSpec;
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FGCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Model tag as produced by [`ModelSpec::tag`].
    pub model: String,
    pub params: ParamSet,
}

pub fn encode(model: &str, params: &ParamSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_str(&mut out, model);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        put_str(&mut out, name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Length {
            expected: self.pos.saturating_add(n),
            actual: self.bytes.len(),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("eight bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let at = self.pos;
        String::from_utf8(self.take(len)?.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "string is not UTF-8".into(),
        })
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let model = c.string()?;
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = c.string()?;
        let ndim = c.u32()? as usize;
        let shape_at = c.pos;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(Error::Format {
                offset: shape_at,
                message: "tensor extent overflows".into(),
            })?;
        let raw = c.take(numel.saturating_mul(8))?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("eight bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::Format {
            offset: shape_at,
            message: e.to_string(),
        })?;
        params.push(name, t);
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos,
            message: "trailing bytes".into(),
        });
    }
    Ok(Checkpoint { model, params })
}

pub fn save(path: &Path, spec: &ModelSpec, params: &ParamSet) -> Result<()> {
    std::fs::write(path, encode(&spec.tag(), params))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    decode(&std::fs::read(path)?)
}

/// Loads a checkpoint and checks it holds parameters for `spec`.
pub fn load_for(path: &Path, spec: &ModelSpec) -> Result<ParamSet> {
    let ck = load(path)?;
    if ck.model != spec.tag() {
        return Err(Error::Validation(format!("checkpoint is for {}, not {spec}", ck.model)));
    }
    let expected = spec.param_shapes()?;
    let matches = expected.len() == ck.params.len()
        && expected
            .iter()
            .zip(ck.params.iter())
            .all(|((n, s), (m, t))| n == m && s.as_slice() == t.shape());
    if !matches {
        return Err(Error::Validation(format!("checkpoint parameter layout does not match {spec}")));
    }
    Ok(ck.params)
}
