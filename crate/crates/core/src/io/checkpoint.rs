use std::path::Path;

use super::{read_file, write_atomic};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VFIKCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Saved training state.
///
/// Layout, all integers little-endian:
///
/// ```text
/// magic "VFIKCKPT" | u32 version | u64 step
/// u32 len | config (UTF-8 TOML)
/// u32 count | count x tensor
/// u8 has_adam | [u64 adam step | count x m tensor | count x v tensor]
///
/// tensor = u32 name len | name | u32 ndim | ndim x u64 dim | f32 data
/// ```
///
/// Adam moments repeat the parameter names and shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: String,
    pub params: Vec<(String, Tensor<f32>)>,
    pub adam: Option<AdamState<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::contract("checkpoint field exceeds u32"))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.ndim())?;
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format("checkpoint", "string is not UTF-8"))
    }

    fn tensor(&mut self) -> Result<(String, Tensor<f32>)> {
        let name = self.string()?;
        let ndim = self.u32()?;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(usize::try_from(self.u64()?).map_err(|_| Error::format("checkpoint", "dimension overflows"))?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format("checkpoint", "tensor size overflows"))?;
        let data = self
            .take(n)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok((name, Tensor::new(&shape, data)?))
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        put_u32(&mut out, self.config.len())?;
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.params.len())?;
        for (name, t) in &self.params {
            put_tensor(&mut out, name, t)?;
        }
        match &self.adam {
            None => out.push(0),
            Some(a) => {
                if a.m.len() != self.params.len() || a.v.len() != self.params.len() {
                    return Err(Error::contract("adam state does not match the parameter list"));
                }
                out.push(1);
                out.extend_from_slice(&a.step.to_le_bytes());
                for moments in [&a.m, &a.v] {
                    for ((name, _), t) in self.params.iter().zip(moments) {
                        put_tensor(&mut out, name, t)?;
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok() != Some(CHECKPOINT_MAGIC.as_slice()) {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let step = r.u64()?;
        let config = r.string()?;
        let count = r.u32()?;
        let params = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
        let adam = match r.u8()? {
            0 => None,
            1 => {
                let astep = r.u64()?;
                let mut moments = [Vec::new(), Vec::new()];
                for m in &mut moments {
                    for (name, p) in &params {
                        let (n, t) = r.tensor()?;
                        if n != *name || t.shape() != p.shape() {
                            return Err(Error::format("checkpoint", format!("moment {n} does not match parameter {name}")));
                        }
                        m.push(t);
                    }
                }
                let [m, v] = moments;
                Some(AdamState { m, v, step: astep })
            }
            f => return Err(Error::format("checkpoint", format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format("checkpoint", format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            step,
            config,
            params,
            adam,
        })
    }

    /// Writes to a temporary file next to `path`, then renames it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes()?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}
