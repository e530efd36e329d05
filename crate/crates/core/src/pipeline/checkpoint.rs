//! Binary checkpoints.
//!
//! Layout, little-endian: `VXCK`, u32 version, u32 parameter count, then per
//! parameter a u16-prefixed UTF-8 name, u8 dtype code, u8 ndim, u32 dims,
//! the values, and a u8 flag followed by the two Adam moments when set.
//! The trailer holds u8 stage, u32 epoch, u64 optimizer step, the u32-prefixed
//! config text and the u32-prefixed generator state.

use std::path::Path;

use rand_xoshiro::Xoshiro256StarStar;
use voxatt_tensor::{DType, ParamStore, Scalar, Tensor};

use super::config::TrainConfig;
use crate::error::{Result, VoxError};
use crate::model::Model;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VXCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub config: TrainConfig,
    pub params: ParamStore<T>,
    /// Last stage trained; 0 before any training.
    pub stage: u8,
    /// Epochs completed in `stage`.
    pub epoch: u32,
    pub adam_step: u64,
    pub rng: Xoshiro256StarStar,
}

fn put_tensor<T: Scalar>(out: &mut Vec<u8>, t: &Tensor<T>) {
    for &v in t.data() {
        v.write_le(out);
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            let name = p.name.as_bytes();
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name);
            out.push(T::DTYPE.code());
            out.push(p.value.ndim() as u8);
            for &d in p.value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_tensor(&mut out, &p.value);
            match (&p.adam_m, &p.adam_v) {
                (Some(m), Some(v)) => {
                    out.push(1);
                    put_tensor(&mut out, m);
                    put_tensor(&mut out, v);
                }
                _ => out.push(0),
            }
        }
        out.push(self.stage);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        let config = self.config.to_text();
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        let rng = serde_json::to_vec(&self.rng).map_err(|e| VoxError::Config(format!("generator state: {e}")))?;
        out.extend_from_slice(&(rng.len() as u32).to_le_bytes());
        out.extend_from_slice(&rng);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let header = "header";
        if r.take(4, header)? != CHECKPOINT_MAGIC {
            return Err(VoxError::format(0, "not a checkpoint (bad magic)"));
        }
        let version = r.u32(header)?;
        if version != CHECKPOINT_VERSION {
            return Err(VoxError::format(
                4,
                format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}"),
            ));
        }
        let count = r.u32(header)? as usize;
        let mut stored = Vec::with_capacity(count);
        for k in 0..count {
            let fallback = format!("#{k}");
            let len = r.u16(&fallback)? as usize;
            let name = std::str::from_utf8(r.take(len, &fallback)?)
                .map_err(|_| VoxError::Checkpoint {
                    param: fallback.clone(),
                    msg: "name is not UTF-8".into(),
                })?
                .to_string();
            let code = r.u8(&name)?;
            if DType::from_code(code) != Some(T::DTYPE) {
                return Err(VoxError::Checkpoint {
                    param: name,
                    msg: format!("stored with dtype code {code}, loading as {}", T::DTYPE.name()),
                });
            }
            let ndim = r.u8(&name)? as usize;
            let shape = (0..ndim)
                .map(|_| r.u32(&name).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let value = r.tensor::<T>(&shape, &name)?;
            let moments = match r.u8(&name)? {
                0 => None,
                1 => Some((r.tensor::<T>(&shape, &name)?, r.tensor::<T>(&shape, &name)?)),
                f => {
                    return Err(VoxError::Checkpoint {
                        param: name,
                        msg: format!("bad moment flag {f}"),
                    });
                }
            };
            stored.push((name, value, moments));
        }
        let trailer = "trailer";
        let stage = r.u8(trailer)?;
        let epoch = r.u32(trailer)?;
        let adam_step = r.u64(trailer)?;
        let len = r.u32(trailer)? as usize;
        let text = std::str::from_utf8(r.take(len, trailer)?).map_err(|_| VoxError::Checkpoint {
            param: trailer.into(),
            msg: "config is not UTF-8".into(),
        })?;
        let config = TrainConfig::parse(text)?;
        let len = r.u32(trailer)? as usize;
        let rng: Xoshiro256StarStar =
            serde_json::from_slice(r.take(len, trailer)?).map_err(|e| VoxError::Checkpoint {
                param: trailer.into(),
                msg: format!("generator state: {e}"),
            })?;
        if r.pos != bytes.len() {
            return Err(VoxError::format(
                r.pos,
                format!("{} trailing bytes", bytes.len() - r.pos),
            ));
        }

        let mut params = Model::<T>::new(config.model.clone(), config.seed)?.params;
        if params.len() != stored.len() {
            return Err(VoxError::Checkpoint {
                param: header.into(),
                msg: format!(
                    "{} parameters stored, the configured model has {}",
                    stored.len(),
                    params.len()
                ),
            });
        }
        for (name, value, moments) in stored {
            let p = params.by_name_mut(&name).map_err(|_| VoxError::Checkpoint {
                param: name.clone(),
                msg: "not a parameter of the configured model".into(),
            })?;
            if p.value.shape() != value.shape() {
                return Err(VoxError::Checkpoint {
                    param: name,
                    msg: format!("shape {:?}, model expects {:?}", value.shape(), p.value.shape()),
                });
            }
            p.value = value;
            (p.adam_m, p.adam_v) = match moments {
                Some((m, v)) => (Some(m), Some(v)),
                None => (None, None),
            };
        }
        Ok(Checkpoint {
            config,
            params,
            stage,
            epoch,
            adam_step,
            rng,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| VoxError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| VoxError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Element type of a checkpoint, read from its first parameter.
pub fn checkpoint_dtype(bytes: &[u8]) -> Result<DType> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "header")? != CHECKPOINT_MAGIC {
        return Err(VoxError::format(0, "not a checkpoint (bad magic)"));
    }
    r.u32("header")?;
    if r.u32("header")? == 0 {
        return Err(VoxError::Checkpoint {
            param: "header".into(),
            msg: "no parameters".into(),
        });
    }
    let len = r.u16("#0")? as usize;
    r.take(len, "#0")?;
    let code = r.u8("#0")?;
    DType::from_code(code).ok_or_else(|| VoxError::Checkpoint {
        param: "#0".into(),
        msg: format!("unknown dtype code {code}"),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, param: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(VoxError::Checkpoint {
                param: param.to_string(),
                msg: format!(
                    "truncated at byte {} (needed {n} more, {} left)",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, param: &str) -> Result<u8> {
        Ok(self.take(1, param)?[0])
    }

    fn u16(&mut self, param: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, param)?.try_into().expect("two bytes")))
    }

    fn u32(&mut self, param: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, param)?.try_into().expect("four bytes")))
    }

    fn u64(&mut self, param: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, param)?.try_into().expect("eight bytes"),
        ))
    }

    fn tensor<T: Scalar>(&mut self, shape: &[usize], param: &str) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size();
        let raw = self.take(n * size, param)?;
        let data = raw.chunks_exact(size).map(T::read_le).collect();
        Ok(Tensor::new(shape, data)?)
    }
}
