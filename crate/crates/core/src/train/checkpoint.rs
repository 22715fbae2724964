//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "BFCK" | u16 version | u32 entry count
//! per entry: u16 name length | name | u8 rank | u32 dims[rank] | f32 payload
//! trailer:   u64 step | f32 lr | f32 best val loss | u32 epochs since improvement | u64 seed
//! ```
//!
//! Parameter entries (including batch-norm running statistics) come first,
//! then the Adam moments of each trainable tensor as `<name>.m` and
//! `<name>.v`.

use std::fs;
use std::path::Path;

use super::{AdamState, SchedulerState};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::tensor::Tensor;

pub const BFCK_MAGIC: &[u8; 4] = b"BFCK";
pub const BFCK_VERSION: u16 = 1;

/// Edge length assumed for checkpoints loaded without a config; the
/// network itself does not depend on it.
pub const DEFAULT_INPUT_SIZE: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub adam: AdamState,
    pub step: u64,
    pub scheduler: SchedulerState,
    pub seed: u64,
}

fn put_entry(out: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::Validation(format!("tensor name {name} is too long")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::Validation(format!("{name}: dimension {d} too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, &Tensor)> = self
            .params
            .entries()
            .iter()
            .map(|e| (e.name.clone(), &e.tensor))
            .collect();
        let trainable: Vec<&str> = self.params.trainable().map(|e| e.name.as_str()).collect();
        if trainable.len() != self.adam.m.len() || trainable.len() != self.adam.v.len() {
            return Err(Error::Validation("moment buffers do not match the trainable parameters".into()));
        }
        for (name, (m, v)) in trainable.iter().zip(self.adam.m.iter().zip(&self.adam.v)) {
            named.push((format!("{name}.m"), m));
            named.push((format!("{name}.v"), v));
        }
        let mut out = Vec::new();
        out.extend_from_slice(BFCK_MAGIC);
        out.extend_from_slice(&BFCK_VERSION.to_le_bytes());
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in &named {
            put_entry(&mut out, name, t)?;
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.scheduler.lr.to_le_bytes());
        out.extend_from_slice(&self.scheduler.best.to_le_bytes());
        out.extend_from_slice(&self.scheduler.since_improvement.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        Ok(out)
    }

    /// Decodes a checkpoint; the model config is recovered from the stored
    /// shapes, or checked against `expected` when given.
    pub fn decode(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != BFCK_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "bad magic, expected \"BFCK\"".into(),
            });
        }
        let version = r.u16()?;
        if version != BFCK_VERSION {
            return Err(Error::Format {
                offset: 4,
                msg: format!("unsupported checkpoint version {version}"),
            });
        }
        let count = r.u32()? as usize;
        let mut params = Vec::new();
        let mut moments = Vec::new();
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Format {
                offset: at,
                msg: "entry name is not UTF-8".into(),
            })?;
            let rank = r.take(1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n: usize = shape.iter().product();
            let data = r
                .take(n.checked_mul(4).ok_or_else(|| r.err("entry too large"))?)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let tensor = Tensor::new(&shape, data)?;
            if name.ends_with(".m") || name.ends_with(".v") {
                moments.push((name, tensor));
            } else {
                params.push((name, tensor));
            }
        }
        let step = r.u64()?;
        let lr = r.f32()?;
        let best = r.f32()?;
        let since_improvement = r.u32()?;
        let seed = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                msg: format!("{} trailing bytes after the trailer", bytes.len() - r.pos),
            });
        }

        let config = match expected {
            Some(cfg) => cfg.clone(),
            None => ModelParams::infer_config(&params, DEFAULT_INPUT_SIZE)?,
        };
        let params = ModelParams::from_named(&config, params)?;
        let trainable: Vec<&str> = params.trainable().map(|e| e.name.as_str()).collect();
        if moments.len() != 2 * trainable.len() {
            return Err(Error::Validation(format!(
                "expected {} moment buffers, found {}",
                2 * trainable.len(),
                moments.len()
            )));
        }
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, pair) in trainable.iter().zip(moments.chunks(2)) {
            let param_shape = params.get(name).map(|t| t.shape().to_vec()).unwrap_or_default();
            for ((got, t), suffix) in pair.iter().zip(["m", "v"]) {
                let want = format!("{name}.{suffix}");
                if *got != want {
                    return Err(Error::Validation(format!("moment {got} found where {want} was expected")));
                }
                if t.shape() != param_shape.as_slice() {
                    return Err(Error::dim(format!(
                        "moment {got} has shape {:?}, parameter has {:?}",
                        t.shape(),
                        param_shape
                    )));
                }
            }
            m.push(pair[0].1.clone());
            v.push(pair[1].1.clone());
        }
        Ok(Checkpoint {
            params,
            adam: AdamState { m, v },
            step,
            scheduler: SchedulerState {
                lr,
                best,
                since_improvement,
            },
            seed,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, msg: &str) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len() as u64,
                msg: format!("truncated: needed {n} more bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn f32(&mut self) -> Result<f32> {
        self.u32().map(f32::from_bits)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.encode()?).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint, inferring the model config from its shapes.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, None)
}

/// Loads a checkpoint that must match `cfg` exactly.
pub fn load_checkpoint_for(path: impl AsRef<Path>, cfg: &ModelConfig) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::decode(&bytes, Some(cfg))
}
