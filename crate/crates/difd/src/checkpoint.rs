//! Model checkpoints: every tensor as little-endian `f32` plus the
//! configuration needed to rebuild the network.
//!
//! Layout: `DIFDCKPT`, `u32` version, `u64` config fingerprint, `u64` seed,
//! `u32` + config JSON, `u32` tensor count, then per tensor `u16` + name,
//! four `u32` dims and the payload.

use std::fs;
use std::path::Path;

use difd_core::model::{DifdConfig, ModelState};
use difd_core::Tensor;

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 8] = b"DIFDCKPT";
pub const VERSION: u32 = 1;

pub fn encode(state: &ModelState) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&state.fingerprint().to_le_bytes());
    out.extend_from_slice(&state.seed().to_le_bytes());
    let cfg = serde_json::to_vec(state.config()).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(state.tensors().len() as u32).to_le_bytes());
    for (name, t) in state.named() {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            let f = v as f32;
            if f as f64 != v {
                return Err(AppError::Core(difd_core::Error::Numeric(format!(
                    "tensor {name} holds {v}, which is not representable in f32"
                ))));
            }
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| AppError::format(self.path, "truncated checkpoint"))?;
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<ModelState> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(AppError::format(path, "not a checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(AppError::format(path, format!("unsupported checkpoint version {version}")));
    }
    let fingerprint = r.u64()?;
    let seed = r.u64()?;
    let len = r.u32()? as usize;
    let cfg: DifdConfig =
        serde_json::from_slice(r.take(len)?).map_err(|e| AppError::format(path, format!("bad config: {e}")))?;
    if cfg.fingerprint() != fingerprint {
        return Err(AppError::format(path, "stored fingerprint does not match the stored configuration"));
    }
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|_| AppError::format(path, "tensor name is not UTF-8"))?;
        let shape = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        let numel: usize = shape.iter().product();
        let data = r.take(4 * numel)?.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        named.push((name.to_string(), Tensor::from_vec(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(AppError::format(path, "trailing bytes after the tensor table"));
    }
    Ok(ModelState::from_named(&cfg, seed, named)?)
}

pub fn save(path: impl AsRef<Path>, state: &ModelState) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, encode(state)?).map_err(|e| AppError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| AppError::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

/// Load and require the architecture to match `expected`.
pub fn load_matching(path: impl AsRef<Path>, expected: &DifdConfig) -> Result<ModelState> {
    let state = load(path.as_ref())?;
    if state.fingerprint() != expected.fingerprint() {
        return Err(AppError::config(format!(
            "checkpoint {} was trained for configuration {:016x}, expected {:016x}",
            path.as_ref().display(),
            state.fingerprint(),
            expected.fingerprint()
        )));
    }
    Ok(state)
}
