//! `RSTX1` raster files: magic, `u32` little-endian header length, JSON
//! header, band-major little-endian payload.

use std::fs;
use std::path::Path;

use difd_core::raster::{DType, GeoTransform, Raster, RasterData};
use serde::{Deserialize, Serialize};

use crate::error::{AppError, Result};

pub const MAGIC: &[u8; 5] = b"RSTX1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    bands: usize,
    width: usize,
    height: usize,
    dtype: DType,
    geotransform: [f64; 4],
    crs: u32,
    nodata: Option<f64>,
}

pub fn encode(r: &Raster) -> Result<Vec<u8>> {
    if r.nodata.is_some_and(|v| !v.is_finite()) {
        return Err(AppError::config("RSTX nodata must be finite"));
    }
    let t = r.transform;
    let header = Header {
        bands: r.bands,
        width: r.width,
        height: r.height,
        dtype: r.dtype(),
        geotransform: [t.origin_x, t.origin_y, t.pixel_w, t.pixel_h],
        crs: r.crs,
        nodata: r.nodata,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let elem = match r.dtype() {
        DType::F32 => 4,
        DType::U8 => 1,
    };
    let mut out = Vec::with_capacity(MAGIC.len() + 4 + json.len() + elem * r.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    match &r.data {
        RasterData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        RasterData::U8(v) => out.extend_from_slice(v),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let bad = |m: &str| AppError::format(path, m);
    if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(bad("not an RSTX1 file"));
    }
    let len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = bytes.get(9..9 + len).ok_or_else(|| bad("truncated header"))?;
    let h: Header = serde_json::from_slice(body).map_err(|e| bad(&format!("bad header: {e}")))?;
    let payload = &bytes[9 + len..];
    let n = h.bands * h.width * h.height;
    let data = match h.dtype {
        DType::F32 => {
            if payload.len() != 4 * n {
                return Err(bad(&format!("payload has {} bytes, expected {}", payload.len(), 4 * n)));
            }
            RasterData::F32(payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
        }
        DType::U8 => {
            if payload.len() != n {
                return Err(bad(&format!("payload has {} bytes, expected {n}", payload.len())));
            }
            RasterData::U8(payload.to_vec())
        }
    };
    let [ox, oy, pw, ph] = h.geotransform;
    Ok(Raster::new(h.bands, h.width, h.height, data, GeoTransform::new(ox, oy, pw, ph), h.crs, h.nodata)?)
}

pub fn write(path: impl AsRef<Path>, r: &Raster) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(r)?).map_err(|e| AppError::io(path, e))
}

pub fn read(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| AppError::io(path, e))?;
    decode(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_garbage() {
        let p = Path::new("x.rstx");
        assert!(decode(b"RSTX2....", p).is_err());
        assert!(decode(b"RSTX1\xff\x00\x00\x00{}", p).is_err());
        let r = Raster::new(1, 2, 1, RasterData::U8(vec![1, 2]), GeoTransform::new(0.0, 0.0, 1.0, -1.0), 1, None).unwrap();
        let mut bytes = encode(&r).unwrap();
        bytes.pop();
        assert!(decode(&bytes, p).is_err());
    }
}
