//! BRAS: flat little-endian raster files.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "BRAS"
//!      4     1  version (1)
//!      5     1  dtype (1 = f32)
//!      6     1  kind (0 backscatter dB, 1 normalized, 2 label)
//!      7     1  reserved (0)
//!      8     4  channels (u32)
//!     12     4  height (u32)
//!     16     4  width (u32)
//!     20     1  reserved (0)
//!     21     …  channels·height·width f32 values, channel-major, rows top to bottom
//! ```

use std::fs;
use std::path::Path;

use super::{Raster, RasterKind};
use crate::error::{Error, Result};

pub const BRAS_MAGIC: &[u8; 4] = b"BRAS";
pub const BRAS_VERSION: u8 = 1;
pub const BRAS_HEADER_LEN: usize = 21;
const DTYPE_F32: u8 = 1;

pub fn encode_bras(raster: &Raster) -> Result<Vec<u8>> {
    if let Some(i) = raster.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "refusing to write non-finite value {} at index {i}",
            raster.data()[i]
        )));
    }
    let mut out = Vec::with_capacity(BRAS_HEADER_LEN + 4 * raster.data().len());
    out.extend_from_slice(BRAS_MAGIC);
    out.extend_from_slice(&[BRAS_VERSION, DTYPE_F32, raster.kind().code(), 0]);
    for extent in [raster.channels(), raster.height(), raster.width()] {
        let extent = u32::try_from(extent)
            .map_err(|_| Error::dim(format!("extent {extent} does not fit in u32")))?;
        out.extend_from_slice(&extent.to_le_bytes());
    }
    out.push(0);
    for v in raster.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

pub fn decode_bras(bytes: &[u8]) -> Result<Raster> {
    if bytes.len() < BRAS_HEADER_LEN {
        return Err(format_err(
            bytes.len(),
            format!("truncated header: {} of {BRAS_HEADER_LEN} bytes", bytes.len()),
        ));
    }
    if &bytes[..4] != BRAS_MAGIC {
        return Err(format_err(
            0,
            format!("bad magic {:?}, expected \"BRAS\"", String::from_utf8_lossy(&bytes[..4])),
        ));
    }
    if bytes[4] != BRAS_VERSION {
        return Err(format_err(4, format!("unsupported version {}", bytes[4])));
    }
    if bytes[5] != DTYPE_F32 {
        return Err(format_err(5, format!("unsupported dtype {}", bytes[5])));
    }
    let kind = RasterKind::from_code(bytes[6])
        .ok_or_else(|| format_err(6, format!("unknown raster kind {}", bytes[6])))?;
    let read_u32 = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (channels, height, width) = (read_u32(8), read_u32(12), read_u32(16));
    let count = channels
        .checked_mul(height)
        .and_then(|v| v.checked_mul(width))
        .ok_or_else(|| format_err(8, "extent product overflows"))?;
    let expected = BRAS_HEADER_LEN + 4 * count;
    if bytes.len() < expected {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: expected {expected} bytes, file has {}", bytes.len()),
        ));
    }
    if bytes.len() > expected {
        return Err(format_err(
            expected,
            format!("{} trailing bytes after payload", bytes.len() - expected),
        ));
    }
    let data = bytes[BRAS_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Raster::new(channels, height, width, kind, data)
}

pub fn write_bras(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_bras(raster)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bras(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_bras(&bytes).map_err(|e| match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_layout() {
        let r = Raster::new(1, 1, 1, RasterKind::BackscatterDb, vec![0.0]).unwrap();
        let bytes = encode_bras(&r).unwrap();
        assert_eq!(bytes.len(), 25);
        #[rustfmt::skip]
        let expected: [u8; 25] = [
            b'B', b'R', b'A', b'S', 1, 1, 0, 0,
            1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0,
            0,
            0, 0, 0, 0,
        ];
        assert_eq!(bytes, expected);
        assert_eq!(decode_bras(&bytes).unwrap(), r);
    }

    #[test]
    fn bad_magic_names_expected() {
        let r = Raster::new(1, 1, 2, RasterKind::Label, vec![1.0, 0.0]).unwrap();
        let mut bytes = encode_bras(&r).unwrap();
        bytes[0] = b'X';
        let err = decode_bras(&bytes).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
        assert!(err.to_string().contains("\"BRAS\""));
    }

    #[test]
    fn truncation_and_version_errors_carry_offsets() {
        let r = Raster::new(2, 2, 2, RasterKind::Normalized, vec![0.5; 8]).unwrap();
        let bytes = encode_bras(&r).unwrap();
        assert!(matches!(
            decode_bras(&bytes[..30]),
            Err(Error::Format { offset: 30, .. })
        ));
        assert!(matches!(
            decode_bras(&bytes[..10]),
            Err(Error::Format { offset: 10, .. })
        ));
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(decode_bras(&v2), Err(Error::Format { offset: 4, .. })));
        let mut extra = bytes;
        extra.push(0);
        assert!(matches!(decode_bras(&extra), Err(Error::Format { offset: 53, .. })));
    }

    #[test]
    fn non_finite_write_refused() {
        let r = Raster::new(1, 1, 2, RasterKind::BackscatterDb, vec![1.0, f32::NAN]).unwrap();
        assert!(matches!(encode_bras(&r), Err(Error::Numeric(_))));
    }
}
