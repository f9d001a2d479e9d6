//! PVOL: the little-endian binary container for volumes and masks.
//!
//! Layout: `b"PVOL"`, version `u16` (= 1), dtype `u8` (0 = f32, 1 = u8
//! mask), dims `3 × u32` (`nz, ny, nx`), spacing `3 × f32` (`sz, sy, sx`),
//! then the voxel payload in x-fastest order.

use std::fs;
use std::path::Path;

use super::{Dims, Mask, Spacing, Volume};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"PVOL";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 1 + 12 + 12;

const DTYPE_F32: u8 = 0;
const DTYPE_MASK: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Pvol {
    Volume(Volume<f32>),
    Mask(Mask),
}

fn header(dtype: u8, dims: Dims, spacing: Spacing, payload: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    for n in dims.as_array() {
        out.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for s in spacing.as_array() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

/// Encode as f32 regardless of the in-memory scalar type.
pub fn encode_volume<T: Scalar>(v: &Volume<T>) -> Vec<u8> {
    let mut out = header(DTYPE_F32, v.dims(), v.spacing(), v.data().len() * 4);
    for &x in v.data() {
        out.extend_from_slice(&x.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    out
}

pub fn encode_mask(m: &Mask) -> Vec<u8> {
    let mut out = header(DTYPE_MASK, m.dims(), m.spacing(), m.data().len());
    out.extend(m.data().iter().map(|&b| b as u8));
    out
}

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Format(msg.into()))
}

pub fn decode(bytes: &[u8]) -> Result<Pvol> {
    if bytes.len() < HEADER_LEN {
        return format_err(format!("PVOL header truncated ({} bytes)", bytes.len()));
    }
    if &bytes[0..4] != MAGIC {
        return format_err("bad PVOL magic");
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return format_err(format!("unsupported PVOL version {version}"));
    }
    let dtype = bytes[6];
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dims = Dims::new(u32_at(7) as usize, u32_at(11) as usize, u32_at(15) as usize)?;
    let spacing = Spacing::new(f32_at(19), f32_at(23), f32_at(27))?;
    let payload = &bytes[HEADER_LEN..];
    match dtype {
        DTYPE_F32 => {
            if payload.len() != dims.len() * 4 {
                return format_err(format!(
                    "f32 payload has {} bytes, expected {}",
                    payload.len(),
                    dims.len() * 4
                ));
            }
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            Ok(Pvol::Volume(Volume::new(dims, spacing, data)?))
        }
        DTYPE_MASK => {
            if payload.len() != dims.len() {
                return format_err(format!(
                    "mask payload has {} bytes, expected {}",
                    payload.len(),
                    dims.len()
                ));
            }
            let mut data = Vec::with_capacity(dims.len());
            for &b in payload {
                match b {
                    0 => data.push(false),
                    1 => data.push(true),
                    other => return format_err(format!("mask voxel value {other} not in {{0, 1}}")),
                }
            }
            Ok(Pvol::Mask(Mask::new(dims, spacing, data)?))
        }
        other => format_err(format!("unknown PVOL dtype {other}")),
    }
}

pub fn write_volume<T: Scalar>(path: impl AsRef<Path>, v: &Volume<T>) -> Result<()> {
    fs::write(path, encode_volume(v))?;
    Ok(())
}

pub fn write_mask(path: impl AsRef<Path>, m: &Mask) -> Result<()> {
    fs::write(path, encode_mask(m))?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<Pvol> {
    let path = path.as_ref();
    let bytes = crate::error::read_file(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        e => e,
    })
}

/// Read a volume; a mask file is promoted to 0/1 values.
pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume<f32>> {
    Ok(match read(path)? {
        Pvol::Volume(v) => v,
        Pvol::Mask(m) => Volume::from_mask(&m),
    })
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    match read(path)? {
        Pvol::Mask(m) => Ok(m),
        Pvol::Volume(_) => format_err(format!("{}: expected a mask, found an f32 volume", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let v = Volume::new(Dims::new(1, 1, 2).unwrap(), Spacing::new(2.0, 1.0, 0.5).unwrap(), vec![1.0f32, -2.0])
            .unwrap();
        let b = encode_volume(&v);
        let mut want = b"PVOL".to_vec();
        want.extend_from_slice(&[1, 0, 0]);
        want.extend_from_slice(&[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        want.extend_from_slice(&2.0f32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&0.5f32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        want.extend_from_slice(&(-2.0f32).to_le_bytes());
        assert_eq!(b, want);
    }

    #[test]
    fn rejects_bad_magic_version_and_dtype() {
        let m = Mask::from_voxels(Dims::cube(2), Spacing::default(), &[[0, 0, 0]]).unwrap();
        let good = encode_mask(&m);
        let mut b = good.clone();
        b[0] = b'X';
        assert!(decode(&b).is_err());
        let mut b = good.clone();
        b[4] = 2;
        assert!(decode(&b).is_err());
        let mut b = good.clone();
        b[6] = 9;
        assert!(decode(&b).is_err());
        let mut b = good.clone();
        b[HEADER_LEN] = 2;
        assert!(decode(&b).is_err());
        assert!(decode(&good[..good.len() - 1]).is_err());
        assert_eq!(decode(&good).unwrap(), Pvol::Mask(m));
    }

    proptest! {
        #[test]
        fn volume_and_mask_round_trip(
            vals in prop::collection::vec(-1e6f32..1e6, 24),
            bits in prop::collection::vec(any::<bool>(), 24),
            sz in 0.1f32..5.0,
        ) {
            let dims = Dims::new(2, 3, 4).unwrap();
            let sp = Spacing::new(sz, 1.0, 0.25).unwrap();
            let v = Volume::new(dims, sp, vals).unwrap();
            prop_assert_eq!(decode(&encode_volume(&v)).unwrap(), Pvol::Volume(v));
            let m = Mask::new(dims, sp, bits).unwrap();
            prop_assert_eq!(decode(&encode_mask(&m)).unwrap(), Pvol::Mask(m));
        }
    }
}
