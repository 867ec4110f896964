//! Binary feature-bag files.
//!
//! Layout (little-endian):
//!   bytes 0..4   magic "FBAG"
//!   bytes 4..6   format version (u16)
//!   bytes 6..10  patch count N (u32)
//!   bytes 10..14 feature width D (u32)
//!   byte  14     modality tag (u8)
//!   bytes 15..   N*D f32 payload, row-major
//!
//! Values are 32-bit on disk and widened to f64 in memory.

use super::{io_err, DataError, Result};
use crate::tensor::Tensor;
use std::fs;
use std::io::Write;
use std::path::Path;

pub const BAG_MAGIC: [u8; 4] = *b"FBAG";
pub const BAG_VERSION: u16 = 1;
const HEADER_LEN: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Modality {
    Histology = 0,
    ProteinGrid = 1,
    ProteinPatch = 2,
    /// Checkpoint parameter blob (not a per-case feature bag).
    Parameter = 3,
}

impl Modality {
    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Self::Histology),
            1 => Some(Self::ProteinGrid),
            2 => Some(Self::ProteinPatch),
            3 => Some(Self::Parameter),
            _ => None,
        }
    }
}

pub fn write_feature_bag(path: &Path, tensor: &Tensor, modality: Modality) -> Result<()> {
    let (n, d) = tensor.shape();
    if n == 0 || d == 0 {
        return Err(DataError::Config(format!(
            "refusing to write degenerate bag of shape {n}x{d} to {}",
            path.display()
        )));
    }
    let mut buf = Vec::with_capacity(HEADER_LEN + tensor.numel() * 4);
    buf.extend_from_slice(&BAG_MAGIC);
    buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    buf.extend_from_slice(&(d as u32).to_le_bytes());
    buf.push(modality as u8);
    for &v in tensor.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&buf).map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn read_feature_bag(path: &Path) -> Result<(Tensor, Modality)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let pstr = path.display().to_string();
    if bytes.len() < HEADER_LEN {
        return Err(DataError::Truncated {
            path: pstr,
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[0..4] != BAG_MAGIC {
        return Err(DataError::Format {
            path: pstr,
            offset: 0,
            msg: format!("bad magic {:?}, expected {:?}", &bytes[0..4], BAG_MAGIC),
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != BAG_VERSION {
        return Err(DataError::Format {
            path: pstr,
            offset: 4,
            msg: format!("unsupported version {version}, expected {BAG_VERSION}"),
        });
    }
    let n = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]) as usize;
    let d = u32::from_le_bytes([bytes[10], bytes[11], bytes[12], bytes[13]]) as usize;
    if n == 0 || d == 0 {
        return Err(DataError::Format {
            path: pstr,
            offset: 6,
            msg: format!("degenerate bag of shape {n}x{d}"),
        });
    }
    let modality = Modality::from_tag(bytes[14]).ok_or_else(|| DataError::Format {
        path: pstr.clone(),
        offset: 14,
        msg: format!("unknown modality tag {}", bytes[14]),
    })?;
    let expected = HEADER_LEN + n * d * 4;
    if bytes.len() != expected {
        return Err(DataError::Truncated {
            path: pstr,
            expected,
            actual: bytes.len(),
        });
    }
    let mut data = Vec::with_capacity(n * d);
    for chunk in bytes[HEADER_LEN..].chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Ok((Tensor::new(n, d, data)?, modality))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn f32_tensor(rows: usize, cols: usize, seed: u32) -> Tensor {
        // values representable exactly in f32 so the round trip is bit-exact
        let data = (0..rows * cols)
            .map(|i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed) % 1000) as f32)
            .map(|v| (v / 37.0) as f64 - 13.0)
            .map(|v| (v as f32) as f64)
            .collect();
        Tensor::new(rows, cols, data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let t = f32_tensor(3, 5, 7);
        write_feature_bag(&path, &t, Modality::Histology).unwrap();
        let (back, modality) = read_feature_bag(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(modality, Modality::Histology);
    }

    #[test]
    fn truncation_names_expected_and_actual() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let t = f32_tensor(2, 2, 1);
        write_feature_bag(&path, &t, Modality::ProteinPatch).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_bag(&path) {
            Err(DataError::Truncated { expected, actual, .. }) => {
                assert_eq!(expected, 15 + 16);
                assert_eq!(actual, 15 + 16 - 1);
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let t = f32_tensor(1, 2, 2);
        write_feature_bag(&path, &t, Modality::Histology).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_bag(&path) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_version_mismatch() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let t = f32_tensor(1, 2, 3);
        write_feature_bag(&path, &t, Modality::Histology).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_bag(&path) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_modality() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        let t = f32_tensor(1, 2, 4);
        write_feature_bag(&path, &t, Modality::Histology).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[14] = 250;
        std::fs::write(&path, &bytes).unwrap();
        match read_feature_bag(&path) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 14),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_empty_bag() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("x.fbag");
        assert!(write_feature_bag(&path, &Tensor::zeros(0, 4), Modality::Histology).is_err());

        // hand-craft an N=0 header
        let mut buf = Vec::new();
        buf.extend_from_slice(&BAG_MAGIC);
        buf.extend_from_slice(&BAG_VERSION.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        buf.extend_from_slice(&4u32.to_le_bytes());
        buf.push(0);
        std::fs::write(&path, &buf).unwrap();
        match read_feature_bag(&path) {
            Err(DataError::Format { offset, .. }) => assert_eq!(offset, 6),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
