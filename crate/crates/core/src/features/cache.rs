//! Per-clip feature cache.
//!
//! Layout (little-endian): magic `CVAC`, `u32` version, `u32` T, `u32` F,
//! `T * F` row-major `f32` values, then `T` mask bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::FeatureTensor;
use crate::error::{Error, Result};

pub const CACHE_MAGIC: &[u8; 4] = b"CVAC";
pub const CACHE_VERSION: u32 = 1;

pub fn write_cache_to<W: Write>(mut w: W, feats: &FeatureTensor) -> Result<()> {
    let (t, f) = feats.values.dim();
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&(t as u32).to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    for &v in feats.values.iter() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.write_all(&feats.mask)?;
    w.flush()?;
    Ok(())
}

pub fn write_cache(path: &Path, feats: &FeatureTensor) -> Result<()> {
    write_cache_to(BufWriter::new(File::create(path)?), feats)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_cache_from<R: Read>(mut r: R) -> Result<FeatureTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Format("not a feature cache (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CACHE_VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let t = read_u32(&mut r)? as usize;
    let f = read_u32(&mut r)? as usize;
    let mut raw = vec![0u8; t * f * 4];
    r.read_exact(&mut raw)?;
    let values: Vec<f64> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    let mut mask = vec![0u8; t];
    r.read_exact(&mut mask)?;
    let values = Array2::from_shape_vec((t, f), values)
        .map_err(|e| Error::Format(format!("cache shape: {e}")))?;
    FeatureTensor::new(values, mask)
}

pub fn read_cache(path: &Path) -> Result<FeatureTensor> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_cache_from(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let feats = FeatureTensor::new(
            Array2::from_shape_vec((2, 3), vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125]).unwrap(),
            vec![1, 0],
        )
        .unwrap();
        let mut buf = Vec::new();
        write_cache_to(&mut buf, &feats).unwrap();
        assert_eq!(&buf[..4], b"CVAC");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[24..28].try_into().unwrap()), 0.5);
        assert_eq!(buf.len(), 16 + 6 * 4 + 2);
        assert_eq!(&buf[40..], &[1, 0]);
        assert_eq!(read_cache_from(&buf[..]).unwrap(), feats);
    }

    #[test]
    fn bad_magic_and_truncation() {
        assert!(read_cache_from(&b"XXXX\x01\0\0\0"[..]).is_err());
        let feats = FeatureTensor::full(Array2::zeros((2, 2)));
        let mut buf = Vec::new();
        write_cache_to(&mut buf, &feats).unwrap();
        assert!(read_cache_from(&buf[..buf.len() - 1]).is_err());
    }
}
