//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `CVCK`, `u32` version, `u32` metadata length,
//! metadata as UTF-8 JSON, `u32` tensor count, then per tensor: `u32` name
//! length, name, `u8` dtype (0 = f32, 1 = f64), `u32` rank, `u64` dims and the
//! row-major values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::config::FeatureConfig;
use crate::error::{Error, Result};
use crate::features::NormStats;
use crate::model::ModelConfig;
use crate::real::Real;
use crate::trainer::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CVCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    CatVae,
    KMeans,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: CheckpointKind,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub features: Option<FeatureConfig>,
    #[serde(default)]
    pub norm: Option<NormStats>,
    /// Number of completed epochs.
    #[serde(default)]
    pub epoch: usize,
    /// Temperature used in the last completed epoch.
    #[serde(default)]
    pub tau: f64,
    #[serde(default)]
    pub adam_step: u64,
    #[serde(default)]
    pub best_loss: Option<f64>,
}

impl CheckpointMeta {
    pub fn new(kind: CheckpointKind) -> Self {
        Self {
            kind,
            model: None,
            train: None,
            features: None,
            norm: None,
            epoch: 0,
            tau: 0.0,
            adam_step: 0,
            best_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl NamedTensor {
    pub fn from_array<S: Real>(name: impl Into<String>, a: &ArrayD<S>) -> Self {
        let data = match S::DTYPE {
            0 => TensorData::F32(a.iter().map(|v| v.as_f64() as f32).collect()),
            _ => TensorData::F64(a.iter().map(|v| v.as_f64()).collect()),
        };
        Self {
            name: name.into(),
            shape: a.shape().to_vec(),
            data,
        }
    }

    /// Values converted to `S`; conversion is exact when the dtypes agree.
    pub fn to_array<S: Real>(&self) -> ArrayD<S> {
        let values: Vec<S> = match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| S::lit(x as f64)).collect(),
            TensorData::F64(v) => v.iter().map(|&x| S::lit(x)).collect(),
        };
        ArrayD::from_shape_vec(IxDyn(&self.shape), values).expect("shape matches length")
    }

    fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push<S: Real>(&mut self, name: impl Into<String>, a: &ArrayD<S>) {
        self.tensors.push(NamedTensor::from_array(name, a));
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Tensors whose name starts with `prefix`, with the prefix removed.
    pub fn with_prefix<S: Real>(&self, prefix: &str) -> Vec<(String, ArrayD<S>)> {
        self.tensors
            .iter()
            .filter_map(|t| {
                t.name
                    .strip_prefix(prefix)
                    .map(|rest| (rest.to_string(), t.to_array()))
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(&meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            w.write_all(&(t.name.len() as u32).to_le_bytes())?;
            w.write_all(t.name.as_bytes())?;
            let dtype: u8 = match t.data {
                TensorData::F32(_) => 0,
                TensorData::F64(_) => 1,
            };
            w.write_all(&[dtype])?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            match &t.data {
                TensorData::F32(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
                TensorData::F64(v) => {
                    for x in v {
                        w.write_all(&x.to_le_bytes())?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes to a temporary sibling and renames, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        self.write_to(BufWriter::new(File::create(&tmp)?))?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta)?;
        let count = read_u32(&mut r)? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            let mut dtype = [0u8; 1];
            r.read_exact(&mut dtype)?;
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank.min(16));
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let data = match dtype[0] {
                0 => {
                    let mut raw = vec![0u8; n * 4];
                    r.read_exact(&mut raw)?;
                    TensorData::F32(
                        raw.chunks_exact(4)
                            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                            .collect(),
                    )
                }
                1 => {
                    let mut raw = vec![0u8; n * 8];
                    r.read_exact(&mut raw)?;
                    TensorData::F64(
                        raw.chunks_exact(8)
                            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                            .collect(),
                    )
                }
                d => return Err(Error::Format(format!("unknown dtype {d} for {name}"))),
            };
            let t = NamedTensor { name, shape, data };
            debug_assert_eq!(t.len(), n);
            tensors.push(t);
        }
        Ok(Self { meta, tensors })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut meta = CheckpointMeta::new(CheckpointKind::CatVae);
        meta.epoch = 3;
        meta.tau = 0.75;
        let mut c = Checkpoint::new(meta);
        c.push("a", &ArrayD::<f32>::from_shape_vec(IxDyn(&[2, 3]), vec![1.0, -2.5, 3.0, 0.1, 1e-30, f32::MAX]).unwrap());
        c.push("b.c", &ArrayD::<f64>::from_shape_vec(IxDyn(&[1]), vec![std::f64::consts::PI]).unwrap());
        c
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CVCK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let a: ArrayD<f32> = back.get("a").unwrap().to_array();
        assert_eq!(a[[1, 2]], f32::MAX);
        assert_eq!(back.with_prefix::<f64>("b.").len(), 1);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::read_from(&b"CVAC\x01\0\0\0"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(Checkpoint::read_from(buf.as_slice()), Err(Error::Io(_))));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(Checkpoint::load(&dir.path().join("x.ckpt")), Err(Error::MissingFile(_))));
    }
}
