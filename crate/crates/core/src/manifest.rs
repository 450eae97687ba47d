//! Dataset manifests: one JSON object per line.
//!
//! ```text
//! {"path": "audio/0_jackson_0.wav", "label": 0, "split": "train"}
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub path: PathBuf,
    #[serde(default)]
    pub label: Option<usize>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Train
}

impl ManifestRecord {
    /// Name of this record's feature cache inside a cache directory; derived from
    /// the record index so equal file names in different folders never collide.
    pub fn cache_name(index: usize) -> String {
        format!("{index:06}.cvac")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub records: Vec<ManifestRecord>,
}

impl Manifest {
    /// Parses NDJSON; blank lines and lines starting with `#` are skipped. Relative
    /// audio paths are resolved against `base`.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut rec: ManifestRecord = serde_json::from_str(line)
                .map_err(|e| Error::Format(format!("manifest line {}: {e}", i + 1)))?;
            if let Some(base) = base {
                if rec.path.is_relative() {
                    rec.path = base.join(&rec.path);
                }
            }
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        Ok(Self { records })
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent())
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// `(index, record)` pairs of one split, in manifest order.
    pub fn split(&self, split: Split) -> impl Iterator<Item = (usize, &ManifestRecord)> {
        self.records.iter().enumerate().filter(move |(_, r)| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }
}
