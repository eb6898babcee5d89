//! Paired low/high dataset manifests.
//!
//! Directory layout understood by [`build_manifest`]:
//!
//! ```text
//! root/high/<name>            well-exposed references
//! root/<level>/<name>         degraded counterparts (light | moderate | dense)
//! root/test_low/<name>        optional unpaired low-light images
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{list_images, Level};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const UNPAIRED_DIR: &str = "test_low";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub low: String,
    pub high: Option<String>,
    pub split: Split,
    pub level: Option<Level>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: String,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if e.split != Split::Test && (e.high.is_none() || e.level.is_none()) {
                return Err(Error::Config(format!(
                    "{:?} entry `{}` must carry a reference path and a level",
                    e.split, e.low
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Internal(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Root resolved against the directory holding the manifest file when it
    /// is relative.
    pub fn resolve_root(&self, manifest_path: &Path) -> PathBuf {
        let root = Path::new(&self.root);
        if root.is_absolute() {
            root.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new(".")).join(root)
        }
    }

    /// Entries of one split that carry a reference image.
    pub fn pairs(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split && e.high.is_some())
    }
}

fn split_counts(n: usize, fracs: (f64, f64)) -> Result<(usize, usize)> {
    let (ft, fv) = fracs;
    if !(ft >= 0.0 && fv >= 0.0 && ft + fv <= 1.0 + 1e-9) {
        return Err(Error::Argument(format!("split fractions ({ft}, {fv}) must be non-negative and sum to at most 1")));
    }
    let train = ((n as f64 * ft) + 1e-9).floor() as usize;
    let val = (((n as f64 * fv) + 1e-9).floor() as usize).min(n - train);
    Ok((train, val))
}

/// Scans `root`, assigns splits lexicographically and writes
/// `root/manifest.json`.
pub fn build_manifest(root: impl AsRef<Path>, split_fracs: (f64, f64)) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let high_dir = root.join("high");
    let highs = if high_dir.is_dir() { list_images(&high_dir)? } else { Vec::new() };
    let unpaired_dir = root.join(UNPAIRED_DIR);
    let unpaired = if unpaired_dir.is_dir() { list_images(&unpaired_dir)? } else { Vec::new() };
    if highs.is_empty() && unpaired.is_empty() {
        return Err(Error::EmptyDataset(format!("no images under {}", high_dir.display())));
    }
    let (n_train, n_val) = split_counts(highs.len(), split_fracs)?;
    let levels: Vec<Level> = Level::ALL.into_iter().filter(|l| root.join(l.as_str()).is_dir()).collect();

    let mut entries = Vec::new();
    for (i, high) in highs.iter().enumerate() {
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        let name = high
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Argument(format!("non UTF-8 file name {}", high.display())))?;
        for &level in &levels {
            if root.join(level.as_str()).join(name).is_file() {
                entries.push(ManifestEntry {
                    low: format!("{level}/{name}"),
                    high: Some(format!("high/{name}")),
                    split,
                    level: Some(level),
                });
            }
        }
    }
    for p in &unpaired {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
        entries.push(ManifestEntry {
            low: format!("{UNPAIRED_DIR}/{name}"),
            high: None,
            split: Split::Test,
            level: None,
        });
    }
    let manifest = DatasetManifest { root: ".".into(), entries };
    manifest.save(root.join(MANIFEST_FILE))?;
    Ok(manifest)
}
