//! `manifest.json`: dataset-level settings plus one record per clip.
//! Paths are relative to the manifest's directory.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DataError, Result};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub subject_id: String,
    pub class_label: usize,
    pub frame_paths: Vec<PathBuf>,
    pub landmark_path: PathBuf,
    pub flow_paths: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_classes: usize,
    pub t: usize,
    pub m: usize,
    pub clips: Vec<ClipRecord>,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |s: String| Err(DataError::Config(s));
        if self.version != MANIFEST_VERSION {
            return bad(format!("manifest version {} (expected {MANIFEST_VERSION})", self.version));
        }
        if self.n_classes < 2 || self.t < 2 || self.m == 0 {
            return bad(format!("n_classes {}, t {}, m {}", self.n_classes, self.t, self.m));
        }
        let mut ids = BTreeSet::new();
        for c in &self.clips {
            if c.subject_id.is_empty() {
                return bad(format!("clip {} has an empty subject id", c.clip_id));
            }
            if !ids.insert(&c.clip_id) {
                return bad(format!("duplicate clip id {}", c.clip_id));
            }
            if c.class_label >= self.n_classes {
                return bad(format!("clip {} label {} >= {}", c.clip_id, c.class_label, self.n_classes));
            }
            if c.frame_paths.len() != self.t || c.flow_paths.len() != self.t - 1 {
                return bad(format!(
                    "clip {}: {} frames and {} flows for t = {}",
                    c.clip_id,
                    c.frame_paths.len(),
                    c.flow_paths.len(),
                    self.t
                ));
            }
        }
        Ok(())
    }

    /// Sorted distinct subject ids.
    pub fn subjects(&self) -> Vec<String> {
        let set: BTreeSet<&String> = self.clips.iter().map(|c| &c.subject_id).collect();
        set.into_iter().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_json() + "\n").map_err(|e| DataError::io(&path, e))?;
        Ok(path)
    }

    /// Accepts the manifest file or the directory holding it.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let file = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
        let text = std::fs::read_to_string(&file).map_err(|e| DataError::io(&file, e))?;
        let manifest: Self =
            serde_json::from_str(&text).map_err(|e| DataError::format(&file, e.to_string()))?;
        manifest.validate()?;
        let root = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((manifest, root))
    }
}
