//! Checkpoint directories: one text matrix per file plus `manifest.json`.
//!
//! Writes go to a sibling temporary directory that is renamed into place, so a
//! reader never observes a half-written checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    /// `"transe"`, `"encoder"` or `"decoder"`.
    pub kind: String,
    pub config: serde_json::Value,
    pub matrices: Vec<MatrixEntry>,
}

/// A loaded checkpoint.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: CheckpointManifest,
    pub matrices: BTreeMap<String, Matrix>,
}

impl Checkpoint {
    pub fn take(&mut self, name: &str) -> Result<Matrix> {
        self.matrices
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("matrix {name:?} missing")))
    }

    pub fn config<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.manifest.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config: {e}")))
    }
}

fn tmp_sibling(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

/// Writes `matrices` and a manifest into `dir`, replacing any previous contents.
pub fn write_checkpoint<C: Serialize>(
    dir: &Path,
    kind: &str,
    config: &C,
    matrices: &[(String, &Matrix)],
) -> Result<()> {
    let tmp = tmp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut entries = Vec::with_capacity(matrices.len());
    for (name, m) in matrices {
        let file = format!("{name}.txt");
        m.save(&tmp.join(&file))?;
        entries.push(MatrixEntry {
            name: name.clone(),
            file,
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    let manifest = CheckpointManifest {
        kind: kind.to_string(),
        config: serde_json::to_value(config).map_err(|e| Error::Checkpoint(e.to_string()))?,
        matrices: entries,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let path = tmp.join(MANIFEST);
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

/// Reads a checkpoint, checking its kind and every matrix shape.
pub fn read_checkpoint(dir: &Path, kind: &str) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if manifest.kind != kind {
        return Err(Error::Checkpoint(format!(
            "{} holds a {} checkpoint, expected {kind}",
            dir.display(),
            manifest.kind
        )));
    }
    let mut matrices = BTreeMap::new();
    for entry in &manifest.matrices {
        let m = Matrix::load(&dir.join(&entry.file))?;
        if m.shape() != (entry.rows, entry.cols) {
            return Err(Error::Checkpoint(format!(
                "{} is {:?}, manifest says {:?}",
                entry.file,
                m.shape(),
                (entry.rows, entry.cols)
            )));
        }
        matrices.insert(entry.name.clone(), m);
    }
    Ok(Checkpoint { manifest, matrices })
}
