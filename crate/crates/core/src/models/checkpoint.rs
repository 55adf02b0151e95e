//! Checkpoint directories: one SPT1 file per parameter plus `meta.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Stb,
    Sor,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Stb => "stb",
            ModelKind::Sor => "sor",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub store: ParamStore,
    pub meta: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds a {} model, expected {}",
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(())
    }
}

/// Writes the checkpoint into a sibling staging directory and renames it
/// into place, so an interrupted run never leaves a partial checkpoint.
pub fn save_checkpoint(dir: &Path, kind: ModelKind, config: &ModelConfig, store: &ParamStore) -> Result<()> {
    let staging = staging_path(dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let mut meta = config.to_meta();
    meta.insert("kind".into(), kind.as_str().into());
    meta.insert("params".into(), store.len().to_string());
    meta.insert("scalars".into(), store.num_scalars().to_string());
    let mut lines: Vec<String> = meta.iter().map(|(k, v)| format!("{k}={v}")).collect();
    for (i, (name, t)) in store.iter().enumerate() {
        lines.push(format!("param.{i}={name}"));
        io::save(t, staging.join(format!("{name}.spt")))?;
    }
    let meta_path = staging.join("meta.txt");
    fs::write(&meta_path, lines.join("\n") + "\n").map_err(|e| Error::io(&meta_path, e))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&staging, dir).map_err(|e| Error::io(dir, e))
}

fn staging_path(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    dir.with_file_name(name)
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let meta_path = dir.join("meta.txt");
    if !meta_path.is_file() {
        return Err(Error::Checkpoint(format!("no checkpoint at {}", dir.display())));
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut meta = BTreeMap::new();
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed metadata line {line:?}")))?;
        if let Some(i) = k.strip_prefix("param.") {
            let i: usize = i
                .parse()
                .map_err(|_| Error::Checkpoint(format!("malformed metadata key {k}")))?;
            names.insert(i, v.to_string());
        } else {
            meta.insert(k.to_string(), v.to_string());
        }
    }
    let kind = match meta.get("kind").map(String::as_str) {
        Some("stb") => ModelKind::Stb,
        Some("sor") => ModelKind::Sor,
        other => return Err(Error::Checkpoint(format!("unknown model kind {other:?}"))),
    };
    let config = ModelConfig::from_meta(&meta)?;
    let mut store = ParamStore::new();
    for name in names.values() {
        let t = io::load(dir.join(format!("{name}.spt")))
            .map_err(|e| Error::Checkpoint(format!("parameter {name}: {e}")))?;
        store.insert(name.clone(), t)?;
    }
    Ok(Checkpoint {
        kind,
        config,
        store,
        meta,
    })
}
