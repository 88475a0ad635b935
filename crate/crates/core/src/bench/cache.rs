//! Content-addressed stage cache.
//!
//! A stage's outputs live in `<root>/<stage>-<key>/`, where `key` hashes the
//! stage's parameters and the keys of the stages it reads. The directory is
//! built under a temporary name and renamed into place when complete. A
//! `stage.json` file records the SHA-256 of every output file so a damaged
//! entry is detected on reuse.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

const RECORD: &str = "stage.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    stage: String,
    key: String,
    files: BTreeMap<String, String>,
}

/// Hex SHA-256 over the given parts, each length-prefixed.
pub fn stage_key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..12])
}

fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn list_files(dir: &Path, base: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            list_files(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("walked from base").to_path_buf();
            if rel != Path::new(RECORD) {
                out.push(rel);
            }
        }
    }
    Ok(())
}

fn rel_key(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

#[derive(Debug, Clone)]
pub struct StageCache {
    root: PathBuf,
}

/// Outcome of [`StageCache::get_or_build`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageDir {
    pub path: PathBuf,
    pub key: String,
    pub reused: bool,
}

impl StageCache {
    pub fn new(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(StageCache { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_path(&self, stage: &str, key: &str) -> PathBuf {
        self.root.join(format!("{stage}-{key}"))
    }

    /// Checks every recorded file hash of a finished stage directory.
    pub fn verify(&self, stage: &str, key: &str) -> Result<()> {
        let dir = self.stage_path(stage, key);
        let rec_path = dir.join(RECORD);
        let text = fs::read_to_string(&rec_path).map_err(|_| Error::CacheCorrupted(dir.clone()))?;
        let rec: StageRecord = serde_json::from_str(&text).map_err(|_| Error::CacheCorrupted(dir.clone()))?;
        if rec.stage != stage || rec.key != key {
            return Err(Error::CacheCorrupted(dir));
        }
        let mut present = Vec::new();
        list_files(&dir, &dir, &mut present)?;
        if present.len() != rec.files.len() {
            return Err(Error::CacheCorrupted(dir));
        }
        for (name, hash) in &rec.files {
            let p = dir.join(name);
            if !p.is_file() || &file_hash(&p)? != hash {
                return Err(Error::CacheCorrupted(p));
            }
        }
        Ok(())
    }

    /// Returns the stage directory, running `build` into a fresh directory
    /// when no finished entry exists.
    pub fn get_or_build<F>(&self, stage: &str, key: &str, build: F) -> Result<StageDir>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let path = self.stage_path(stage, key);
        if path.is_dir() {
            self.verify(stage, key)?;
            log::info!("stage {stage} reused from {}", path.display());
            return Ok(StageDir {
                path,
                key: key.to_string(),
                reused: true,
            });
        }
        let tmp = self.root.join(format!(".{stage}-{key}.tmp-{}", std::process::id()));
        if tmp.exists() {
            fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        if let Err(e) = build(&tmp) {
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        let mut files = Vec::new();
        list_files(&tmp, &tmp, &mut files)?;
        files.sort();
        let mut hashes = BTreeMap::new();
        for f in files {
            hashes.insert(rel_key(&f), file_hash(&tmp.join(&f))?);
        }
        let rec = StageRecord {
            stage: stage.to_string(),
            key: key.to_string(),
            files: hashes,
        };
        write_atomic(
            &tmp.join(RECORD),
            serde_json::to_string_pretty(&rec).expect("record serializes").as_bytes(),
        )?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(StageDir {
            path,
            key: key.to_string(),
            reused: false,
        })
    }
}
