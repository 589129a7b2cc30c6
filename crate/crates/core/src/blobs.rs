//! Content-addressed item content plus the archive store.
//!
//! Hot content lives under `blobs/<sha256>`; archived content under
//! `archive/<sha256>` with `archive/index.jsonl` mapping node id to hash and
//! original path. Without a root directory everything stays in memory.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::graph::NodeId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveEntry {
    pub node: NodeId,
    pub hash: String,
    pub path: String,
}

#[derive(Clone, Debug, Default)]
pub struct Blobs {
    root: Option<PathBuf>,
    hot: HashMap<String, Vec<u8>>,
    cold: HashMap<String, Vec<u8>>,
    index: Vec<ArchiveEntry>,
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Blobs {
    pub fn memory() -> Self {
        Self::default()
    }

    pub fn open(root: &Path) -> Result<Self> {
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("archive"))?;
        let mut index = Vec::new();
        let idx = root.join("archive").join("index.jsonl");
        if idx.exists() {
            for line in fs::read_to_string(idx)?.lines().filter(|l| !l.trim().is_empty()) {
                if let Ok(e) = serde_json::from_str(line) {
                    index.push(e);
                }
            }
        }
        Ok(Blobs { root: Some(root.to_path_buf()), index, ..Default::default() })
    }

    /// An empty in-memory store for scratch copies that must not touch disk.
    pub fn scratch(&self) -> Self {
        Blobs { root: None, hot: HashMap::new(), cold: HashMap::new(), index: self.index.clone() }
    }

    pub fn put(&mut self, bytes: &[u8]) -> Result<String> {
        let hash = content_hash(bytes);
        match &self.root {
            Some(root) => {
                let p = root.join("blobs").join(&hash);
                if !p.exists() {
                    fs::write(p, bytes)?;
                }
            }
            None => {
                self.hot.entry(hash.clone()).or_insert_with(|| bytes.to_vec());
            }
        }
        Ok(hash)
    }

    /// Reads content from the hot store, falling back to the archive.
    pub fn get(&self, hash: &str) -> Result<Option<Vec<u8>>> {
        match &self.root {
            Some(root) => {
                for dir in ["blobs", "archive"] {
                    let p = root.join(dir).join(hash);
                    if p.exists() {
                        return Ok(Some(fs::read(p)?));
                    }
                }
                Ok(None)
            }
            None => Ok(self.hot.get(hash).or_else(|| self.cold.get(hash)).cloned()),
        }
    }

    /// Copies content into the archive and records the index entry. When
    /// `release_hot` is set the hot copy is dropped as well.
    pub fn archive(&mut self, node: &NodeId, hash: &str, path: &str, release_hot: bool) -> Result<()> {
        let entry = ArchiveEntry { node: node.clone(), hash: hash.to_string(), path: path.to_string() };
        match &self.root {
            Some(root) => {
                let hot = root.join("blobs").join(hash);
                let cold = root.join("archive").join(hash);
                if hot.exists() && !cold.exists() {
                    fs::copy(&hot, &cold)?;
                }
                if release_hot && hot.exists() {
                    fs::remove_file(hot)?;
                }
                let mut f = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(root.join("archive").join("index.jsonl"))?;
                writeln!(f, "{}", serde_json::to_string(&entry).expect("entry serializes"))?;
            }
            None => {
                if let Some(bytes) = self.hot.get(hash).cloned() {
                    self.cold.entry(hash.to_string()).or_insert(bytes);
                }
                if release_hot {
                    self.hot.remove(hash);
                }
            }
        }
        self.index.push(entry);
        Ok(())
    }

    /// Drops the hot copy of unreferenced content.
    pub fn release(&mut self, hash: &str) -> Result<()> {
        match &self.root {
            Some(root) => {
                let p = root.join("blobs").join(hash);
                if p.exists() {
                    fs::remove_file(p)?;
                }
            }
            None => {
                self.hot.remove(hash);
            }
        }
        Ok(())
    }

    pub fn is_hot(&self, hash: &str) -> bool {
        match &self.root {
            Some(root) => root.join("blobs").join(hash).exists(),
            None => self.hot.contains_key(hash),
        }
    }

    pub fn archive_index(&self) -> &[ArchiveEntry] {
        &self.index
    }
}
