use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{Codebook, CodebookError};

/// Directory of immutable codebook versions, one file per version
/// (`codebook.v<N>.json`).
#[derive(Debug)]
pub struct CodebookRegistry {
    dir: PathBuf,
    versions: BTreeMap<u64, Codebook>,
}

impl CodebookRegistry {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, CodebookError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |source| CodebookError::Io {
            path: dir.display().to_string(),
            source,
        };
        std::fs::create_dir_all(&dir).map_err(io)?;
        let mut versions = BTreeMap::new();
        for entry in std::fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            let is_version_file = path
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("codebook.v") && n.ends_with(".json"));
            if is_version_file {
                let cb = Codebook::load(&path)?;
                versions.insert(cb.version_id, cb);
            }
        }
        Ok(CodebookRegistry { dir, versions })
    }

    pub fn path_for(&self, version: u64) -> PathBuf {
        self.dir.join(format!("codebook.v{version}.json"))
    }

    pub fn latest(&self) -> Option<&Codebook> {
        self.versions.values().next_back()
    }

    pub fn get(&self, version: u64) -> Option<&Codebook> {
        self.versions.get(&version)
    }

    pub fn versions(&self) -> impl Iterator<Item = u64> + '_ {
        self.versions.keys().copied()
    }

    /// Stores a new version. Existing versions are never overwritten.
    pub fn put(&mut self, cb: Codebook) -> Result<&Codebook, CodebookError> {
        if let Some(existing) = self.versions.get(&cb.version_id) {
            if *existing == cb {
                return Ok(self.versions.get(&cb.version_id).unwrap());
            }
            return Err(CodebookError::VersionOrder {
                version: cb.version_id,
                predecessor: cb.version_id,
            });
        }
        cb.save(self.path_for(cb.version_id))?;
        let v = cb.version_id;
        self.versions.insert(v, cb);
        Ok(self.versions.get(&v).unwrap())
    }

    /// True if `to` reaches `from` by following predecessor links.
    pub fn is_descendant(&self, from: u64, to: u64) -> bool {
        let mut cur = Some(to);
        while let Some(v) = cur {
            if v == from {
                return true;
            }
            cur = self.versions.get(&v).and_then(|cb| cb.predecessor);
        }
        false
    }
}
