//! Content-addressed object store for extracted HTTP payloads. Objects are
//! written once under `objects/<first two hex>/<sha256>`; identical payloads
//! from any capture or worker collapse onto the same file.

use std::io;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectRef {
    /// Hex sha256 of the stored bytes; doubles as the object id.
    pub sha256: String,
    pub length: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct ObjectStore {
    root: PathBuf,
}

impl ObjectStore {
    pub fn create(root: &Path) -> io::Result<ObjectStore> {
        std::fs::create_dir_all(root)?;
        Ok(ObjectStore { root: root.to_path_buf() })
    }

    pub fn path_for(&self, sha256: &str) -> PathBuf {
        self.root.join(&sha256[..2]).join(sha256)
    }

    /// Stores `bytes`, returning its reference. Writing is atomic (temp file
    /// plus rename) and idempotent, so concurrent writers of the same content
    /// are safe. Empty payloads get a reference but no file.
    pub fn put(&self, bytes: &[u8]) -> io::Result<ObjectRef> {
        let sha256 = sha256_hex(bytes);
        let oref = ObjectRef { sha256, length: bytes.len() as u64 };
        if bytes.is_empty() {
            return Ok(oref);
        }
        let path = self.path_for(&oref.sha256);
        if path.exists() {
            return Ok(oref);
        }
        let dir = path.parent().expect("object path has a parent");
        std::fs::create_dir_all(dir)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        // A concurrent writer may have won the rename; same content either way.
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(oref)
    }
}
