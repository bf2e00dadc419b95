//! Content-addressed on-disk cache of encoded query results.
//!
//! Layout: `<root>/<key[..2]>/<key>.jqr` holds the encoded response and
//! `<key>.meta` the dataset id and query text. Keys are the hex SHA-256 of
//! `dataset + "\n" + query`. Files are written to a temporary name and
//! renamed into place, so readers never see partial entries.

use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

/// Environment variable overriding the default cache directory.
pub const CACHE_DIR_ENV: &str = "JQ_CACHE_DIR";

pub fn cache_key(dataset: &str, query: &str) -> String {
    let mut h = Sha256::new();
    h.update(dataset.as_bytes());
    h.update(b"\n");
    h.update(query.as_bytes());
    hex::encode(h.finalize())
}

#[derive(Debug, Clone)]
pub struct ResultCache {
    root: PathBuf,
}

impl ResultCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResultCache { root: root.into() }
    }

    /// `$JQ_CACHE_DIR`, or `.jagq-cache` in the working directory.
    pub fn from_env() -> Self {
        let root = std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".jagq-cache"));
        ResultCache::new(root)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn entry(&self, key: &str, ext: &str) -> PathBuf {
        self.root.join(&key[..2]).join(format!("{key}.{ext}"))
    }

    pub fn get(&self, key: &str) -> Option<Vec<u8>> {
        std::fs::read(self.entry(key, "jqr")).ok()
    }

    pub fn put(&self, key: &str, dataset: &str, query: &str, bytes: &[u8]) -> std::io::Result<()> {
        let dir = self.root.join(&key[..2]);
        std::fs::create_dir_all(&dir)?;
        let meta = format!("dataset: {dataset}\nquery: {query}\n");
        for (ext, data) in [("meta", meta.as_bytes()), ("jqr", bytes)] {
            let mut tmp = tempfile::NamedTempFile::new_in(&dir)?;
            tmp.write_all(data)?;
            tmp.persist(self.entry(key, ext)).map_err(|e| e.error)?;
        }
        Ok(())
    }
}
