//! Content-addressed response cache: one `<sha256>.json` file per request.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{GatewayError, ModelRequest, UsageRecord};
use crate::constructor::Dialect;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub key: String,
    pub backend: serde_json::Value,
    pub request: ModelRequest,
    pub dialect: Dialect,
    pub body: String,
    pub usage: UsageRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CacheStats {
    pub entries: u64,
    pub bytes: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug)]
pub struct ResponseCache {
    dir: PathBuf,
    tmp_counter: AtomicU64,
}

fn cache_err(path: &Path, e: impl std::fmt::Display) -> GatewayError {
    GatewayError::Cache(format!("{}: {e}", path.display()))
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| cache_err(&dir, e))?;
        Ok(Self {
            dir,
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.json"))
    }

    pub fn get(&self, key: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.path_for(key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(cache_err(&path, e)),
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry) if entry.key == key => Ok(Some(entry)),
            Ok(_) => {
                log::warn!("{}: key mismatch, treating as a miss", path.display());
                Ok(None)
            }
            Err(e) => {
                log::warn!("{}: unreadable cache entry ({e}), treating as a miss", path.display());
                Ok(None)
            }
        }
    }

    /// Writes through a temporary file and renames it into place, so readers
    /// never observe a partial entry.
    pub fn put(&self, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.path_for(&entry.key);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            entry.key,
            std::process::id(),
            self.tmp_counter.fetch_add(1, Ordering::Relaxed)
        ));
        let data = serde_json::to_vec_pretty(entry).map_err(|e| cache_err(&path, e))?;
        let mut f = fs::File::create(&tmp).map_err(|e| cache_err(&tmp, e))?;
        f.write_all(&data).map_err(|e| cache_err(&tmp, e))?;
        f.sync_all().map_err(|e| cache_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| cache_err(&path, e))
    }

    fn entry_paths(&self) -> Result<Vec<PathBuf>, GatewayError> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| cache_err(&self.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "json")
                    && !p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'))
            })
            .collect();
        paths.sort();
        Ok(paths)
    }

    pub fn list(&self) -> Result<Vec<CacheEntry>, GatewayError> {
        let mut out = Vec::new();
        for path in self.entry_paths()? {
            let bytes = fs::read(&path).map_err(|e| cache_err(&path, e))?;
            match serde_json::from_slice(&bytes) {
                Ok(entry) => out.push(entry),
                Err(e) => log::warn!("{}: skipping unreadable entry ({e})", path.display()),
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> Result<CacheStats, GatewayError> {
        let mut stats = CacheStats::default();
        for path in self.entry_paths()? {
            let meta = fs::metadata(&path).map_err(|e| cache_err(&path, e))?;
            stats.entries += 1;
            stats.bytes += meta.len();
            if let Ok(entry) = serde_json::from_slice::<CacheEntry>(&fs::read(&path).map_err(|e| cache_err(&path, e))?) {
                stats.prompt_tokens += entry.usage.prompt_tokens;
                stats.completion_tokens += entry.usage.completion_tokens;
            }
        }
        Ok(stats)
    }

    /// Removes every entry; returns how many were deleted.
    pub fn clear(&self) -> Result<u64, GatewayError> {
        let mut n = 0;
        for path in self.entry_paths()? {
            fs::remove_file(&path).map_err(|e| cache_err(&path, e))?;
            n += 1;
        }
        Ok(n)
    }
}
