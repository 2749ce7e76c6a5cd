//! File-backed response cache: one JSON file per request digest.
//!
//! Entries are human-inspectable and merge-friendly, which makes a cache
//! directory double as a replay fixture. Writes go through a temp file
//! and rename; a per-digest lock makes get-or-insert atomic within the
//! process, so concurrent identical requests trigger one backend call.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::ChatRequest;
use crate::error::GatewayError;

/// One cached call: the request, its response, and bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request: ChatRequest,
    pub response: String,
    pub backend_id: String,
    pub timestamp: u64,
}

/// Directory of `<digest>.json` entries.
pub struct ChatCache {
    dir: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ChatCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, GatewayError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| GatewayError::CacheIo {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(ChatCache {
            dir,
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn entry_path(&self, digest: &str) -> PathBuf {
        self.dir.join(format!("{digest}.json"))
    }

    fn digest_lock(&self, digest: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap();
        locks.entry(digest.to_string()).or_default().clone()
    }

    pub fn get(&self, digest: &str) -> Result<Option<CacheEntry>, GatewayError> {
        let path = self.entry_path(digest);
        let bytes = match std::fs::read(&path) {
            Ok(bytes) => bytes,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(GatewayError::CacheIo {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        let entry = serde_json::from_slice(&bytes).map_err(|e| GatewayError::CacheCorrupt {
            digest: digest.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Some(entry))
    }

    /// Returns the cached entry for `digest`, or produces one with
    /// `make`, stores it, and returns it. The bool is true on a hit.
    pub fn get_or_insert_with(
        &self,
        digest: &str,
        request: &ChatRequest,
        make: impl FnOnce() -> Result<(String, String), GatewayError>,
    ) -> Result<(CacheEntry, bool), GatewayError> {
        let lock = self.digest_lock(digest);
        let _guard = lock.lock().unwrap();
        if let Some(entry) = self.get(digest)? {
            return Ok((entry, true));
        }
        let (response, backend_id) = make()?;
        let entry = CacheEntry {
            request: request.clone(),
            response,
            backend_id,
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.write(digest, &entry)?;
        Ok((entry, false))
    }

    fn write(&self, digest: &str, entry: &CacheEntry) -> Result<(), GatewayError> {
        let path = self.entry_path(digest);
        let tmp = self.dir.join(format!(
            ".{digest}.tmp-{}",
            std::process::id()
        ));
        let io_err = |source, p: &Path| GatewayError::CacheIo {
            path: p.display().to_string(),
            source,
        };
        let body = serde_json::to_vec_pretty(entry).expect("cache entry serializes");
        std::fs::write(&tmp, body).map_err(|e| io_err(e, &tmp))?;
        std::fs::rename(&tmp, &path).map_err(|e| io_err(e, &path))?;
        Ok(())
    }

    /// Number of entries on disk.
    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::cache_key;

    #[test]
    fn entry_round_trips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ChatCache::open(dir.path()).unwrap();
        let req = ChatRequest::new("m", "sys", "user");
        let digest = cache_key(&req);
        assert!(cache.get(&digest).unwrap().is_none());
        let (entry, cached) = cache
            .get_or_insert_with(&digest, &req, || Ok(("answer".into(), "b1".into())))
            .unwrap();
        assert!(!cached);
        assert_eq!(entry.response, "answer");
        let (entry, cached) = cache
            .get_or_insert_with(&digest, &req, || panic!("must not be called"))
            .unwrap();
        assert!(cached);
        assert_eq!(entry.response, "answer");
        assert_eq!(entry.backend_id, "b1");
        assert_eq!(cache.len(), 1);
        // Layout: <cache_dir>/<digest>.json
        assert!(dir.path().join(format!("{digest}.json")).is_file());
    }

    #[test]
    fn corrupt_entry_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let cache = ChatCache::open(dir.path()).unwrap();
        std::fs::write(dir.path().join("abc.json"), b"not json").unwrap();
        assert!(matches!(
            cache.get("abc"),
            Err(GatewayError::CacheCorrupt { .. })
        ));
    }
}
