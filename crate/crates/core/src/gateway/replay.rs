use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Backend, BackendError, BackendKind, BackendResponse, CompletionRequest, ModelConfig};

/// One cache file, `<fingerprint>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedResponse {
    pub request: Value,
    pub raw_text: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
}

/// Content-addressed store of accepted model outputs.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        ResponseCache { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(format!("{fingerprint}.json"))
    }

    pub fn get(&self, fingerprint: &str) -> io::Result<Option<CachedResponse>> {
        match fs::read_to_string(self.path_for(fingerprint)) {
            Ok(text) => serde_json::from_str(&text)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Writes atomically; an existing entry is left untouched.
    pub fn put(&self, fingerprint: &str, request: Value, raw_text: &str) -> io::Result<()> {
        let path = self.path_for(fingerprint);
        if path.exists() {
            return Ok(());
        }
        fs::create_dir_all(&self.dir)?;
        let entry = CachedResponse {
            request,
            raw_text: raw_text.to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        serde_json::to_writer_pretty(&mut tmp, &entry)?;
        tmp.write_all(b"\n")?;
        tmp.persist(&path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn len(&self) -> io::Result<usize> {
        match fs::read_dir(&self.dir) {
            Ok(entries) => Ok(entries
                .filter_map(Result::ok)
                .filter(|e| e.path().extension().is_some_and(|x| x == "json"))
                .count()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(e),
        }
    }

    pub fn is_empty(&self) -> io::Result<bool> {
        self.len().map(|n| n == 0)
    }
}

/// Serves cached outputs; on a miss, forwards to the upstream backend when
/// one is configured (record mode) and fails otherwise.
pub struct ReplayBackend {
    cache: ResponseCache,
    upstream: Option<Arc<dyn Backend>>,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl ReplayBackend {
    pub fn offline(cache: ResponseCache) -> Self {
        ReplayBackend {
            cache,
            upstream: None,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn recording(cache: ResponseCache, upstream: Arc<dyn Backend>) -> Self {
        ReplayBackend {
            upstream: Some(upstream),
            ..Self::offline(cache)
        }
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::SeqCst)
    }
}

impl Backend for ReplayBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Replay
    }

    fn send(&self, request: &CompletionRequest, config: &ModelConfig) -> Result<BackendResponse, BackendError> {
        let cached = self
            .cache
            .get(&request.fingerprint)
            .map_err(|e| BackendError::Fatal(format!("reading cache entry {}: {e}", request.fingerprint)))?;
        if let Some(entry) = cached {
            self.hits.fetch_add(1, Ordering::SeqCst);
            return Ok(BackendResponse {
                text: entry.raw_text,
                source: BackendKind::Replay,
            });
        }
        self.misses.fetch_add(1, Ordering::SeqCst);
        match &self.upstream {
            Some(upstream) => upstream.send(request, config),
            None => Err(BackendError::NoCachedResponse),
        }
    }

    fn accept(&self, request: &CompletionRequest, response: &BackendResponse) -> Result<(), BackendError> {
        if response.source == BackendKind::Replay {
            return Ok(());
        }
        self.cache
            .put(&request.fingerprint, request.body(), &response.text)
            .map_err(|e| BackendError::Fatal(format!("writing cache entry {}: {e}", request.fingerprint)))
    }
}
