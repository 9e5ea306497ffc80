use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex};
use std::time::Instant;

use async_trait::async_trait;

use super::{request_fingerprint, Backend, BackendError, ModelRequest, ModelResponse};

const MAGIC: &str = "rubricon-cache 1";

/// One file per request fingerprint: a short header, a blank line, then
/// the raw response text. Files are written once and never rewritten.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| BackendError::CacheIo(format!("{}: {e}", dir.display())))?;
        Ok(ResponseCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, fingerprint: &str) -> PathBuf {
        self.dir.join(fingerprint)
    }

    pub fn get(&self, fingerprint: &str) -> Result<Option<String>, BackendError> {
        let path = self.path_for(fingerprint);
        let raw = match std::fs::read_to_string(&path) {
            Ok(raw) => raw,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(BackendError::CacheIo(format!("{}: {e}", path.display()))),
        };
        let Some((header, body)) = raw.split_once("\n\n") else {
            tracing::warn!(path = %path.display(), "cache entry without header; ignoring");
            return Ok(None);
        };
        let mut lines = header.lines();
        let len = lines
            .by_ref()
            .skip_while(|l| *l == MAGIC)
            .find_map(|l| l.strip_prefix("bytes: "))
            .and_then(|v| v.parse::<usize>().ok());
        if !header.starts_with(MAGIC) || len != Some(body.len()) {
            tracing::warn!(path = %path.display(), "truncated or foreign cache entry; ignoring");
            return Ok(None);
        }
        Ok(Some(body.to_string()))
    }

    pub fn put(&self, fingerprint: &str, backend: &str, sample_index: u64, text: &str) -> Result<(), BackendError> {
        let path = self.path_for(fingerprint);
        if path.exists() {
            return Ok(());
        }
        let io = |e: std::io::Error| BackendError::CacheIo(format!("{}: {e}", path.display()));
        let tmp = self.dir.join(format!(".{fingerprint}.{}.tmp", std::process::id()));
        {
            let mut f = std::fs::File::create(&tmp).map_err(io)?;
            write!(
                f,
                "{MAGIC}\nbackend: {backend}\nsample-index: {sample_index}\nbytes: {}\n\n{text}",
                text.len()
            )
            .map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        std::fs::rename(&tmp, &path).map_err(io)
    }
}

/// Look up `(request, sample_index)` in the cache, calling the backend only
/// on a miss.
pub async fn cached_complete(
    backend: &dyn Backend,
    request: &ModelRequest,
    sample_index: u64,
    cache: &ResponseCache,
) -> Result<ModelResponse, BackendError> {
    let key = request_fingerprint(request, sample_index);
    let started = Instant::now();
    if let Some(text) = cache.get(&key)? {
        return Ok(ModelResponse {
            text,
            backend_name: backend.name().to_string(),
            latency: started.elapsed(),
            cached: true,
        });
    }
    let resp = backend.complete(request, sample_index).await?;
    cache.put(&key, backend.name(), sample_index, &resp.text)?;
    Ok(resp)
}

/// A backend wrapped with a response cache and single-flight deduplication:
/// concurrent identical calls within a process share one upstream request.
pub struct CachedBackend {
    inner: Arc<dyn Backend>,
    cache: ResponseCache,
    in_flight: StdMutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl CachedBackend {
    /// Responses are stored under `root/<backend name>/`.
    pub fn new(inner: Arc<dyn Backend>, root: &Path) -> Result<Self, BackendError> {
        let cache = ResponseCache::open(root.join(inner.name()))?;
        Ok(CachedBackend {
            inner,
            cache,
            in_flight: StdMutex::new(HashMap::new()),
        })
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }
}

#[async_trait]
impl Backend for CachedBackend {
    fn name(&self) -> &str {
        self.inner.name()
    }

    async fn complete(&self, request: &ModelRequest, sample_index: u64) -> Result<ModelResponse, BackendError> {
        let key = request_fingerprint(request, sample_index);
        let gate = {
            let mut map = self.in_flight.lock().expect("in-flight map poisoned");
            map.entry(key.clone()).or_default().clone()
        };
        let result = {
            let _guard = gate.lock().await;
            cached_complete(self.inner.as_ref(), request, sample_index, &self.cache).await
        };
        {
            let mut map = self.in_flight.lock().expect("in-flight map poisoned");
            if map.get(&key).is_some_and(|g| Arc::strong_count(g) <= 2) {
                map.remove(&key);
            }
        }
        drop(gate);
        result
    }
}
