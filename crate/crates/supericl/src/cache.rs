//! Content-addressed completion cache.
//!
//! One JSON file per request digest at `<root>/<digest[..2]>/<digest>.json`,
//! holding the request echo, the response and a SHA-256 of the response
//! text. Writes go to a temporary file in the same directory and are renamed
//! into place, so concurrent writers never expose a torn entry; the last
//! rename wins.

use std::fs;
use std::io::{ErrorKind, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use supericl_core::{CacheKey, CompletionBackend, CompletionRequest, CompletionResponse, LlmError};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    key: String,
    request: CompletionRequest,
    text: String,
    text_sha256: String,
    prompt_tokens: u64,
    completion_tokens: u64,
}

fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entry_path(&self, key: &CacheKey) -> PathBuf {
        let k = key.as_str();
        self.root
            .join(&k[..2.min(k.len())])
            .join(format!("{k}.json"))
    }

    /// Stored response for `request`, or `None` on a miss.
    pub fn get(&self, request: &CompletionRequest) -> Result<Option<CompletionResponse>, LlmError> {
        let key = request.cache_key();
        let path = self.entry_path(&key);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(LlmError::CacheIo(format!("{}: {e}", path.display()))),
        };
        let corrupt = || LlmError::CacheCorrupt(path.display().to_string());
        let entry: Entry = serde_json::from_slice(&bytes).map_err(|_| corrupt())?;
        if entry.key != key.as_str()
            || entry.request.cache_key() != key
            || entry.text_sha256 != text_digest(&entry.text)
        {
            return Err(corrupt());
        }
        Ok(Some(CompletionResponse {
            text: entry.text,
            prompt_tokens: entry.prompt_tokens,
            completion_tokens: entry.completion_tokens,
            from_cache: true,
        }))
    }

    pub fn put(
        &self,
        request: &CompletionRequest,
        response: &CompletionResponse,
    ) -> Result<(), LlmError> {
        let key = request.cache_key();
        let path = self.entry_path(&key);
        let dir = path.parent().expect("entry path has a parent");
        let io = |e: std::io::Error| LlmError::CacheIo(format!("{}: {e}", path.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let entry = Entry {
            key: key.as_str().into(),
            request: request.clone(),
            text: response.text.clone(),
            text_sha256: text_digest(&response.text),
            prompt_tokens: response.prompt_tokens,
            completion_tokens: response.completion_tokens,
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        serde_json::to_writer_pretty(&mut tmp, &entry).map_err(|e| io(e.into()))?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

/// Looks `request` up in `cache`, delegating to `backend` and storing the result on a miss.
pub fn cached_complete(
    cache: &ResponseCache,
    backend: &impl CompletionBackend,
    request: &CompletionRequest,
) -> Result<CompletionResponse, LlmError> {
    if let Some(hit) = cache.get(request)? {
        return Ok(hit);
    }
    let mut response = backend.complete(request)?;
    cache.put(request, &response)?;
    response.from_cache = false;
    Ok(response)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: usize,
    pub misses: usize,
}

/// Backend wrapper that consults a cache first and keeps hit/miss counts.
pub struct CachedBackend<B> {
    cache: ResponseCache,
    inner: B,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl<B> CachedBackend<B> {
    pub fn new(cache: ResponseCache, inner: B) -> Self {
        Self {
            cache,
            inner,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn stats(&self) -> CacheStats {
        CacheStats {
            hits: self.hits.load(Ordering::SeqCst),
            misses: self.misses.load(Ordering::SeqCst),
        }
    }
}

impl<B: CompletionBackend> CompletionBackend for CachedBackend<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<CompletionResponse, LlmError> {
        let response = cached_complete(&self.cache, &self.inner, request)?;
        let counter = if response.from_cache {
            &self.hits
        } else {
            &self.misses
        };
        counter.fetch_add(1, Ordering::SeqCst);
        Ok(response)
    }
}
