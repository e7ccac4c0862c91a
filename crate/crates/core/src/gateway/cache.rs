//! Content-addressed embedding cache (memory, optionally mirrored to disk).

use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::RwLock;

use super::{Embedder, EmbeddingVector, GatewayError};
use crate::util::sha256_hex;

/// Wraps an [`Embedder`], serving repeated texts without calling it again.
///
/// Keys are `sha256(namespace \0 text)`. With a cache directory each vector
/// is also stored as `<dir>/<key>.json` and reused across processes.
pub struct CachedEmbedder<E> {
    inner: E,
    memory: RwLock<HashMap<String, EmbeddingVector>>,
    dir: Option<PathBuf>,
    backend_calls: AtomicUsize,
}

impl<E: Embedder> CachedEmbedder<E> {
    pub fn new(inner: E) -> Self {
        CachedEmbedder {
            inner,
            memory: RwLock::new(HashMap::new()),
            dir: None,
            backend_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_dir(inner: E, dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        let mut c = CachedEmbedder::new(inner);
        c.dir = Some(dir);
        Ok(c)
    }

    pub fn key(&self, text: &str) -> String {
        sha256_hex(format!("{}\0{}", self.inner.namespace(), text))
    }

    /// Number of requests that reached the wrapped embedder.
    pub fn backend_calls(&self) -> usize {
        self.backend_calls.load(Ordering::SeqCst)
    }

    fn read_disk(&self, key: &str) -> Option<EmbeddingVector> {
        let path = self.dir.as_ref()?.join(format!("{key}.json"));
        let text = fs::read_to_string(path).ok()?;
        let bits: Vec<u32> = serde_json::from_str(&text).ok()?;
        Some(EmbeddingVector::new(
            bits.into_iter().map(f32::from_bits).collect(),
        ))
    }

    fn write_disk(&self, key: &str, v: &EmbeddingVector) {
        if let Some(dir) = &self.dir {
            let path = dir.join(format!("{key}.json"));
            let tmp = dir.join(format!("{key}.json.tmp"));
            // Stored as bit patterns so reloads are exact.
            let bits: Vec<u32> = v.values.iter().map(|x| x.to_bits()).collect();
            let json = serde_json::to_vec(&bits).expect("vectors serialize");
            // A failed write only costs a future cache miss.
            if fs::write(&tmp, json).is_ok() {
                let _ = fs::rename(&tmp, &path);
            }
        }
    }
}

impl<E: Embedder> Embedder for CachedEmbedder<E> {
    fn namespace(&self) -> String {
        self.inner.namespace()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, GatewayError> {
        let key = self.key(text);
        if let Some(v) = self.memory.read().expect("cache lock poisoned").get(&key) {
            return Ok(v.clone());
        }
        let v = match self.read_disk(&key) {
            Some(v) => v,
            None => {
                self.backend_calls.fetch_add(1, Ordering::SeqCst);
                let v = self.inner.embed(text)?;
                self.write_disk(&key, &v);
                v
            }
        };
        self.memory
            .write()
            .expect("cache lock poisoned")
            .insert(key, v.clone());
        Ok(v)
    }
}
