use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use sha2::{Digest, Sha256};

/// Normalized embeddings keyed by `sha256(model \0 text)`.
///
/// Always cached in memory; when a directory is configured each vector is also
/// written there as `<hash>.f32` (little-endian f32s) and read back on a miss.
#[derive(Debug, Default)]
pub struct EmbeddingCache {
    dir: Option<PathBuf>,
    memory: RwLock<HashMap<String, Arc<Vec<f32>>>>,
}

impl EmbeddingCache {
    pub fn new(dir: Option<PathBuf>) -> Self {
        EmbeddingCache {
            dir,
            memory: RwLock::new(HashMap::new()),
        }
    }

    pub fn key(model: &str, text: &str) -> String {
        let mut h = Sha256::new();
        h.update(model.as_bytes());
        h.update([0u8]);
        h.update(text.as_bytes());
        hex::encode(h.finalize())
    }

    pub fn get(&self, model: &str, text: &str) -> Option<Arc<Vec<f32>>> {
        let key = Self::key(model, text);
        if let Some(v) = self.memory.read().unwrap().get(&key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(format!("{key}.f32"));
        let bytes = fs::read(path).ok()?;
        if bytes.is_empty() || bytes.len() % 4 != 0 {
            return None;
        }
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let values = Arc::new(values);
        self.memory.write().unwrap().insert(key, values.clone());
        Some(values)
    }

    pub fn put(&self, model: &str, text: &str, values: Vec<f32>) {
        let key = Self::key(model, text);
        if let Some(dir) = &self.dir {
            let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let write = fs::create_dir_all(dir).and_then(|_| {
                let tmp = dir.join(format!("{key}.f32.tmp"));
                fs::write(&tmp, &bytes)?;
                fs::rename(tmp, dir.join(format!("{key}.f32")))
            });
            if let Err(e) = write {
                log::warn!("embedding cache write failed: {e}");
            }
        }
        self.memory.write().unwrap().insert(key, Arc::new(values));
    }

    pub fn len(&self) -> usize {
        self.memory.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
