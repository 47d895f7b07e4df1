//! Append-only on-disk caches for chat responses and embeddings.
//!
//! Each cache is a JSON-lines file plus an in-memory index. Response records
//! carry a digest of their body; a record whose body fails to parse or
//! verify marks its key corrupt, which is treated as a miss and overwritten
//! by the next append. Later records win on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{complete, ChatBackend, ChatResponse, Embedder, GenerationParams, LlmError};
use crate::prompt::{Message, RenderedPrompt};

pub const RESPONSES_FILE: &str = "responses.jsonl";
pub const EMBEDDINGS_FILE: &str = "embeddings.jsonl";

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache record for key {0} is corrupt")]
    CacheCorrupt(String),
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CacheKey(pub String);

impl CacheKey {
    pub fn new(model: &str, messages: &[Message], params: &GenerationParams) -> Self {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            model: &'a str,
            messages: &'a [Message],
            params: &'a GenerationParams,
        }
        let material = serde_json::to_vec(&KeyMaterial {
            model,
            messages,
            params,
        })
        .expect("key material serializes");
        CacheKey(sha256_hex(&material))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Serialize, Deserialize)]
struct ResponseRecord {
    key: String,
    body: String,
    sha256: String,
}

#[derive(Debug, Clone)]
enum Slot {
    Stored(ChatResponse),
    Corrupt,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Lookup {
    Hit(ChatResponse),
    Miss,
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct CacheStats {
    pub entries: usize,
    pub corrupt_keys: usize,
    pub unreadable_lines: usize,
    pub records: usize,
    pub bytes: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CacheError + '_ {
    move |source| CacheError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open_append(path: &Path) -> Result<File, CacheError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn salvage_key(line: &str) -> Option<String> {
    let start = line.find("\"key\":\"")? + 7;
    let key: String = line[start..]
        .chars()
        .take_while(|c| c.is_ascii_hexdigit())
        .collect();
    (key.len() == 64).then_some(key)
}

pub struct ResponseCache {
    path: PathBuf,
    index: RwLock<HashMap<String, Slot>>,
    writer: Mutex<File>,
    unreadable: usize,
    records: usize,
}

impl ResponseCache {
    /// Opens (creating if needed) `dir/responses.jsonl`.
    pub fn open(dir: &Path) -> Result<Self, CacheError> {
        let path = dir.join(RESPONSES_FILE);
        let writer = open_append(&path)?;
        let mut index = HashMap::new();
        let (mut unreadable, mut records) = (0, 0);
        let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
        for line in reader.lines() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            records += 1;
            match serde_json::from_str::<ResponseRecord>(&line) {
                Ok(rec) => {
                    let slot = if sha256_hex(rec.body.as_bytes()) == rec.sha256 {
                        serde_json::from_str::<ChatResponse>(&rec.body)
                            .map(Slot::Stored)
                            .unwrap_or(Slot::Corrupt)
                    } else {
                        Slot::Corrupt
                    };
                    index.insert(rec.key, slot);
                }
                Err(_) => match salvage_key(&line) {
                    Some(key) => {
                        index.insert(key, Slot::Corrupt);
                    }
                    None => unreadable += 1,
                },
            }
        }
        Ok(ResponseCache {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(writer),
            unreadable,
            records,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn lookup(&self, key: &CacheKey) -> Lookup {
        match self
            .index
            .read()
            .expect("cache index lock")
            .get(key.as_str())
        {
            Some(Slot::Stored(r)) => Lookup::Hit(r.clone()),
            Some(Slot::Corrupt) => Lookup::Corrupt,
            None => Lookup::Miss,
        }
    }

    pub fn get(&self, key: &CacheKey) -> Result<Option<ChatResponse>, CacheError> {
        match self.lookup(key) {
            Lookup::Hit(r) => Ok(Some(r)),
            Lookup::Miss => Ok(None),
            Lookup::Corrupt => Err(CacheError::CacheCorrupt(key.0.clone())),
        }
    }

    pub fn put(&self, key: &CacheKey, response: &ChatResponse) -> Result<(), CacheError> {
        let body = serde_json::to_string(response).expect("response serializes");
        let rec = ResponseRecord {
            key: key.0.clone(),
            sha256: sha256_hex(body.as_bytes()),
            body,
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        {
            let mut w = self.writer.lock().expect("cache writer lock");
            writeln!(w, "{line}").map_err(io_err(&self.path))?;
            w.flush().map_err(io_err(&self.path))?;
        }
        self.index
            .write()
            .expect("cache index lock")
            .insert(key.0.clone(), Slot::Stored(response.clone()));
        Ok(())
    }

    pub fn stats(&self) -> CacheStats {
        let index = self.index.read().expect("cache index lock");
        let corrupt = index
            .values()
            .filter(|s| matches!(s, Slot::Corrupt))
            .count();
        CacheStats {
            entries: index.len() - corrupt,
            corrupt_keys: corrupt,
            unreadable_lines: self.unreadable,
            records: self.records,
            bytes: std::fs::metadata(&self.path).map(|m| m.len()).unwrap_or(0),
        }
    }

    /// Rewrites the file keeping one valid record per key.
    pub fn compact(dir: &Path) -> Result<CacheStats, CacheError> {
        let cache = ResponseCache::open(dir)?;
        let tmp = dir.join(format!("{RESPONSES_FILE}.tmp"));
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io_err(&tmp))?);
            let index = cache.index.read().expect("cache index lock");
            let mut keys: Vec<_> = index.keys().collect();
            keys.sort();
            for key in keys {
                if let Some(Slot::Stored(resp)) = index.get(key) {
                    let body = serde_json::to_string(resp).expect("response serializes");
                    let rec = ResponseRecord {
                        key: key.clone(),
                        sha256: sha256_hex(body.as_bytes()),
                        body,
                    };
                    writeln!(
                        w,
                        "{}",
                        serde_json::to_string(&rec).expect("record serializes")
                    )
                    .map_err(io_err(&tmp))?;
                }
            }
            w.flush().map_err(io_err(&tmp))?;
        }
        drop(cache);
        std::fs::rename(&tmp, dir.join(RESPONSES_FILE)).map_err(io_err(&tmp))?;
        Ok(ResponseCache::open(dir)?.stats())
    }
}

/// Serves identical requests from the cache. Corrupt records are bypassed
/// and overwritten with a fresh response.
pub fn cached_complete(
    prompt: &RenderedPrompt,
    params: &GenerationParams,
    backend: &dyn ChatBackend,
    cache: &ResponseCache,
) -> Result<ChatResponse, LlmError> {
    let key = CacheKey::new(backend.model_name(), &prompt.messages, params);
    if let Lookup::Hit(r) = cache.lookup(&key) {
        return Ok(r);
    }
    let resp = complete(prompt, params, backend)?;
    cache.put(&key, &resp)?;
    Ok(resp)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRecord {
    model: String,
    digest: String,
    vector: Vec<f64>,
}

/// Embeddings keyed by (model, text digest).
pub struct EmbeddingCache {
    path: PathBuf,
    index: RwLock<HashMap<(String, String), Vec<f64>>>,
    writer: Mutex<File>,
}

impl EmbeddingCache {
    pub fn open(dir: &Path) -> Result<Self, CacheError> {
        let path = dir.join(EMBEDDINGS_FILE);
        let writer = open_append(&path)?;
        let mut index = HashMap::new();
        let reader = BufReader::new(File::open(&path).map_err(io_err(&path))?);
        for line in reader.lines() {
            let line = line.map_err(io_err(&path))?;
            if let Ok(rec) = serde_json::from_str::<EmbeddingRecord>(&line) {
                index.insert((rec.model, rec.digest), rec.vector);
            }
        }
        Ok(EmbeddingCache {
            path,
            index: RwLock::new(index),
            writer: Mutex::new(writer),
        })
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("embedding index lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, model: &str, digest: &str) -> Option<Vec<f64>> {
        self.index
            .read()
            .expect("embedding index lock")
            .get(&(model.to_string(), digest.to_string()))
            .cloned()
    }

    fn put(&self, model: &str, digest: &str, vector: &[f64]) -> Result<(), CacheError> {
        let rec = EmbeddingRecord {
            model: model.into(),
            digest: digest.into(),
            vector: vector.to_vec(),
        };
        {
            let mut w = self.writer.lock().expect("embedding writer lock");
            writeln!(
                w,
                "{}",
                serde_json::to_string(&rec).expect("record serializes")
            )
            .map_err(io_err(&self.path))?;
            w.flush().map_err(io_err(&self.path))?;
        }
        self.index
            .write()
            .expect("embedding index lock")
            .insert((rec.model, rec.digest), rec.vector);
        Ok(())
    }
}

/// An embedder that consults an [`EmbeddingCache`] first and only sends
/// the misses to the inner embedder.
pub struct CachedEmbedder<'a> {
    pub inner: &'a dyn Embedder,
    pub cache: &'a EmbeddingCache,
}

impl Embedder for CachedEmbedder<'_> {
    fn model_name(&self) -> &str {
        self.inner.model_name()
    }

    fn embed_raw(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        let model = self.inner.model_name();
        let digests: Vec<String> = texts.iter().map(|t| sha256_hex(t.as_bytes())).collect();
        let mut out: Vec<Option<Vec<f64>>> =
            digests.iter().map(|d| self.cache.get(model, d)).collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        if !missing.is_empty() {
            let batch: Vec<String> = missing.iter().map(|&i| texts[i].clone()).collect();
            let fresh = self.inner.embed_raw(&batch)?;
            if fresh.len() != batch.len() {
                return Err(LlmError::MalformedResponse(format!(
                    "{} embeddings for {} inputs",
                    fresh.len(),
                    batch.len()
                )));
            }
            for (&i, v) in missing.iter().zip(fresh) {
                self.cache.put(model, &digests[i], &v)?;
                out[i] = Some(v);
            }
        }
        Ok(out.into_iter().map(|v| v.expect("filled above")).collect())
    }
}
