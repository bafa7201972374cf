//! Append-only response cache.
//!
//! Each line of the cache file is one JSON object
//! `{"hash", "request", "response", "timestamp"}`. The hash covers the oracle
//! identity, template, question and context, so a rerun over the same inputs
//! is answered entirely from the file. Lines that fail to parse (for example a
//! write cut short by a crash) are ignored on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AnswerAttempt, Oracle, OracleError, OracleRequest};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheCounters {
    pub hits: u64,
    pub misses: u64,
}

impl CacheCounters {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    hash: String,
    request: OracleRequest,
    response: AnswerAttempt,
    timestamp: u64,
}

pub struct CachedOracle<O> {
    inner: O,
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, AnswerAttempt>>,
    writer: Mutex<Option<File>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

fn field(h: &mut Sha256, bytes: &[u8]) {
    h.update((bytes.len() as u64).to_le_bytes());
    h.update(bytes);
}

/// Content hash of a request as seen by the oracle named `identity`.
pub fn request_hash(identity: &str, request: &OracleRequest) -> String {
    let mut h = Sha256::new();
    field(&mut h, identity.as_bytes());
    field(&mut h, request.template.as_str().as_bytes());
    field(&mut h, request.question.as_bytes());
    match &request.context {
        None => h.update([0u8]),
        Some(c) => {
            h.update([1u8]);
            field(&mut h, c.as_bytes());
        }
    }
    hex::encode(h.finalize())
}

impl<O: Oracle> CachedOracle<O> {
    /// Cache held in memory only.
    pub fn in_memory(inner: O) -> Self {
        Self {
            inner,
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    /// Loads `path` if it exists. The file is created on the first miss.
    pub fn open(inner: O, path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.entry(entry.hash).or_insert(entry.response);
                    }
                    Err(e) => log::warn!("{}: ignoring cache line {}: {e}", path.display(), n + 1),
                }
            }
        }
        Ok(Self {
            path: Some(path.to_owned()),
            entries: RwLock::new(entries),
            ..Self::in_memory(inner)
        })
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }

    fn append(&self, line: &CacheLine) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let mut json = serde_json::to_vec(line)?;
        json.push(b'\n');
        let mut writer = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        if writer.is_none() {
            if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            *writer = Some(OpenOptions::new().create(true).append(true).open(path)?);
        }
        let file = writer.as_mut().expect("opened above");
        file.write_all(&json)?;
        file.flush()
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn generate(&self, request: &OracleRequest) -> Result<AnswerAttempt, OracleError> {
        let hash = request_hash(&self.inner.identity(), request);
        if let Some(hit) = self
            .entries
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(&hash)
        {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let attempt = self.inner.generate(request)?;

        let mut entries = self.entries.write().unwrap_or_else(|e| e.into_inner());
        if entries.contains_key(&hash) {
            // a concurrent miss already recorded this request
            return Ok(entries[&hash].clone());
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        self.append(&CacheLine {
            hash: hash.clone(),
            request: request.clone(),
            response: attempt.clone(),
            timestamp,
        })?;
        entries.insert(hash, attempt.clone());
        Ok(attempt)
    }

    fn identity(&self) -> String {
        self.inner.identity()
    }

    fn cache_counters(&self) -> Option<CacheCounters> {
        Some(CacheCounters {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        })
    }
}
