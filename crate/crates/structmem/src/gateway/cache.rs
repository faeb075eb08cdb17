//! Persistent response cache: an append-only JSONL log keyed by request
//! hash, loaded fully at startup. Writes are serialized; reruns with a
//! warm cache replay responses without touching the network.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    key: String,
    model: String,
    response: String,
    created_at: u64,
}

#[derive(Debug, Default, Clone, Copy, Serialize)]
pub struct CacheStats {
    /// Entries present when the cache file was loaded.
    pub loaded_entries: u64,
    /// Lines that failed to parse at load time (tolerated, skipped).
    pub skipped_lines: u64,
}

pub struct ResponseCache {
    map: Mutex<HashMap<String, String>>,
    sink: Mutex<Option<File>>,
    path: Option<PathBuf>,
    stats: CacheStats,
}

impl ResponseCache {
    /// Opens (or creates) a cache file and loads every parseable line.
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let mut map = HashMap::new();
        let mut stats = CacheStats::default();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for line in reader.lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        map.insert(entry.key, entry.response);
                        stats.loaded_entries += 1;
                    }
                    Err(_) => stats.skipped_lines += 1,
                }
            }
        }
        let sink = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            map: Mutex::new(map),
            sink: Mutex::new(Some(sink)),
            path: Some(path),
            stats,
        })
    }

    /// Purely in-memory cache, used by tests and the scripted mock.
    pub fn in_memory() -> Self {
        Self {
            map: Mutex::new(HashMap::new()),
            sink: Mutex::new(None),
            path: None,
            stats: CacheStats::default(),
        }
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.map.lock().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: &str, model: &str, response: &str) -> std::io::Result<()> {
        self.map
            .lock()
            .unwrap()
            .insert(key.to_string(), response.to_string());
        let mut sink = self.sink.lock().unwrap();
        if let Some(file) = sink.as_mut() {
            let created_at = SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            let line = serde_json::to_string(&CacheLine {
                key: key.to_string(),
                model: model.to_string(),
                response: response.to_string(),
                created_at,
            })
            .expect("cache line serializes");
            file.write_all(line.as_bytes())?;
            file.write_all(b"\n")?;
            file.flush()?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }
}
