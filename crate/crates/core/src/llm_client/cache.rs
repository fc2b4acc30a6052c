use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use super::{FinishReason, LlmError};

/// One cached completion, stored as one JSONL line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub request_key: String,
    pub response_text: String,
    pub finish_reason: FinishReason,
}

/// Map from request key to response, optionally backed by an append-only
/// JSONL file. Reads are concurrent; writes are serialized. When a key
/// appears on several lines the last one wins.
pub struct ReplayCache {
    path: Option<PathBuf>,
    entries: RwLock<HashMap<String, CacheEntry>>,
    writer: Mutex<Option<File>>,
}

impl ReplayCache {
    pub fn in_memory() -> Self {
        ReplayCache {
            path: None,
            entries: RwLock::new(HashMap::new()),
            writer: Mutex::new(None),
        }
    }

    fn cache_err(path: &Path, message: impl ToString) -> LlmError {
        LlmError::Cache {
            path: path.display().to_string(),
            message: message.to_string(),
        }
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, CacheEntry>, LlmError> {
        let file = File::open(path).map_err(|e| Self::cache_err(path, e))?;
        let mut entries = HashMap::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Self::cache_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: CacheEntry = serde_json::from_str(&line)
                .map_err(|e| Self::cache_err(path, format!("line {}: {e}", idx + 1)))?;
            entries.insert(entry.request_key.clone(), entry);
        }
        Ok(entries)
    }

    /// Open an existing cache read-only. The file must exist.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(ReplayCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(Self::read_entries(path)?),
            writer: Mutex::new(None),
        })
    }

    /// Open a cache for recording, creating the file if needed. Existing
    /// entries are loaded and new ones are appended.
    pub fn open_for_append(path: &Path) -> Result<Self, LlmError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Self::cache_err(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Self::cache_err(path, e))?;
        Ok(ReplayCache {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(Self::read_entries(path)?),
            writer: Mutex::new(Some(file)),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheEntry> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn insert(&self, entry: CacheEntry) -> Result<(), LlmError> {
        let mut writer = self.writer.lock().expect("cache writer lock");
        if let (Some(file), Some(path)) = (writer.as_mut(), self.path.as_deref()) {
            let mut line = serde_json::to_string(&entry).map_err(|e| Self::cache_err(path, e))?;
            line.push('\n');
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|e| Self::cache_err(path, e))?;
        }
        self.entries
            .write()
            .expect("cache lock")
            .insert(entry.request_key.clone(), entry);
        Ok(())
    }
}
