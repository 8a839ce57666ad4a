//! Append-only response cache: one JSON record per line, keyed by
//! [`cache_key`](super::cache_key). The first record for a key wins on load.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::BackendResponse;
use crate::error::{Error, Result};
use crate::prompt::PromptInstance;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub key: String,
    pub request: serde_json::Value,
    pub response: BackendResponse,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

pub struct ResponseCache {
    path: PathBuf,
    entries: Mutex<HashMap<String, BackendResponse>>,
    writer: Mutex<File>,
}

impl ResponseCache {
    /// Opens (creating if needed) the cache at `path` and loads its records.
    /// Unparseable lines, such as a torn final write, are skipped.
    pub fn open(path: impl AsRef<Path>) -> Result<ResponseCache> {
        let path = path.as_ref().to_path_buf();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| Error::io(&path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheRecord>(&line) {
                    Ok(record) => {
                        entries.entry(record.key).or_insert(record.response);
                    }
                    Err(err) => tracing::warn!("{}:{}: skipping cache record: {err}", path.display(), i + 1),
                }
            }
        }
        let mut writer = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        // Start appends on a fresh line after a torn write.
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if bytes.last().is_some_and(|&b| b != b'\n') {
            writer.write_all(b"\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(ResponseCache {
            path,
            entries: Mutex::new(entries),
            writer: Mutex::new(writer),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<BackendResponse> {
        self.entries.lock().expect("cache lock").get(key).cloned()
    }

    pub fn put(&self, key: &str, prompt: &PromptInstance, model_name: &str, response: &BackendResponse) -> Result<()> {
        {
            let mut entries = self.entries.lock().expect("cache lock");
            if entries.contains_key(key) {
                return Ok(());
            }
            entries.insert(key.to_string(), response.clone());
        }
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let record = CacheRecord {
            key: key.to_string(),
            request: json!({
                "model": model_name,
                "mode": prompt.mode,
                "prompt": prompt.text,
                "options": prompt.option_strings,
            }),
            response: response.clone(),
            timestamp,
        };
        let mut line = serde_json::to_string(&record).expect("cache record serializes");
        line.push('\n');
        let mut writer = self.writer.lock().expect("cache writer lock");
        writer
            .write_all(line.as_bytes())
            .and_then(|_| writer.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}
