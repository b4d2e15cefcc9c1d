use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Backend, BackendError, BackendRequest, BackendResponse};

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    hash: String,
    request: BackendRequest,
    response: BackendResponse,
}

/// SHA-256 of the request's canonical JSON (object keys sorted).
pub fn request_hash(request: &BackendRequest) -> String {
    let value = serde_json::to_value(request).expect("request serializes");
    let mut canonical = String::new();
    write_canonical(&value, &mut canonical);
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// Compact JSON with object keys sorted at every level, whatever map type
/// serde_json was built with.
fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, key) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(key.clone()).to_string());
                out.push(':');
                write_canonical(&map[key], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        scalar => out.push_str(&scalar.to_string()),
    }
}

/// Wraps a live back end and appends every exchange to a JSONL store.
pub struct RecordingBackend {
    inner: Arc<dyn Backend>,
    store: Mutex<File>,
}

impl RecordingBackend {
    pub fn new(inner: Arc<dyn Backend>, path: &Path) -> Result<Self, BackendError> {
        let store = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| BackendError::Store(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend {
            inner,
            store: Mutex::new(store),
        })
    }
}

impl Backend for RecordingBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let response = self.inner.complete(request)?;
        let entry = Entry {
            hash: request_hash(request),
            request: request.clone(),
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| BackendError::Store(e.to_string()))?;
        let mut store = self.store.lock().unwrap_or_else(|p| p.into_inner());
        writeln!(store, "{line}").map_err(|e| BackendError::Store(e.to_string()))?;
        Ok(response)
    }
}

/// Serves responses from a recorded store; a miss is an error.
pub struct ReplayBackend {
    entries: HashMap<String, BackendResponse>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, BackendError> {
        let mut entries = HashMap::new();
        if path.exists() {
            let file = File::open(path).map_err(|e| BackendError::Store(format!("{}: {e}", path.display())))?;
            for (n, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(|e| BackendError::Store(e.to_string()))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: Entry = serde_json::from_str(&line)
                    .map_err(|e| BackendError::Store(format!("line {}: {e}", n + 1)))?;
                entries.entry(entry.hash).or_insert(entry.response);
            }
        }
        Ok(ReplayBackend { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let hash = request_hash(request);
        self.entries
            .get(&hash)
            .cloned()
            .ok_or(BackendError::ReplayMiss { hash })
    }
}
