//! Append-only log of backend exchanges, keyed by request hash, so runs can
//! be resumed and replayed without re-querying the backend.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{InfillRequest, InfillResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub key: String,
    pub request: InfillRequest,
    pub response: InfillResponse,
}

/// sha256 of the request's canonical JSON.
pub fn request_key(req: &InfillRequest) -> String {
    let json = serde_json::to_vec(req).expect("request serializes");
    hex::encode(Sha256::digest(&json))
}

#[derive(Debug)]
pub struct TranscriptCache {
    entries: Mutex<HashMap<String, InfillResponse>>,
    sink: Option<Mutex<BufWriter<File>>>,
    path: Option<PathBuf>,
}

impl Default for TranscriptCache {
    fn default() -> Self {
        Self::in_memory()
    }
}

impl TranscriptCache {
    pub fn in_memory() -> Self {
        Self {
            entries: Mutex::new(HashMap::new()),
            sink: None,
            path: None,
        }
    }

    /// Opens (or creates) a JSONL transcript. A torn final line left by a
    /// crash is dropped and the file truncated back to the last full entry.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = HashMap::new();
        let mut good_len = 0u64;
        if path.exists() {
            let mut r = BufReader::new(File::open(path)?);
            let mut line = String::new();
            loop {
                line.clear();
                let n = r.read_line(&mut line)?;
                if n == 0 {
                    break;
                }
                if !line.ends_with('\n') {
                    log::warn!("{}: dropping torn final line", path.display());
                    break;
                }
                match serde_json::from_str::<TranscriptEntry>(line.trim_end()) {
                    Ok(e) => {
                        entries.insert(e.key, e.response);
                    }
                    Err(e) => {
                        return Err(std::io::Error::new(
                            std::io::ErrorKind::InvalidData,
                            format!("{}: corrupt transcript entry: {e}", path.display()),
                        ))
                    }
                }
                good_len += n as u64;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        if file.metadata()?.len() != good_len {
            file.set_len(good_len)?;
        }
        Ok(Self {
            entries: Mutex::new(entries),
            sink: Some(Mutex::new(BufWriter::new(file))),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn get(&self, key: &str) -> Option<InfillResponse> {
        self.entries.lock().expect("transcript lock").get(key).cloned()
    }

    /// Records an exchange; the line is flushed before returning.
    pub fn record(&self, key: &str, request: &InfillRequest, response: &InfillResponse) -> std::io::Result<()> {
        let mut entries = self.entries.lock().expect("transcript lock");
        if entries.contains_key(key) {
            return Ok(());
        }
        if let Some(sink) = &self.sink {
            let entry = TranscriptEntry {
                key: key.to_string(),
                request: request.clone(),
                response: response.clone(),
            };
            let mut line = serde_json::to_vec(&entry).map_err(std::io::Error::other)?;
            line.push(b'\n');
            let mut w = sink.lock().expect("transcript sink lock");
            w.write_all(&line)?;
            w.flush()?;
        }
        entries.insert(key.to_string(), response.clone());
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("transcript lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All entries of a transcript file, in write order.
pub fn read_transcript(path: &Path) -> std::io::Result<Vec<TranscriptEntry>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}
