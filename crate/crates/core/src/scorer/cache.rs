use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::domain::{ScoreMode, ScoreRecord, Utterance};

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cache file {path}, line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

const FIELD_SEP: u8 = 0x1e;
const UTTERANCE_SEP: u8 = 0x1f;

/// Hex SHA-256 over `backend_id 0x1E mode 0x1E context 0x1E continuation`,
/// with context texts joined by 0x1F.
pub fn cache_digest(backend_id: &str, mode: ScoreMode, context: &[Utterance], continuation: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(backend_id.as_bytes());
    hasher.update([FIELD_SEP]);
    hasher.update(mode.as_str().as_bytes());
    hasher.update([FIELD_SEP]);
    for (i, u) in context.iter().enumerate() {
        if i > 0 {
            hasher.update([UTTERANCE_SEP]);
        }
        hasher.update(u.text().as_bytes());
    }
    hasher.update([FIELD_SEP]);
    hasher.update(continuation.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    digest: String,
    record: ScoreRecord,
}

/// Digest-keyed store of score records, optionally persisted as an
/// append-only JSON-lines file.
///
/// The first record stored under a digest wins; later inserts for the same
/// digest are ignored, so hits are always bit-identical to the original.
#[derive(Debug, Default)]
pub struct ScoreCache {
    entries: RwLock<HashMap<String, ScoreRecord>>,
    log: Option<(PathBuf, Mutex<File>)>,
}

impl ScoreCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists and appends new entries to it. A torn final
    /// line (from an interrupted writer) is ignored.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, CacheError> {
        let path = path.as_ref().to_path_buf();
        let io_err = |source| CacheError::Io { path: path.clone(), source };
        let mut entries = HashMap::new();
        let mut keep_len = None;
        if path.exists() {
            let content = std::fs::read_to_string(&path).map_err(io_err)?;
            let complete = content.ends_with('\n');
            let lines: Vec<&str> = content.split_terminator('\n').collect();
            let mut offset = 0;
            for (i, line) in lines.iter().enumerate() {
                let torn_tail = !complete && i + 1 == lines.len();
                if !line.trim().is_empty() {
                    match serde_json::from_str::<Entry>(line) {
                        Ok(entry) => {
                            entries.entry(entry.digest).or_insert(entry.record);
                        }
                        Err(e) if torn_tail => {
                            log::warn!("dropping torn cache entry at {}:{}: {e}", path.display(), i + 1);
                            keep_len = Some(offset as u64);
                            break;
                        }
                        Err(e) => return Err(CacheError::Corrupt { path, line: i + 1, message: e.to_string() }),
                    }
                }
                offset += line.len() + 1;
            }
        }
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut file = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        if let Some(len) = keep_len {
            file.set_len(len).map_err(io_err)?;
        } else if file.metadata().map_err(io_err)?.len() > 0 && !ends_with_newline(&path).map_err(io_err)? {
            file.write_all(b"\n").map_err(io_err)?;
        }
        Ok(Self { entries: RwLock::new(entries), log: Some((path, Mutex::new(file))) })
    }

    pub fn get(&self, digest: &str) -> Option<ScoreRecord> {
        self.entries.read().unwrap().get(digest).cloned()
    }

    /// Stores `record` unless `digest` is already present. Returns the record
    /// now associated with the digest.
    pub fn insert(&self, digest: &str, record: ScoreRecord) -> Result<ScoreRecord, CacheError> {
        let mut entries = self.entries.write().unwrap();
        if let Some(existing) = entries.get(digest) {
            return Ok(existing.clone());
        }
        if let Some((path, file)) = &self.log {
            let mut line = serde_json::to_string(&Entry { digest: digest.to_owned(), record: record.clone() })
                .expect("score records serialize");
            line.push('\n');
            let mut file = file.lock().unwrap();
            file.write_all(line.as_bytes())
                .and_then(|_| file.flush())
                .map_err(|source| CacheError::Io { path: path.clone(), source })?;
        }
        entries.insert(digest.to_owned(), record.clone());
        Ok(record)
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> Option<&Path> {
        self.log.as_ref().map(|(p, _)| p.as_path())
    }
}

fn ends_with_newline(path: &Path) -> std::io::Result<bool> {
    use std::io::{Read, Seek, SeekFrom};
    let mut f = File::open(path)?;
    f.seek(SeekFrom::End(-1))?;
    let mut b = [0u8; 1];
    f.read_exact(&mut b)?;
    Ok(b[0] == b'\n')
}
