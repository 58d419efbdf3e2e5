//! JSONL stores, stage manifests and atomic file replacement.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PipelineError;

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to a sibling temp file, syncs it and renames it over
/// `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.{}.tmp", std::process::id(), TMP_SEQ.fetch_add(1, Ordering::Relaxed)));
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("record serializes");
    s.push('\n');
    s
}

pub fn to_jsonl<T: Serialize>(values: &[T]) -> Vec<u8> {
    values.iter().map(to_line).collect::<String>().into_bytes()
}

pub fn to_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s.into_bytes()
}

/// Every non-blank line of a JSONL file; a missing file is an error.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let file = File::open(path).map_err(|_| PipelineError::MissingInput(path.to_path_buf()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PipelineError::InvalidInput {
            path: path.to_path_buf(),
            reason: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

/// Like [`read_jsonl`] but an unset path reads as empty.
pub fn read_optional_jsonl<T: DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>, PipelineError> {
    match path {
        Some(p) => read_jsonl(p),
        None => Ok(Vec::new()),
    }
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = fs::read(path).map_err(|_| PipelineError::MissingInput(path.to_path_buf()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn now_secs() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Running,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
}

/// Durable record of a stage's progress. An id enters `completed` only
/// after its output lines are synced and the byte lengths in `committed`
/// cover them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub inputs: Vec<InputDigest>,
    pub output_dir: PathBuf,
    /// Appendable store file name to committed byte length.
    pub committed: BTreeMap<String, u64>,
    pub completed: Vec<String>,
    pub emitted: usize,
    pub quarantined: usize,
    pub skipped: usize,
    pub status: StageStatus,
    pub started_at: u64,
    pub finished_at: Option<u64>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Option<Self>, PipelineError> {
        match fs::read(path) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|e| PipelineError::InvalidInput {
                path: path.to_path_buf(),
                reason: e.to_string(),
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        write_atomic(path, &to_pretty(self))
    }
}

/// Append handle that syncs on every commit.
pub struct AppendStore {
    path: PathBuf,
    file: File,
    len: u64,
}

impl AppendStore {
    /// Opens `path` truncated to `committed` bytes, dropping uncommitted
    /// tails left by an interrupted run.
    pub fn open(path: &Path, committed: u64) -> Result<Self, PipelineError> {
        let file = OpenOptions::new().create(true).truncate(false).read(true).write(true).open(path)?;
        file.set_len(committed)?;
        let mut store = AppendStore {
            path: path.to_path_buf(),
            file,
            len: committed,
        };
        store.file.sync_all()?;
        use std::io::Seek;
        store.file.seek(std::io::SeekFrom::Start(committed))?;
        Ok(store)
    }

    pub fn append(&mut self, bytes: &[u8]) -> Result<(), PipelineError> {
        self.file.write_all(bytes)?;
        self.len += bytes.len() as u64;
        Ok(())
    }

    pub fn sync(&mut self) -> Result<u64, PipelineError> {
        self.file.sync_data()?;
        Ok(self.len)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// A parse or provider failure kept for inspection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuarantineEntry {
    pub stage: String,
    pub item_id: String,
    pub error: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw: Option<String>,
}
