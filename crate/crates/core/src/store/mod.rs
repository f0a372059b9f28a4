//! Content-addressed record store.
//!
//! Layout under the store root:
//!
//! ```text
//! blobs/<uid>     raw data blob, uid = lowercase hex SHA-256 of its bytes
//! records.jsonl   one compact canonical JSON record per line, append-only
//! .lock           writer lock
//! ```
//!
//! Readers never take the lock. Writers hold an exclusive lock on `.lock`
//! for the whole read-check-append cycle, so concurrent annotation from
//! several processes (or threads) is serialized.

mod aggregate;
mod predicate;

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exporter::to_compact_string;
use crate::model::{is_uid, Map, Record, StructuredMetadata, Value};
use crate::parsers::parse_json;

pub use aggregate::{aggregate_records, group_key, GroupStats};
pub use predicate::{resolve_dotted, CmpOp, Predicate, PredicateSyntaxError};

pub const RECORDS_FILE: &str = "records.jsonl";
pub const BLOBS_DIR: &str = "blobs";
pub const LOCK_FILE: &str = ".lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("uid {uid} is already annotated with different metadata")]
    Conflict { uid: String },
    #[error("no blob with uid {0:?}")]
    NotFound(String),
    #[error("store corruption: {0}")]
    Corruption(String),
    #[error("store is locked by another writer")]
    Locked,
    #[error(transparent)]
    Predicate(#[from] PredicateSyntaxError),
    #[error("record {uid}: target {path:?} is {found}, not a number")]
    AggregationType {
        uid: String,
        path: String,
        found: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn uid_of(blob: &[u8]) -> String {
    hex::encode(Sha256::digest(blob))
}

/// Storage backend seam. Query and aggregation are defined over `records`.
pub trait RecordStore {
    fn annotate(&self, blob: &[u8], meta: &StructuredMetadata) -> Result<Record, StoreError>;

    /// All committed records in append order.
    fn records(&self) -> Result<Vec<Record>, StoreError>;

    fn fetch_blob(&self, uid: &str) -> Result<Vec<u8>, StoreError>;

    /// Records satisfying every predicate, ordered by `created_at` then uid.
    fn query(&self, predicates: &[Predicate]) -> Result<Vec<Record>, StoreError> {
        let mut out: Vec<Record> = self
            .records()?
            .into_iter()
            .filter(|r| predicates.iter().all(|p| p.matches(&r.metadata.body)))
            .collect();
        out.sort_by(|a, b| (&a.created_at, &a.uid).cmp(&(&b.created_at, &b.uid)));
        Ok(out)
    }

    fn aggregate(
        &self,
        predicates: &[Predicate],
        group_by: &str,
        target: &str,
    ) -> Result<std::collections::BTreeMap<String, GroupStats>, StoreError> {
        aggregate_records(&self.query(predicates)?, group_by, target)
    }
}

/// Result of scanning `records.jsonl`.
#[derive(Debug, Clone, Default)]
pub struct Scan {
    pub records: Vec<Record>,
    /// Byte length of the committed prefix.
    pub committed_len: u64,
    /// Bytes of an unterminated trailing line, if any.
    pub truncated_tail: Option<u64>,
}

#[derive(Debug, Clone)]
pub struct FileStore {
    root: PathBuf,
    wait: bool,
    recovered_tail: Option<u64>,
}

impl FileStore {
    /// Opens an existing store.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let blobs = root.join(BLOBS_DIR);
        let meta = fs::metadata(&blobs).map_err(io_err(&blobs))?;
        if !meta.is_dir() {
            return Err(StoreError::Corruption(format!("{} is not a directory", blobs.display())));
        }
        let mut store = Self {
            root,
            wait: true,
            recovered_tail: None,
        };
        store.recovered_tail = store.scan()?.truncated_tail;
        Ok(store)
    }

    /// Opens the store, creating an empty one if `root` has none.
    pub fn open_or_create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        let blobs = root.join(BLOBS_DIR);
        fs::create_dir_all(&blobs).map_err(io_err(&blobs))?;
        Self::open(root)
    }

    /// Whether writers block (`true`, default) or fail fast with
    /// [`StoreError::Locked`] while another writer holds the lock.
    pub fn with_wait(mut self, wait: bool) -> Self {
        self.wait = wait;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Size in bytes of the partial trailing line found when the store was
    /// opened; it is discarded by the next write.
    pub fn recovered_tail(&self) -> Option<u64> {
        self.recovered_tail
    }

    fn records_path(&self) -> PathBuf {
        self.root.join(RECORDS_FILE)
    }

    fn blob_path(&self, uid: &str) -> PathBuf {
        self.root.join(BLOBS_DIR).join(uid)
    }

    pub fn scan(&self) -> Result<Scan, StoreError> {
        let path = self.records_path();
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Scan::default()),
            Err(e) => return Err(io_err(&path)(e)),
        };
        let mut scan = Scan::default();
        let mut start = 0usize;
        let mut lineno = 0usize;
        while start < bytes.len() {
            let Some(end) = bytes[start..].iter().position(|&b| b == b'\n').map(|p| start + p) else {
                scan.truncated_tail = Some((bytes.len() - start) as u64);
                break;
            };
            lineno += 1;
            let line = &bytes[start..end];
            let record = parse_json(line)
                .map_err(|e| e.to_string())
                .and_then(|v| record_from_value(&v))
                .map_err(|e| StoreError::Corruption(format!("{RECORDS_FILE} line {lineno}: {e}")))?;
            scan.records.push(record);
            start = end + 1;
            scan.committed_len = start as u64;
        }
        Ok(scan)
    }

    fn lock(&self) -> Result<File, StoreError> {
        let path = self.root.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        if self.wait {
            file.lock().map_err(io_err(&path))?;
        } else {
            match file.try_lock() {
                Ok(()) => {}
                Err(fs::TryLockError::WouldBlock) => return Err(StoreError::Locked),
                Err(fs::TryLockError::Error(e)) => return Err(io_err(&path)(e)),
            }
        }
        Ok(file)
    }

    fn write_blob(&self, uid: &str, blob: &[u8]) -> Result<(), StoreError> {
        let path = self.blob_path(uid);
        if let Ok(existing) = fs::read(&path) {
            if uid_of(&existing) == uid {
                return Ok(());
            }
        }
        let tmp = self.root.join(BLOBS_DIR).join(format!(".{uid}.tmp"));
        let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(blob).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }
}

impl RecordStore for FileStore {
    fn annotate(&self, blob: &[u8], meta: &StructuredMetadata) -> Result<Record, StoreError> {
        let uid = uid_of(blob);
        let _guard = self.lock()?;
        let scan = self.scan()?;
        if let Some(existing) = scan.records.iter().find(|r| r.uid == uid) {
            return if existing.metadata == *meta {
                Ok(existing.clone())
            } else {
                Err(StoreError::Conflict { uid })
            };
        }
        self.write_blob(&uid, blob)?;

        let records = self.records_path();
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&records)
            .map_err(io_err(&records))?;
        if scan.truncated_tail.is_some() {
            file.set_len(scan.committed_len).map_err(io_err(&records))?;
        }
        let record = Record {
            blob_path: format!("{BLOBS_DIR}/{uid}"),
            uid,
            metadata: meta.clone(),
            created_at: Utc::now().to_rfc3339_opts(SecondsFormat::Micros, true),
        };
        let mut line = to_compact_string(&record_to_value(&record));
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(io_err(&records))?;
        file.sync_data().map_err(io_err(&records))?;
        Ok(record)
    }

    fn records(&self) -> Result<Vec<Record>, StoreError> {
        Ok(self.scan()?.records)
    }

    fn fetch_blob(&self, uid: &str) -> Result<Vec<u8>, StoreError> {
        if !is_uid(uid) {
            return Err(StoreError::NotFound(uid.to_string()));
        }
        let path = self.blob_path(uid);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(uid.to_string()))
            }
            Err(e) => return Err(io_err(&path)(e)),
        };
        let actual = uid_of(&bytes);
        if actual != uid {
            return Err(StoreError::Corruption(format!(
                "blob {uid} hashes to {actual}"
            )));
        }
        Ok(bytes)
    }
}

pub fn record_to_value(r: &Record) -> Value {
    let mut meta = Map::new();
    meta.insert("body".into(), r.metadata.body.clone());
    meta.insert("schema_id".into(), Value::Text(r.metadata.schema_id.clone()));
    let mut m = Map::new();
    m.insert("uid".into(), Value::Text(r.uid.clone()));
    m.insert("metadata".into(), Value::Map(meta));
    m.insert("blob_path".into(), Value::Text(r.blob_path.clone()));
    m.insert("created_at".into(), Value::Text(r.created_at.clone()));
    Value::Map(m)
}

pub fn record_from_value(v: &Value) -> Result<Record, String> {
    let text = |pointer: &str| -> Result<String, String> {
        match v.get(pointer) {
            Ok(Some(Value::Text(s))) => Ok(s.clone()),
            _ => Err(format!("missing or non-string field {pointer:?}")),
        }
    };
    let uid = text("uid")?;
    if !is_uid(&uid) {
        return Err(format!("malformed uid {uid:?}"));
    }
    let body = match v.get("metadata/body") {
        Ok(Some(b @ Value::Map(_))) => b.clone(),
        _ => return Err("missing object field \"metadata/body\"".into()),
    };
    Ok(Record {
        metadata: StructuredMetadata::new(body, text("metadata/schema_id")?),
        blob_path: text("blob_path")?,
        created_at: text("created_at")?,
        uid,
    })
}
