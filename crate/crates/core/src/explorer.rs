//! Enumerates a raw metadata collection and pairs files with rules.
//!
//! A collection is either a directory or a gzip-compressed tar archive.
//! Rules match base names only; nested directories are walked recursively.
//! Symlinks are never followed and hidden entries (leading `.`) are skipped
//! unless an exact-name rule names the file.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{self, Read};
use std::path::{Component, Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;
use walkdir::WalkDir;

use crate::model::RuleSet;

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("cannot read collection {path}: {message}")]
    CollectionIo { path: String, message: String },
    #[error("required rule {0:?} matched no file")]
    RuleUnmatched(String),
    #[error("file {file:?} matches several rules: {}", rules.join(", "))]
    AmbiguousMatch { file: String, rules: Vec<String> },
}

impl ExploreError {
    fn io(path: impl AsRef<Path>, err: impl std::fmt::Display) -> Self {
        ExploreError::CollectionIo {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollectionKind {
    Directory,
    TarGzArchive,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Collection {
    pub source: PathBuf,
    pub kind: CollectionKind,
}

impl Collection {
    pub fn directory(path: impl Into<PathBuf>) -> Self {
        Self {
            source: path.into(),
            kind: CollectionKind::Directory,
        }
    }

    pub fn archive(path: impl Into<PathBuf>) -> Self {
        Self {
            source: path.into(),
            kind: CollectionKind::TarGzArchive,
        }
    }

    /// Directories by metadata, archives by `.tgz` / `.tar.gz` extension.
    pub fn detect(path: impl Into<PathBuf>) -> Result<Self, ExploreError> {
        let path = path.into();
        let meta = std::fs::metadata(&path).map_err(|e| ExploreError::io(&path, e))?;
        if meta.is_dir() {
            return Ok(Self::directory(path));
        }
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.ends_with(".tgz") || name.ends_with(".tar.gz") {
            Ok(Self::archive(path))
        } else {
            Err(ExploreError::io(&path, "not a directory or .tgz/.tar.gz archive"))
        }
    }
}

/// One file to parse, and the rule that claimed it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct WorkItem {
    pub relative_path: String,
    pub rule: String,
    pub bytes_len: u64,
}

/// Work list plus the visible files no rule claimed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Exploration {
    pub items: Vec<WorkItem>,
    pub unmatched: Vec<String>,
}

struct Entry {
    path: String,
    len: u64,
}

pub fn explore(
    collection: &Collection,
    rules: &RuleSet,
    strict: bool,
) -> Result<Vec<WorkItem>, ExploreError> {
    explore_with_report(collection, rules, strict).map(|e| e.items)
}

pub fn explore_with_report(
    collection: &Collection,
    rules: &RuleSet,
    strict: bool,
) -> Result<Exploration, ExploreError> {
    let mut entries = match collection.kind {
        CollectionKind::Directory => list_directory(&collection.source)?,
        CollectionKind::TarGzArchive => list_archive(&collection.source)?,
    };
    entries.sort_by(|a, b| a.path.cmp(&b.path));

    let mut items = Vec::new();
    let mut unmatched = Vec::new();
    let mut claimed: HashMap<&str, usize> = HashMap::new();
    for entry in &entries {
        let (dir_hidden, base) = match entry.path.rsplit_once('/') {
            Some((dir, base)) => (dir.split('/').any(|c| c.starts_with('.')), base),
            None => (false, entry.path.as_str()),
        };
        if dir_hidden {
            continue;
        }
        let hidden = base.starts_with('.');
        let matching: Vec<_> = rules
            .rules()
            .iter()
            .filter(|r| if hidden { r.names_exactly(base) } else { r.matches(base) })
            .collect();
        let Some(winner) = matching.first() else {
            if !hidden {
                unmatched.push(entry.path.clone());
            }
            continue;
        };
        if strict && matching.len() > 1 {
            return Err(ExploreError::AmbiguousMatch {
                file: entry.path.clone(),
                rules: matching.iter().map(|r| r.name.clone()).collect(),
            });
        }
        *claimed.entry(winner.name.as_str()).or_default() += 1;
        items.push(WorkItem {
            relative_path: entry.path.clone(),
            rule: winner.name.clone(),
            bytes_len: entry.len,
        });
    }

    if let Some(rule) = rules
        .rules()
        .iter()
        .find(|r| r.required && !claimed.contains_key(r.name.as_str()))
    {
        return Err(ExploreError::RuleUnmatched(rule.name.clone()));
    }
    items.sort();
    Ok(Exploration { items, unmatched })
}

fn list_directory(root: &Path) -> Result<Vec<Entry>, ExploreError> {
    let meta = std::fs::metadata(root).map_err(|e| ExploreError::io(root, e))?;
    if !meta.is_dir() {
        return Err(ExploreError::io(root, "not a directory"));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).follow_links(false).min_depth(1) {
        let entry = entry.map_err(|e| ExploreError::io(root, e))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .map_err(|e| ExploreError::io(entry.path(), e))?;
        let path = relative_to_string(rel).ok_or_else(|| ExploreError::io(entry.path(), "path is not valid UTF-8"))?;
        let len = entry.metadata().map_err(|e| ExploreError::io(entry.path(), e))?.len();
        out.push(Entry { path, len });
    }
    Ok(out)
}

fn relative_to_string(rel: &Path) -> Option<String> {
    let mut parts = Vec::new();
    for comp in rel.components() {
        match comp {
            Component::Normal(s) => parts.push(s.to_str()?),
            Component::CurDir => {}
            _ => return None,
        }
    }
    (!parts.is_empty()).then(|| parts.join("/"))
}

/// Normalizes a tar member name: strips `./`, rejects absolute paths and `..`.
fn member_name(raw: &[u8]) -> Result<Option<String>, String> {
    let name = std::str::from_utf8(raw).map_err(|_| "member name is not valid UTF-8".to_string())?;
    if name.starts_with('/') {
        return Err(format!("absolute member name {name:?}"));
    }
    let mut parts = Vec::new();
    for seg in name.split('/') {
        match seg {
            "" | "." => {}
            ".." => return Err(format!("member name {name:?} escapes the archive root")),
            s => parts.push(s),
        }
    }
    Ok((!parts.is_empty()).then(|| parts.join("/")))
}

fn open_archive(path: &Path) -> Result<tar::Archive<GzDecoder<File>>, ExploreError> {
    let file = File::open(path).map_err(|e| ExploreError::io(path, e))?;
    Ok(tar::Archive::new(GzDecoder::new(file)))
}

/// Iterates regular-file members, handing each to `visit` with its reader.
fn for_each_member(
    path: &Path,
    mut visit: impl FnMut(String, &mut dyn Read, u64) -> Result<bool, ExploreError>,
) -> Result<(), ExploreError> {
    let mut archive = open_archive(path)?;
    for member in archive.entries().map_err(|e| ExploreError::io(path, e))? {
        let mut member = member.map_err(|e| ExploreError::io(path, e))?;
        if !member.header().entry_type().is_file() {
            continue;
        }
        let raw = member.path_bytes().into_owned();
        let Some(name) = member_name(&raw).map_err(|e| ExploreError::io(path, e))? else {
            continue;
        };
        let len = member.size();
        if !visit(name, &mut member, len)? {
            break;
        }
    }
    Ok(())
}

fn list_archive(path: &Path) -> Result<Vec<Entry>, ExploreError> {
    // A later member with the same name replaces an earlier one, as on extraction.
    let mut seen = BTreeMap::new();
    for_each_member(path, |name, _, len| {
        seen.insert(name, len);
        Ok(true)
    })?;
    Ok(seen.into_iter().map(|(path, len)| Entry { path, len }).collect())
}

/// Reads the full content of one work item.
pub fn read_item(collection: &Collection, item: &WorkItem) -> Result<Vec<u8>, ExploreError> {
    let mut all = read_items(collection, std::slice::from_ref(item))?;
    Ok(all.pop().unwrap_or_default())
}

/// Reads several items; archives are decompressed in a single pass.
/// Output order follows `items`.
pub fn read_items(collection: &Collection, items: &[WorkItem]) -> Result<Vec<Vec<u8>>, ExploreError> {
    match collection.kind {
        CollectionKind::Directory => items
            .iter()
            .map(|item| {
                let path = collection.source.join(&item.relative_path);
                let meta = std::fs::symlink_metadata(&path).map_err(|e| ExploreError::io(&path, e))?;
                if !meta.is_file() {
                    return Err(ExploreError::io(&path, "not a regular file"));
                }
                std::fs::read(&path).map_err(|e| ExploreError::io(&path, e))
            })
            .collect(),
        CollectionKind::TarGzArchive => {
            let mut wanted: HashMap<&str, usize> = HashMap::new();
            for (i, item) in items.iter().enumerate() {
                wanted.insert(item.relative_path.as_str(), i);
            }
            let mut out: Vec<Option<Vec<u8>>> = vec![None; items.len()];
            for_each_member(&collection.source, |name, reader, len| {
                if let Some(&i) = wanted.get(name.as_str()) {
                    let mut buf = Vec::with_capacity(len as usize);
                    reader
                        .read_to_end(&mut buf)
                        .map_err(|e| ExploreError::io(&collection.source, e))?;
                    out[i] = Some(buf);
                }
                Ok(true)
            })?;
            out.into_iter()
                .zip(items)
                .map(|(bytes, item)| {
                    bytes.ok_or_else(|| {
                        ExploreError::io(
                            &collection.source,
                            io::Error::new(io::ErrorKind::NotFound, format!("no member {:?}", item.relative_path)),
                        )
                    })
                })
                .collect()
        }
    }
}
