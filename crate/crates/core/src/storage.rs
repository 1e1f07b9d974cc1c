//! On-disk state: one corpus snapshot and one index file per revision, plus
//! `manifest.json` naming the committed revision.
//!
//! A commit writes the revision's files first and swaps the manifest last, so
//! a crash at any point leaves the previous revision in place.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{parse_records, CorpusFormat, CorpusStore};
use crate::index::{IndexError, VectorIndex};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("storage io error at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("index file {path}: {source}")]
    Index { path: PathBuf, source: IndexError },
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("corpus snapshot {path}: {detail}")]
    Snapshot { path: PathBuf, detail: String },
    #[error("revision {revision} is inconsistent: {detail}")]
    Inconsistent { revision: u64, detail: String },
}

/// Writes `path` via a sibling temp file that is fsynced and renamed over the
/// target. The containing directory is fsynced afterwards.
pub fn write_atomic<F>(path: &Path, write: F) -> io::Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> io::Result<()>,
{
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "path has no file name"))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.flush()?;
        w.get_ref().sync_all()?;
        drop(w);
        fs::rename(&tmp, path)?;
        sync_dir(dir)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

#[cfg(unix)]
fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) -> io::Result<()> {
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub revision: u64,
    pub corpus: String,
    pub index: String,
    pub dim: usize,
    pub records: usize,
}

#[derive(Debug, Clone)]
pub struct DataDir {
    root: PathBuf,
}

impl DataDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST)
    }

    pub fn corpus_file(revision: u64) -> String {
        format!("corpus-{revision:08}.jsonl")
    }

    pub fn index_file(revision: u64) -> String {
        format!("index-{revision:08}.srvx")
    }

    pub fn index_path(&self, revision: u64) -> PathBuf {
        self.root.join(Self::index_file(revision))
    }

    pub fn corpus_path(&self, revision: u64) -> PathBuf {
        self.root.join(Self::corpus_file(revision))
    }

    fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StorageError + '_ {
        move |source| StorageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// `None` when nothing has been committed yet.
    pub fn manifest(&self) -> Result<Option<Manifest>, StorageError> {
        let path = self.manifest_path();
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Self::io_err(&path)(e)),
        };
        serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| StorageError::Manifest(e.to_string()))
    }

    /// Loads the committed revision. `None` when nothing has been committed.
    pub fn load(&self) -> Result<Option<(CorpusStore, VectorIndex)>, StorageError> {
        let Some(manifest) = self.manifest()? else {
            return Ok(None);
        };
        let index_path = self.root.join(&manifest.index);
        let index = VectorIndex::load(&index_path).map_err(|source| StorageError::Index {
            path: index_path.clone(),
            source,
        })?;
        let corpus_path = self.root.join(&manifest.corpus);
        let bytes = fs::read(&corpus_path).map_err(Self::io_err(&corpus_path))?;
        let parsed =
            parse_records(&bytes, CorpusFormat::Jsonl).map_err(|e| StorageError::Snapshot {
                path: corpus_path.clone(),
                detail: e.to_string(),
            })?;
        if let Some(rej) = parsed.rejections.first() {
            return Err(StorageError::Snapshot {
                path: corpus_path,
                detail: rej.to_string(),
            });
        }
        let store = CorpusStore::from_parts(parsed.records, manifest.revision);

        let inconsistent = |detail: String| StorageError::Inconsistent {
            revision: manifest.revision,
            detail,
        };
        if index.dim() != manifest.dim {
            return Err(inconsistent(format!(
                "manifest dim {} but index dim {}",
                manifest.dim,
                index.dim()
            )));
        }
        if store.len() != manifest.records || index.len() != store.len() {
            return Err(inconsistent(format!(
                "manifest lists {} records, corpus has {}, index has {}",
                manifest.records,
                store.len(),
                index.len()
            )));
        }
        if let Some(missing) = store.records().find(|r| !index.contains(&r.pmid)) {
            return Err(inconsistent(format!("pmid {} has no vector", missing.pmid)));
        }
        Ok(Some((store, index)))
    }

    /// Persists `store` and `index` as revision `store.revision()`.
    pub fn commit(
        &self,
        store: &CorpusStore,
        index: &VectorIndex,
    ) -> Result<Manifest, StorageError> {
        fs::create_dir_all(&self.root).map_err(Self::io_err(&self.root))?;
        let revision = store.revision();
        let previous = self.manifest()?;

        let corpus_path = self.corpus_path(revision);
        write_atomic(&corpus_path, |w| {
            for record in store.records() {
                serde_json::to_writer(&mut *w, record)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })
        .map_err(Self::io_err(&corpus_path))?;

        let index_path = self.index_path(revision);
        index
            .save(&index_path)
            .map_err(|source| StorageError::Index {
                path: index_path.clone(),
                source,
            })?;

        let manifest = Manifest {
            revision,
            corpus: Self::corpus_file(revision),
            index: Self::index_file(revision),
            dim: index.dim(),
            records: store.len(),
        };
        let manifest_path = self.manifest_path();
        write_atomic(&manifest_path, |w| {
            serde_json::to_writer_pretty(&mut *w, &manifest)?;
            w.write_all(b"\n")
        })
        .map_err(Self::io_err(&manifest_path))?;

        // keep the previous revision for rollback, drop anything older
        if let Some(prev) = previous {
            self.prune(prev.revision);
        }
        Ok(manifest)
    }

    fn prune(&self, keep_from: u64) {
        let Ok(entries) = fs::read_dir(&self.root) else {
            return;
        };
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            let rev = name
                .strip_prefix("index-")
                .and_then(|s| s.strip_suffix(".srvx"))
                .or_else(|| {
                    name.strip_prefix("corpus-")
                        .and_then(|s| s.strip_suffix(".jsonl"))
                })
                .and_then(|s| s.parse::<u64>().ok());
            if rev.is_some_and(|rev| rev < keep_from) {
                let _ = fs::remove_file(entry.path());
            }
        }
    }
}
