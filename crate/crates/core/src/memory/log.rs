use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {source}")]
    Record {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {message}")]
    Replay {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// Append-only JSON-lines writer. Every record is flushed on write.
#[derive(Debug)]
pub(crate) struct RecordLog {
    path: PathBuf,
    file: File,
}

impl RecordLog {
    pub(crate) fn open(path: &Path) -> Result<Self, PersistError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| PersistError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub(crate) fn append<T: Serialize>(&mut self, record: &T) -> Result<(), PersistError> {
        let mut line = serde_json::to_string(record).expect("memory records serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .map_err(|source| PersistError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Read every record of a JSON-lines file; a missing file yields nothing.
pub(crate) fn read_records<T: DeserializeOwned>(
    path: &Path,
) -> Result<Vec<(usize, T)>, PersistError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(PersistError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| PersistError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| PersistError::Record {
            path: path.to_path_buf(),
            line: i + 1,
            source,
        })?;
        out.push((i + 1, record));
    }
    Ok(out)
}

pub(crate) fn parse_lines<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

pub(crate) fn to_lines<T: Serialize>(records: impl IntoIterator<Item = T>) -> String {
    records
        .into_iter()
        .map(|r| serde_json::to_string(&r).expect("memory records serialize") + "\n")
        .collect()
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), PersistError> {
    std::fs::write(path, text).map_err(|source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn snapshot_path(log_path: &Path) -> PathBuf {
    log_path.with_extension("snapshot")
}
