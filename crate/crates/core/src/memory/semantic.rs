use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{self, PersistError, RecordLog};
use super::{require, MemoryError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticSource {
    SelfInference,
    Communication,
    Human,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticEntry {
    pub question: String,
    pub answer: String,
    pub source: SemanticSource,
    pub revision: u32,
}

/// One line of the semantic log; same shape as the entry it produced.
pub type SemanticRevision = SemanticEntry;

/// Trim, lowercase and collapse internal whitespace.
pub fn canonicalize_question(question: &str) -> String {
    question
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// When `line` mentions `question` (compared canonically), the text after
/// it with any leading "A:"/"Answer:" marker removed.
pub fn extract_answer(line: &str, question: &str) -> Option<String> {
    let needle: Vec<char> = canonicalize_question(question).chars().collect();
    if needle.is_empty() {
        return None;
    }
    // Lowercased, whitespace-collapsed characters paired with the byte
    // offset just past their source character in `line`.
    let mut lowered: Vec<(char, usize)> = Vec::new();
    let mut pending_space = false;
    for (offset, c) in line.char_indices() {
        let end = offset + c.len_utf8();
        if c.is_whitespace() {
            pending_space = !lowered.is_empty();
            continue;
        }
        if pending_space {
            lowered.push((' ', offset));
            pending_space = false;
        }
        for l in c.to_lowercase() {
            lowered.push((l, end));
        }
    }
    let hit = (0..lowered.len()).find(|&i| {
        i + needle.len() <= lowered.len()
            && needle
                .iter()
                .enumerate()
                .all(|(k, c)| lowered[i + k].0 == *c)
    })?;
    let end = lowered[hit + needle.len() - 1].1;
    let mut rest = line[end..]
        .trim_start_matches([' ', '\t', ':', '-', '?'])
        .trim();
    for marker in ["answer:", "a:"] {
        if rest.len() >= marker.len() && rest[..marker.len()].eq_ignore_ascii_case(marker) {
            rest = rest[marker.len()..].trim();
        }
    }
    let rest = rest.trim();
    (!rest.is_empty()).then(|| rest.to_string())
}

#[derive(Debug, Default)]
pub struct SemanticStore {
    entries: BTreeMap<String, SemanticEntry>,
    log: Option<RecordLog>,
}

impl SemanticStore {
    pub fn open(path: &Path) -> Result<Self, PersistError> {
        let mut store = Self::load(path)?;
        store.log = Some(RecordLog::open(path)?);
        Ok(store)
    }

    /// Replay `path` without attaching it for writes.
    pub fn load(path: &Path) -> Result<Self, PersistError> {
        let mut store = Self::default();
        for (line, rev) in log::read_records::<SemanticRevision>(path)? {
            let key = canonicalize_question(&rev.question);
            let expected = store.entries.get(&key).map_or(1, |e| e.revision + 1);
            if rev.revision != expected {
                return Err(PersistError::Replay {
                    path: path.to_path_buf(),
                    line,
                    message: format!(
                        "revision {} out of order, expected {expected}",
                        rev.revision
                    ),
                });
            }
            store.entries.insert(key, rev);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, question: &str) -> Option<&SemanticEntry> {
        self.entries.get(&canonicalize_question(question))
    }

    /// Insert or overwrite; last write wins regardless of source.
    pub fn put(
        &mut self,
        question: &str,
        answer: &str,
        source: SemanticSource,
    ) -> Result<SemanticEntry, MemoryError> {
        require(question, "question")?;
        require(answer, "answer")?;
        let key = canonicalize_question(question);
        let revision = self.entries.get(&key).map_or(1, |e| e.revision + 1);
        let entry = SemanticEntry {
            question: question.trim().to_string(),
            answer: answer.trim().to_string(),
            source,
            revision,
        };
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(&entry) {
                tracing::error!(error = %e, "semantic log append failed");
            }
        }
        self.entries.insert(key, entry.clone());
        Ok(entry)
    }

    pub fn entries(&self) -> impl Iterator<Item = &SemanticEntry> {
        self.entries.values()
    }

    pub fn snapshot(&self) -> String {
        log::to_lines(self.entries.values())
    }

    pub fn from_snapshot(text: &str) -> Result<Self, serde_json::Error> {
        let entries = log::parse_lines::<SemanticEntry>(text)?;
        Ok(Self {
            entries: entries
                .into_iter()
                .map(|e| (canonicalize_question(&e.question), e))
                .collect(),
            log: None,
        })
    }

    pub fn write_snapshot(&self, log_path: &Path) -> Result<(), PersistError> {
        log::write_file(&log::snapshot_path(log_path), &self.snapshot())
    }
}

/// (revision, answer) pairs for `question`, oldest first, from a log file.
pub fn history(path: &Path, question: &str) -> Result<Vec<(u32, String)>, PersistError> {
    let key = canonicalize_question(question);
    Ok(log::read_records::<SemanticRevision>(path)?
        .into_iter()
        .filter(|(_, r)| canonicalize_question(&r.question) == key)
        .map(|(_, r)| (r.revision, r.answer))
        .collect())
}
