//! Episodic, semantic and procedural memory.
//!
//! Each store is owned by one agent and can mirror every mutation to an
//! append-only line-delimited log. A compacted snapshot (one line per live
//! entry) can be written next to it.

mod episodic;
mod log;
mod semantic;
mod skills;

use std::path::Path;

use thiserror::Error;

use crate::craftworld::ParseError;
use crate::gateway::{EmbedError, EmbeddingHandle, EmbeddingVector};

pub use episodic::{
    summarize as summarize_episodes, Coordinates, Episode, EpisodeDraft, EpisodicStore,
};
pub use log::PersistError;
pub use semantic::{
    canonicalize_question, extract_answer, history as semantic_history, SemanticEntry,
    SemanticRevision, SemanticSource, SemanticStore,
};
pub use skills::{Skill, SkillLibrary};

/// Retrieval depth used when none is configured.
pub const DEFAULT_TOP_K: usize = 5;
/// Completion limit for episodic summaries.
pub const SUMMARY_MAX_TOKENS: u32 = 200;

pub const EPISODIC_LOG: &str = "episodic.log";
pub const SEMANTIC_LOG: &str = "semantic.log";
pub const SKILLS_LOG: &str = "skills.log";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("only failed attempts are stored as episodes")]
    SuccessEpisode,
    #[error("no episodes to summarize")]
    NothingToSummarize,
    #[error("skill script does not parse: {0}")]
    Parse(ParseError),
    #[error("a skill named `{0}` already exists")]
    DuplicateSkill(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("retrieval depth must be at least 1")]
    ZeroK,
}

/// Scores closer than this are a tie. Stored vectors are f32, so exact
/// equality would let rounding noise reorder equally relevant entries.
pub const SCORE_TIE_EPSILON: f64 = 1e-6;

fn cosine_f64(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.values.iter().zip(&b.values) {
        let (x, y) = (f64::from(*x), f64::from(*y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Indices of the `k` best candidates by cosine similarity to `query`,
/// highest first; tied scores keep insertion order.
pub(crate) fn rank<'a>(
    query: &EmbeddingVector,
    candidates: impl Iterator<Item = &'a EmbeddingVector>,
    k: usize,
) -> Vec<usize> {
    let mut scored: Vec<(usize, f64)> = candidates
        .enumerate()
        .map(|(i, e)| (i, cosine_f64(query, e)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Regroup runs of tied scores by insertion order.
    let mut start = 0;
    while start < scored.len() {
        let leader = scored[start].1;
        let end = start
            + scored[start..]
                .iter()
                .take_while(|(_, s)| leader - s < SCORE_TIE_EPSILON)
                .count();
        scored[start..end].sort_by_key(|(i, _)| *i);
        start = end;
    }
    scored.into_iter().take(k).map(|(i, _)| i).collect()
}

pub(crate) fn require(value: &str, field: &'static str) -> Result<(), MemoryError> {
    if value.trim().is_empty() {
        Err(MemoryError::EmptyField(field))
    } else {
        Ok(())
    }
}

/// A read-only copy of an agent's three stores.
#[derive(Debug, Clone, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MemoryDump {
    pub episodic: Vec<Episode>,
    pub semantic: Vec<SemanticEntry>,
    pub skills: Vec<Skill>,
}

impl MemoryDump {
    /// Read the three store logs in `dir` without modifying them.
    pub fn read_dir(dir: &Path, embedder: EmbeddingHandle) -> Result<Self, PersistError> {
        if !dir.is_dir() {
            return Err(PersistError::Io {
                path: dir.to_path_buf(),
                source: std::io::Error::new(std::io::ErrorKind::NotFound, "not a store directory"),
            });
        }
        let episodic = EpisodicStore::load(&dir.join(EPISODIC_LOG), embedder.clone())?;
        let semantic = SemanticStore::load(&dir.join(SEMANTIC_LOG))?;
        let skills = SkillLibrary::load(&dir.join(SKILLS_LOG), embedder)?;
        Ok(Self {
            episodic: episodic.episodes().to_vec(),
            semantic: semantic.entries().cloned().collect(),
            skills: skills.skills().to_vec(),
        })
    }
}
