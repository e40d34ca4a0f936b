use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{self, PersistError, RecordLog};
use super::{rank, require, MemoryError, SUMMARY_MAX_TOKENS};
use crate::gateway::{EmbeddingHandle, EmbeddingVector, Message, RoleClient};
use crate::prompts;

/// Where in a run an episode was produced.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Coordinates {
    pub trial: u32,
    pub attempt: u32,
    pub tick: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub task: String,
    pub context_snapshot: String,
    pub action_script: String,
    pub critic_message: String,
    pub embedding: EmbeddingVector,
    pub created_at: Coordinates,
}

/// An attempt offered to the store; only failures are accepted.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeDraft {
    pub task: String,
    pub context_snapshot: String,
    pub action_script: String,
    pub critic_message: String,
    pub success: bool,
    pub created_at: Coordinates,
}

impl Episode {
    pub fn embedding_text(task: &str, critic_message: &str, action_script: &str) -> String {
        format!("{task}\n{critic_message}\n{action_script}")
    }

    fn render(&self) -> String {
        format!(
            "Task: {}\nContext:\n{}\nCode:\n{}\nCritique: {}",
            self.task, self.context_snapshot, self.action_script, self.critic_message
        )
    }
}

pub struct EpisodicStore {
    embedder: EmbeddingHandle,
    episodes: Vec<Episode>,
    log: Option<RecordLog>,
}

impl std::fmt::Debug for EpisodicStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EpisodicStore")
            .field("episodes", &self.episodes.len())
            .finish()
    }
}

impl EpisodicStore {
    pub fn new(embedder: EmbeddingHandle) -> Self {
        Self {
            embedder,
            episodes: Vec::new(),
            log: None,
        }
    }

    /// Replay `path` (if present) and keep appending to it.
    pub fn open(path: &Path, embedder: EmbeddingHandle) -> Result<Self, PersistError> {
        let mut store = Self::load(path, embedder)?;
        store.log = Some(RecordLog::open(path)?);
        Ok(store)
    }

    /// Replay `path` without attaching it for writes.
    pub fn load(path: &Path, embedder: EmbeddingHandle) -> Result<Self, PersistError> {
        let episodes = log::read_records(path)?
            .into_iter()
            .map(|(_, e)| e)
            .collect();
        Ok(Self {
            embedder,
            episodes,
            log: None,
        })
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn insert(&mut self, draft: EpisodeDraft) -> Result<String, MemoryError> {
        if draft.success {
            return Err(MemoryError::SuccessEpisode);
        }
        require(&draft.task, "task")?;
        require(&draft.context_snapshot, "context_snapshot")?;
        require(&draft.action_script, "action_script")?;
        require(&draft.critic_message, "critic_message")?;
        let embedding = self.embedder.embed(&Episode::embedding_text(
            &draft.task,
            &draft.critic_message,
            &draft.action_script,
        ))?;
        let episode = Episode {
            episode_id: format!("ep-{:05}", self.episodes.len()),
            task: draft.task,
            context_snapshot: draft.context_snapshot,
            action_script: draft.action_script,
            critic_message: draft.critic_message,
            embedding,
            created_at: draft.created_at,
        };
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(&episode) {
                tracing::error!(error = %e, "episodic log append failed");
            }
        }
        let id = episode.episode_id.clone();
        self.episodes.push(episode);
        Ok(id)
    }

    /// The `k` episodes most similar to `task`.
    pub fn retrieve(&self, task: &str, k: usize) -> Result<Vec<Episode>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if self.episodes.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(task)?;
        Ok(rank(&query, self.episodes.iter().map(|e| &e.embedding), k)
            .into_iter()
            .map(|i| self.episodes[i].clone())
            .collect())
    }

    pub fn snapshot(&self) -> String {
        log::to_lines(&self.episodes)
    }

    pub fn from_snapshot(text: &str, embedder: EmbeddingHandle) -> Result<Self, serde_json::Error> {
        Ok(Self {
            embedder,
            episodes: log::parse_lines(text)?,
            log: None,
        })
    }

    pub fn write_snapshot(&self, log_path: &Path) -> Result<(), PersistError> {
        log::write_file(&log::snapshot_path(log_path), &self.snapshot())
    }
}

/// Summarize retrieved episodes with one backend call; on error, fall back
/// to a bullet list of tasks and critiques.
pub fn summarize(episodes: &[Episode], client: &RoleClient) -> Result<String, MemoryError> {
    if episodes.is_empty() {
        return Err(MemoryError::NothingToSummarize);
    }
    let combined: String = episodes
        .iter()
        .map(|e| format!("\n\n{}", e.render()))
        .collect();
    let response = client.call_with_limit(
        vec![
            Message::system(prompts::EPISODIC_SUMMARY_SYSTEM),
            Message::user(format!("{}{}", prompts::EPISODIC_SUMMARY_USER, combined)),
        ],
        SUMMARY_MAX_TOKENS,
    );
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "episodic summary failed, using fallback");
        return Ok(fallback_summary(episodes));
    }
    Ok(response.content)
}

pub(crate) fn fallback_summary(episodes: &[Episode]) -> String {
    episodes
        .iter()
        .map(|e| format!("- {}: {}", e.task, e.critic_message))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallRole, LocalHashEmbedder, ScriptedOracle};
    use std::sync::Arc;

    fn draft(task: &str, critic: &str, script: &str) -> EpisodeDraft {
        EpisodeDraft {
            task: task.into(),
            context_snapshot: "ctx".into(),
            action_script: script.into(),
            critic_message: critic.into(),
            success: false,
            created_at: Coordinates::default(),
        }
    }

    fn store() -> EpisodicStore {
        EpisodicStore::new(LocalHashEmbedder::handle())
    }

    fn oracle_cos(a: &[f32], b: &[f32]) -> f32 {
        let (mut d, mut x, mut y) = (0.0f32, 0.0f32, 0.0f32);
        for i in 0..a.len() {
            d += a[i] * b[i];
            x += a[i] * a[i];
            y += b[i] * b[i];
        }
        if x == 0.0 || y == 0.0 {
            0.0
        } else {
            d / (x.sqrt() * y.sqrt())
        }
    }

    /// Exhaustive ranking: repeatedly pick the best remaining, earliest on ties.
    fn oracle_top_k(query: &[f32], items: &[Vec<f32>], k: usize) -> Vec<usize> {
        let sims: Vec<f32> = items.iter().map(|v| oracle_cos(query, v)).collect();
        let mut taken = vec![false; items.len()];
        let mut out = Vec::new();
        for _ in 0..k.min(items.len()) {
            let mut best: Option<usize> = None;
            for i in 0..items.len() {
                if !taken[i] && best.is_none_or(|b| sims[i] > sims[b]) {
                    best = Some(i);
                }
            }
            taken[best.unwrap()] = true;
            out.push(best.unwrap());
        }
        out
    }

    #[test]
    fn failed_attempt_is_stored_and_success_rejected() {
        let mut s = store();
        let id = s
            .insert(draft("Mine 1 dirt", "no dirt collected", "mine stone"))
            .unwrap();
        assert_eq!(s.retrieve("Mine 1 dirt", 5).unwrap()[0].episode_id, id);
        let mut ok = draft("Mine 1 dirt", "done", "mine dirt");
        ok.success = true;
        assert_eq!(s.insert(ok), Err(MemoryError::SuccessEpisode));
        assert_eq!(
            s.insert(draft("", "x", "y")),
            Err(MemoryError::EmptyField("task"))
        );
    }

    #[test]
    fn hundred_inserts_have_unique_ids() {
        let mut s = store();
        let ids: std::collections::BTreeSet<String> = (0..100)
            .map(|i| {
                s.insert(draft(&format!("task {i}"), "failed", "mine dirt"))
                    .unwrap()
            })
            .collect();
        assert_eq!((s.len(), ids.len()), (100, 100));
    }

    #[test]
    fn empty_and_fewer_than_k() {
        let mut s = store();
        assert!(s.retrieve("anything", 5).unwrap().is_empty());
        assert_eq!(s.retrieve("anything", 0), Err(MemoryError::ZeroK));
        for t in ["Mine 1 dirt", "Craft furnace", "Mine 1 wood log"] {
            s.insert(draft(t, "failed", "explore")).unwrap();
        }
        assert_eq!(s.retrieve("mine dirt", 5).unwrap().len(), 3);
    }

    #[test]
    fn twenty_episode_top_five_matches_brute_force() {
        let tasks = [
            "Mine 1 dirt",
            "Mine 1 wood log",
            "Craft 1 wooden pickaxe",
            "Mine 3 stone",
            "Place 1 furnace",
            "Smelt 3 iron ingot",
            "Mine 1 dirt",
            "Craft 1 stone pickaxe",
            "Mine 3 iron ore",
            "Place 1 crafting table",
        ];
        let critics = [
            "no dirt collected",
            "resource unreachable at night",
            "station required: crafting_table",
            "tool required",
        ];
        let mut s = store();
        for i in 0..20 {
            s.insert(draft(
                tasks[i % tasks.len()],
                critics[i % critics.len()],
                "mine dirt",
            ))
            .unwrap();
        }
        let embedder = LocalHashEmbedder::default();
        use crate::gateway::Embedder;
        let items: Vec<Vec<f32>> = s
            .episodes()
            .iter()
            .map(|e| {
                embedder
                    .embed(&Episode::embedding_text(
                        &e.task,
                        &e.critic_message,
                        &e.action_script,
                    ))
                    .unwrap()
                    .values
            })
            .collect();
        for query in ["Mine 1 dirt", "craft a pickaxe at night", "iron"] {
            let q = embedder.embed(query).unwrap().values;
            let expected: Vec<String> = oracle_top_k(&q, &items, 5)
                .into_iter()
                .map(|i| s.episodes()[i].episode_id.clone())
                .collect();
            let got: Vec<String> = s
                .retrieve(query, 5)
                .unwrap()
                .into_iter()
                .map(|e| e.episode_id)
                .collect();
            assert_eq!(got, expected, "query {query}");
        }
    }

    #[test]
    fn summary_uses_fixed_prompt_pair() {
        let mut s = store();
        s.insert(draft("Mine 1 dirt", "no dirt collected", "mine stone"))
            .unwrap();
        let eps = s.retrieve("Mine 1 dirt", 5).unwrap();
        let oracle = Arc::new(ScriptedOracle::new("Summary: {{last_user}}"));
        let client = RoleClient::new(oracle.clone(), CallRole::BeliefFormer);
        let summary = summarize(&eps, &client).unwrap();
        assert!(summary.contains("no dirt collected"));
        let req = &oracle.call_log()[0];
        assert_eq!(req.system_prompt(), prompts::EPISODIC_SUMMARY_SYSTEM);
        assert!(req.last_user().starts_with(
            "Please summarize these episodes and why they failed:\n\nTask: Mine 1 dirt"
        ));
        assert_eq!(req.max_tokens, SUMMARY_MAX_TOKENS);
        assert_eq!(
            summarize(&[], &client),
            Err(MemoryError::NothingToSummarize)
        );
    }

    #[test]
    fn summary_fallback_lists_each_critique_once() {
        let mut s = store();
        s.insert(draft("Mine 1 dirt", "no dirt collected", "mine stone"))
            .unwrap();
        s.insert(draft(
            "Mine 1 wood log",
            "resource unreachable at night",
            "mine oak_log",
        ))
        .unwrap();
        let eps = s.retrieve("mine", 5).unwrap();
        let client = RoleClient::new(
            Arc::new(ScriptedOracle::failing("down")),
            CallRole::BeliefFormer,
        );
        let summary = summarize(&eps, &client).unwrap();
        for e in &eps {
            assert_eq!(summary.matches(e.critic_message.as_str()).count(), 1);
        }
    }

    #[test]
    fn log_and_snapshot_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(super::super::EPISODIC_LOG);
        let mut s = EpisodicStore::open(&path, LocalHashEmbedder::handle()).unwrap();
        for t in ["Mine 1 dirt", "Mine 1 wood log", "Mine 3 stone"] {
            s.insert(draft(t, "failed", "explore")).unwrap();
        }
        s.write_snapshot(&path).unwrap();
        let reopened = EpisodicStore::open(&path, LocalHashEmbedder::handle()).unwrap();
        let restored =
            EpisodicStore::from_snapshot(&s.snapshot(), LocalHashEmbedder::handle()).unwrap();
        for q in ["dirt", "wood", "stone pickaxe"] {
            assert_eq!(reopened.retrieve(q, 2).unwrap(), s.retrieve(q, 2).unwrap());
            assert_eq!(restored.retrieve(q, 2).unwrap(), s.retrieve(q, 2).unwrap());
        }
        assert_eq!(restored.snapshot(), s.snapshot());
    }
}
