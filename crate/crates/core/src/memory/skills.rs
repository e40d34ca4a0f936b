use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::log::{self, PersistError, RecordLog};
use super::{rank, require, MemoryError};
use crate::craftworld::parse_script;
use crate::gateway::{EmbeddingHandle, EmbeddingVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    pub description: String,
    pub script: String,
    pub embedding: EmbeddingVector,
    pub uses: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum SkillRecord {
    Insert(Skill),
    Use { name: String },
}

pub struct SkillLibrary {
    embedder: EmbeddingHandle,
    skills: Vec<Skill>,
    log: Option<RecordLog>,
}

impl std::fmt::Debug for SkillLibrary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkillLibrary")
            .field("skills", &self.skills.len())
            .finish()
    }
}

impl SkillLibrary {
    pub fn new(embedder: EmbeddingHandle) -> Self {
        Self {
            embedder,
            skills: Vec::new(),
            log: None,
        }
    }

    pub fn open(path: &Path, embedder: EmbeddingHandle) -> Result<Self, PersistError> {
        let mut lib = Self::load(path, embedder)?;
        lib.log = Some(RecordLog::open(path)?);
        Ok(lib)
    }

    /// Replay `path` without attaching it for writes.
    pub fn load(path: &Path, embedder: EmbeddingHandle) -> Result<Self, PersistError> {
        let mut lib = Self::new(embedder);
        for (line, record) in log::read_records::<SkillRecord>(path)? {
            match record {
                SkillRecord::Insert(skill) => lib.skills.push(skill),
                SkillRecord::Use { name } => match lib.skills.iter_mut().find(|s| s.name == name) {
                    Some(s) => s.uses += 1,
                    None => {
                        return Err(PersistError::Replay {
                            path: path.to_path_buf(),
                            line,
                            message: format!("use of unknown skill {name}"),
                        })
                    }
                },
            }
        }
        Ok(lib)
    }

    pub fn len(&self) -> usize {
        self.skills.len()
    }

    pub fn is_empty(&self) -> bool {
        self.skills.is_empty()
    }

    pub fn skills(&self) -> &[Skill] {
        &self.skills
    }

    pub fn contains(&self, name: &str) -> bool {
        self.skills.iter().any(|s| s.name == name)
    }

    fn record(&mut self, record: &SkillRecord) {
        if let Some(log) = &mut self.log {
            if let Err(e) = log.append(record) {
                tracing::error!(error = %e, "skill log append failed");
            }
        }
    }

    /// Add a skill whose script parses under the action grammar.
    pub fn insert(
        &mut self,
        name: &str,
        description: &str,
        script: &str,
    ) -> Result<(), MemoryError> {
        require(name, "name")?;
        require(description, "description")?;
        let parsed = parse_script(script).map_err(MemoryError::Parse)?;
        if self.contains(name) {
            return Err(MemoryError::DuplicateSkill(name.to_string()));
        }
        let skill = Skill {
            name: name.to_string(),
            description: description.to_string(),
            script: parsed.canonical(),
            embedding: self.embedder.embed(description)?,
            uses: 0,
        };
        self.record(&SkillRecord::Insert(skill.clone()));
        self.skills.push(skill);
        Ok(())
    }

    /// The `k` skills whose descriptions best match `task`; each returned
    /// skill's use count is incremented.
    pub fn retrieve(&mut self, task: &str, k: usize) -> Result<Vec<Skill>, MemoryError> {
        let ranked = self.rank(task, k)?;
        let mut out = Vec::with_capacity(ranked.len());
        for i in ranked {
            self.skills[i].uses += 1;
            let name = self.skills[i].name.clone();
            self.record(&SkillRecord::Use { name });
            out.push(self.skills[i].clone());
        }
        Ok(out)
    }

    /// Ranking without side effects.
    pub fn rank(&self, task: &str, k: usize) -> Result<Vec<usize>, MemoryError> {
        if k == 0 {
            return Err(MemoryError::ZeroK);
        }
        if self.skills.is_empty() {
            return Ok(Vec::new());
        }
        let query = self.embedder.embed(task)?;
        Ok(rank(&query, self.skills.iter().map(|s| &s.embedding), k))
    }

    pub fn names(&self) -> BTreeSet<&str> {
        self.skills.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn snapshot(&self) -> String {
        log::to_lines(&self.skills)
    }

    pub fn from_snapshot(text: &str, embedder: EmbeddingHandle) -> Result<Self, serde_json::Error> {
        Ok(Self {
            embedder,
            skills: log::parse_lines(text)?,
            log: None,
        })
    }

    pub fn write_snapshot(&self, log_path: &Path) -> Result<(), PersistError> {
        log::write_file(&log::snapshot_path(log_path), &self.snapshot())
    }
}
