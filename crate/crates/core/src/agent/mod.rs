//! The per-agent control loop: context assembly, action generation,
//! judging, memory commits and the act/talk schedule.

mod curriculum;
mod trial;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{
    form_perception_beliefs, form_task_beliefs, integrate_interaction_beliefs,
    render_belief_context, update_partner_model, BeliefSet, Percept,
};
use crate::comm::{
    compose_reply, take_perspective, ChatMessage, ChatTranscript, CommError, EventBus, Participant,
    SessionEvent,
};
use crate::craftworld::{
    judge, parse_script, CriticVerdict, ExecutionTrace, TaskSpec, WorldState, GRAMMAR_REMINDER,
};
use crate::gateway::{EmbeddingHandle, Message, RoleClient};
use crate::memory::{
    extract_answer, summarize_episodes, Coordinates, EpisodeDraft, EpisodicStore, MemoryDump,
    SemanticSource, SemanticStore, SkillLibrary, DEFAULT_TOP_K,
};
use crate::prompts;

pub use curriculum::{
    run_curriculum, CurriculumRecord, MilestoneRecord, TaskOutcome, DEFAULT_BUDGET,
};
pub use trial::{run_trial, AttemptRecord, Outcome, ScheduleStep, TrialRecord, TrialSettings};

/// Attempts per trial when not configured.
pub const DEFAULT_MAX_ACTIONS: u32 = 4;
/// Token budget for the rendered belief section.
pub const DEFAULT_BELIEF_BUDGET: usize = 600;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Novice,
    Expert,
    Peer,
    HumanExpert,
}

/// Feature switches. Each one gates a fixed set of prompt sections and
/// backend calls and nothing else.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Flags {
    pub perspective_taking: bool,
    pub structured_tom: bool,
    pub episodic_memory: bool,
    pub semantic_memory: bool,
    pub flexible_comm: bool,
    /// Ask the critic backend for the verdict, falling back to the rules.
    pub llm_critic: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            perspective_taking: true,
            structured_tom: true,
            episodic_memory: true,
            semantic_memory: true,
            flexible_comm: false,
            llm_critic: false,
        }
    }
}

/// Where communication rounds go relative to failed attempts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommPlacement {
    /// Between attempts only: no round after the final attempt.
    #[default]
    Interleaved,
    /// After every failed attempt, the final one included.
    Appended,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub agent_id: String,
    pub role: AgentRole,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default = "default_max_actions")]
    pub max_actions_per_trial: u32,
    #[serde(default)]
    pub comm_placement: CommPlacement,
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    #[serde(default = "default_belief_budget")]
    pub belief_budget: usize,
}

fn default_max_actions() -> u32 {
    DEFAULT_MAX_ACTIONS
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_belief_budget() -> usize {
    DEFAULT_BELIEF_BUDGET
}

impl AgentConfig {
    pub fn new(agent_id: impl Into<String>, role: AgentRole) -> Self {
        Self {
            agent_id: agent_id.into(),
            role,
            flags: Flags::default(),
            max_actions_per_trial: DEFAULT_MAX_ACTIONS,
            comm_placement: CommPlacement::default(),
            top_k: DEFAULT_TOP_K,
            belief_budget: DEFAULT_BELIEF_BUDGET,
        }
    }

    pub fn with_flags(mut self, flags: Flags) -> Self {
        self.flags = flags;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("max_actions_per_trial must be at least 1")]
    NoActions,
    #[error("a human expert has no actor backend")]
    HumanWithActor,
    #[error("agent {0} has no actor backend")]
    NoActor(String),
    #[error("comm_rounds is {0} but no partner was given")]
    MissingPartner(u32),
    #[error("top_k and belief_budget must be positive")]
    ZeroLimit,
    #[error("curriculum budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    World(#[from] crate::craftworld::WorldError),
}

/// Per-role backend bindings; roles share no mutable state.
#[derive(Debug, Clone)]
pub struct Backends {
    pub actor: Option<RoleClient>,
    pub critic: Option<RoleClient>,
    pub belief_former: RoleClient,
    pub conversationalist: RoleClient,
}

pub struct Agent {
    pub config: AgentConfig,
    pub backends: Backends,
    pub beliefs: BeliefSet,
    pub episodic: EpisodicStore,
    pub semantic: SemanticStore,
    pub skills: SkillLibrary,
    current_task: Option<TaskSpec>,
    coordinates: Coordinates,
    bus: Option<EventBus>,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

/// Section headers of the action context, in order.
pub mod sections {
    pub const TASK: &str = "Task:";
    pub const BELIEFS: &str = "Beliefs:";
    pub const KNOWLEDGE: &str = "Knowledge:";
    pub const PAST_FAILURES: &str = "Past failures:";
    pub const SKILLS: &str = "Skills:";
    pub const OBSERVATION: &str = "Observation:";
    pub const FEEDBACK: &str = "Feedback:";
}

/// First fenced block of a completion, or the whole text.
pub fn extract_script(completion: &str) -> String {
    let mut inside = false;
    let mut block = Vec::new();
    for line in completion.lines() {
        if line.trim_start().starts_with("```") {
            if inside {
                return block.join("\n");
            }
            inside = true;
            continue;
        }
        if inside {
            block.push(line);
        }
    }
    if inside {
        block.join("\n")
    } else {
        completion.trim().to_string()
    }
}

/// Deterministic skill name from a task name and attempt number.
pub fn skill_slug(task_name: &str, attempt: u32) -> String {
    let mut slug = String::new();
    for c in task_name.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
        } else if !slug.ends_with('_') && !slug.is_empty() {
            slug.push('_');
        }
    }
    format!("{}_attempt{attempt}", slug.trim_end_matches('_'))
}

impl Agent {
    pub fn new(
        config: AgentConfig,
        backends: Backends,
        embedder: EmbeddingHandle,
    ) -> Result<Self, AgentError> {
        Self::with_stores(
            config,
            backends,
            EpisodicStore::new(embedder.clone()),
            SemanticStore::default(),
            SkillLibrary::new(embedder),
        )
    }

    pub fn with_stores(
        config: AgentConfig,
        backends: Backends,
        episodic: EpisodicStore,
        semantic: SemanticStore,
        skills: SkillLibrary,
    ) -> Result<Self, AgentError> {
        if config.max_actions_per_trial == 0 {
            return Err(AgentError::NoActions);
        }
        if config.top_k == 0 || config.belief_budget == 0 {
            return Err(AgentError::ZeroLimit);
        }
        if config.role == AgentRole::HumanExpert && backends.actor.is_some() {
            return Err(AgentError::HumanWithActor);
        }
        Ok(Self {
            config,
            backends,
            beliefs: BeliefSet::default(),
            episodic,
            semantic,
            skills,
            current_task: None,
            coordinates: Coordinates::default(),
            bus: None,
        })
    }

    pub fn with_bus(mut self, bus: EventBus) -> Self {
        self.bus = Some(bus);
        self
    }

    pub fn set_bus(&mut self, bus: Option<EventBus>) {
        self.bus = bus;
    }

    pub fn id(&self) -> &str {
        &self.config.agent_id
    }

    pub fn flags(&self) -> Flags {
        self.config.flags
    }

    fn publish(&self, event: SessionEvent) {
        if let Some(bus) = &self.bus {
            bus.publish(event);
        }
    }

    pub fn memory_dump(&self) -> MemoryDump {
        MemoryDump {
            episodic: self.episodic.episodes().to_vec(),
            semantic: self.semantic.entries().cloned().collect(),
            skills: self.skills.skills().to_vec(),
        }
    }

    fn publish_state(&self) {
        if self.bus.is_some() {
            self.publish(SessionEvent::Beliefs {
                agent_id: self.id().to_string(),
                beliefs: self.beliefs.clone(),
            });
            self.publish(SessionEvent::Memory {
                agent_id: self.id().to_string(),
                memory: self.memory_dump(),
            });
        }
    }

    /// Refresh perception and task beliefs before acting.
    pub fn refresh_beliefs(&mut self, task: &TaskSpec, percept: &Percept) {
        let perception = form_perception_beliefs(percept, &self.backends.belief_former);
        self.beliefs.set_perception(perception);
        let semantic = self.config.flags.semantic_memory.then_some(&self.semantic);
        let had_entry = semantic.is_some_and(|s| s.get(&task.canonical_question).is_some());
        match form_task_beliefs(task, semantic, &self.backends.belief_former) {
            Ok(beliefs) => {
                for belief in beliefs {
                    if self.config.flags.semantic_memory && !had_entry {
                        if let Err(e) = self.semantic.put(
                            &belief.question,
                            &belief.answer,
                            SemanticSource::SelfInference,
                        ) {
                            tracing::warn!(error = %e, "task belief not stored");
                        }
                    }
                    self.beliefs.upsert_task(belief);
                }
            }
            Err(e) => tracing::warn!(error = %e, "task beliefs skipped"),
        }
    }

    /// The action prompt body, sections in fixed order.
    pub fn assemble_context(&mut self, task: &TaskSpec, percept: &Percept) -> String {
        let mut parts = vec![format!("{} {}", sections::TASK, task.name)];
        let beliefs = render_belief_context(&self.beliefs, self.config.belief_budget);
        if !beliefs.is_empty() {
            parts.push(format!("{}\n{beliefs}", sections::BELIEFS));
        }
        if self.config.flags.semantic_memory {
            if let Some(entry) = self.semantic.get(&task.canonical_question) {
                parts.push(format!(
                    "{}\nQ: {}\nA: {}",
                    sections::KNOWLEDGE,
                    entry.question,
                    entry.answer
                ));
            }
        }
        if self.config.flags.episodic_memory && !self.episodic.is_empty() {
            match self.episodic.retrieve(&task.name, self.config.top_k) {
                Ok(episodes) if !episodes.is_empty() => {
                    let summary = summarize_episodes(&episodes, &self.backends.belief_former)
                        .expect("retrieved episodes are non-empty");
                    parts.push(format!("{}\n{summary}", sections::PAST_FAILURES));
                }
                Ok(_) => {}
                Err(e) => tracing::warn!(error = %e, "episodic retrieval failed"),
            }
        }
        match self.skills.retrieve(&task.name, self.config.top_k) {
            Ok(skills) if !skills.is_empty() => {
                let listed: Vec<String> = skills
                    .iter()
                    .map(|s| format!("- {}: {}\n```\n{}\n```", s.name, s.description, s.script))
                    .collect();
                parts.push(format!("{}\n{}", sections::SKILLS, listed.join("\n")));
            }
            Ok(_) => {}
            Err(e) => tracing::warn!(error = %e, "skill retrieval failed"),
        }
        let mut observation = percept.clone();
        let feedback = observation.last_feedback.take();
        parts.push(format!(
            "{}\n{}",
            sections::OBSERVATION,
            observation.render()
        ));
        if let Some(fb) = feedback {
            parts.push(format!("{} {fb}", sections::FEEDBACK));
        }
        parts.push(GRAMMAR_REMINDER.to_string());
        parts.join("\n\n")
    }

    fn llm_verdict(
        &self,
        task: &TaskSpec,
        trace: &ExecutionTrace,
        rule: &CriticVerdict,
    ) -> CriticVerdict {
        let Some(critic) = self
            .backends
            .critic
            .as_ref()
            .filter(|_| self.config.flags.llm_critic)
        else {
            return rule.clone();
        };
        let steps: Vec<String> = trace
            .steps
            .iter()
            .map(|s| match &s.failure {
                Some(f) => format!("{}: failed ({f})", s.primitive),
                None => format!("{}: ok", s.primitive),
            })
            .collect();
        let response = critic.call(vec![
            Message::system(prompts::LLM_CRITIC),
            Message::user(format!("Task: {}\nSteps:\n{}", task.name, steps.join("\n"))),
        ]);
        #[derive(Deserialize)]
        struct Reply {
            success: bool,
            critique: String,
        }
        match serde_json::from_str::<Reply>(response.content.trim()) {
            Ok(r) if !response.is_error() => CriticVerdict {
                success: r.success,
                message: r.critique,
                inventory_delta: rule.inventory_delta.clone(),
            },
            _ => {
                tracing::warn!("critic reply unusable, keeping rule verdict");
                rule.clone()
            }
        }
    }

    /// One actor call, parse, execute and judge. Returns the record and the
    /// world after the attempt.
    pub fn attempt_action(
        &mut self,
        world: &WorldState,
        task: &TaskSpec,
        trial: u32,
        attempt: u32,
    ) -> Result<(AttemptRecord, WorldState), AgentError> {
        let actor = self
            .backends
            .actor
            .clone()
            .ok_or_else(|| AgentError::NoActor(self.id().to_string()))?;
        self.current_task = Some(task.clone());
        let agent_id = self.id().to_string();
        let percept = world.snapshot_percept(&agent_id)?;
        self.refresh_beliefs(task, &percept);
        let context = self.assemble_context(task, &percept);
        let tick_before = world.tick;
        self.coordinates = Coordinates {
            trial,
            attempt,
            tick: tick_before,
        };
        let response = actor.call(vec![
            Message::system(prompts::ACTOR_SYSTEM),
            Message::user(context.clone()),
        ]);

        let mut record = AttemptRecord {
            attempt,
            context,
            completion: None,
            script: None,
            parse_error: None,
            trace: None,
            verdict: CriticVerdict::failure(""),
            tick_before,
            tick_after: tick_before,
            outage: false,
        };
        let mut next = world.clone();
        if response.is_error() {
            record.outage = true;
            record.verdict =
                CriticVerdict::failure(format!("Action generation failed: {}", response.content));
        } else {
            record.completion = Some(response.content.clone());
            let source = extract_script(&response.content);
            match parse_script(&source) {
                Err(e) => {
                    record.parse_error = Some(e.to_string());
                    record.verdict = CriticVerdict::failure(format!(
                        "Script error at {e}. Nothing was executed."
                    ));
                    record.script = Some(source);
                }
                Ok(script) => {
                    let (after, trace) = world.execute(&agent_id, &script)?;
                    let rule = judge(world, &after, &agent_id, task, &trace)?;
                    record.verdict = self.llm_verdict(task, &trace, &rule);
                    record.script = Some(script.canonical());
                    record.trace = Some(trace);
                    next = after;
                }
            }
        }
        next.set_feedback(&agent_id, record.verdict.message.clone())?;
        record.tick_after = next.tick;
        self.commit(task, &record, trial, attempt);
        self.publish(SessionEvent::Attempt {
            agent_id: agent_id.clone(),
            attempt,
            tick: record.tick_after,
            success: record.verdict.success,
            feedback: record.verdict.message.clone(),
        });
        self.publish_state();
        Ok((record, next))
    }

    fn commit(&mut self, task: &TaskSpec, record: &AttemptRecord, trial: u32, attempt: u32) {
        let Some(script) = record.script.as_ref().filter(|s| !s.trim().is_empty()) else {
            return;
        };
        if record.verdict.success {
            let name = skill_slug(&task.name, attempt);
            if self.skills.contains(&name) {
                return;
            }
            let gloss = parse_script(script).map(|s| s.gloss()).unwrap_or_default();
            let description = format!("{}: {gloss}", task.name);
            if let Err(e) = self.skills.insert(&name, &description, script) {
                tracing::warn!(error = %e, "skill not committed");
            }
        } else if self.config.flags.episodic_memory {
            let draft = EpisodeDraft {
                task: task.name.clone(),
                context_snapshot: record.context.clone(),
                action_script: script.clone(),
                critic_message: record.verdict.message.clone(),
                success: false,
                created_at: Coordinates {
                    trial,
                    attempt,
                    tick: record.tick_before,
                },
            };
            if let Err(e) = self.episodic.insert(draft) {
                tracing::warn!(error = %e, "episode not committed");
            }
        }
    }

    /// Where the agent currently is in its run.
    pub fn coordinates(&self) -> Coordinates {
        self.coordinates
    }
}

impl Participant for Agent {
    fn id(&self) -> &str {
        &self.config.agent_id
    }

    fn take_turn(
        &mut self,
        transcript: &mut ChatTranscript,
        tick: u64,
    ) -> Result<ChatMessage, CommError> {
        let me = self.id().to_string();
        let partner_id = if transcript.participants.0 == me {
            transcript.participants.1.clone()
        } else {
            transcript.participants.0.clone()
        };
        let perspective =
            if self.config.flags.perspective_taking && transcript.messages_from(&partner_id) > 0 {
                let model = self
                    .beliefs
                    .partner_entry(&partner_id, self.config.flags.structured_tom)
                    .clone();
                take_perspective(&me, &model, transcript, &self.backends.conversationalist).ok()
            } else {
                None
            };
        compose_reply(
            &me,
            transcript,
            &self.beliefs,
            perspective.as_deref(),
            &self.backends.conversationalist,
            self.config.belief_budget,
            tick,
        )
    }

    fn after_round(&mut self, transcript: &ChatTranscript, partner_is_human: bool) {
        let me = self.id().to_string();
        let latest = transcript.latest_round_only();
        let Some(round) = latest.last_round() else {
            return;
        };
        let partner_id = if round.initiator == me {
            round.responder.clone()
        } else {
            round.initiator.clone()
        };

        match integrate_interaction_beliefs(
            &latest,
            &self.beliefs.interaction,
            &self.backends.belief_former,
        ) {
            Ok(updated) => self.beliefs.set_interaction(updated),
            Err(e) => tracing::warn!(error = %e, "interaction beliefs not updated"),
        }
        if self.config.flags.semantic_memory {
            if let Some(task) = &self.current_task {
                let answer = self
                    .beliefs
                    .interaction
                    .iter()
                    .rev()
                    .find_map(|line| extract_answer(line, &task.canonical_question));
                if let Some(answer) = answer {
                    let source = if partner_is_human {
                        SemanticSource::Human
                    } else {
                        SemanticSource::Communication
                    };
                    let question = task.canonical_question.clone();
                    if let Err(e) = self.semantic.put(&question, &answer, source) {
                        tracing::warn!(error = %e, "semantic correction not stored");
                    } else {
                        // Replace the stale task belief so the next prompt agrees with memory.
                        self.beliefs
                            .upsert_task(crate::belief::TaskBelief { question, answer });
                    }
                }
            }
        }
        if latest.messages_from(&partner_id) > 0 {
            let model = self
                .beliefs
                .partner_entry(&partner_id, self.config.flags.structured_tom)
                .clone();
            match update_partner_model(&model, &latest, &self.backends.belief_former) {
                Ok(updated) => {
                    *self
                        .beliefs
                        .partner_entry(&partner_id, self.config.flags.structured_tom) = updated
                }
                Err(e) => tracing::warn!(error = %e, "partner model not updated"),
            }
        }
        self.publish_state();
    }

    fn observe_task(&mut self, task: &TaskSpec) {
        self.current_task = Some(task.clone());
    }
}
