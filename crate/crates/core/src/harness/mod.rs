//! Experiment settings, the trial fan-out, metrics and run directories.

mod config;
mod experiment;
mod population;
mod rundir;
mod techtree;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, CommPlacement, Flags, DEFAULT_BUDGET, DEFAULT_MAX_ACTIONS};
use crate::craftworld::{Scenario, TaskSpec};
use crate::memory::PersistError;

pub use config::{BackendConfig, ConfiguredFactory, ExperimentFile};
pub use experiment::{run_experiment, success_fraction, ExperimentOutput, Hooks, MetricReport};
pub use population::{pairing, run_population, PopulationRecord};
pub use rundir::{
    curriculum_report, population_report, read_jsonl, read_memory, read_trials, render_trial,
    write_curriculum_run, write_experiment_run, write_population_run, RunFiles,
};
pub use techtree::{format_cell, report_tech_tree, run_tech_tree, MilestoneRow, TechTreeTable};

pub const DEFAULT_TRIALS: u32 = 24;
pub const DEFAULT_CURRICULUM_RUNS: u32 = 3;
pub const DEFAULT_POOL: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Solo,
    InstructiveModel,
    InstructiveHuman,
    CollaborativePeer,
    CollaborativePrimed,
}

/// Which seat of an experiment an agent fills.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seat {
    Novice,
    Expert,
    Peer(u32),
}

/// Identity of one independent unit of work.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialContext {
    pub trial: u32,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Persist(#[from] PersistError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub run_id: String,
    pub setting: Setting,
    /// Task id, e.g. `mine_dirt`.
    pub task: String,
    #[serde(default = "default_trials")]
    pub trials: u32,
    #[serde(default)]
    pub comm_rounds: u32,
    /// Expert rounds each agent gets before peers are paired.
    #[serde(default)]
    pub priming: Option<u32>,
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    /// Explicit per-trial seeds; trial `i` otherwise uses `seed + i`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub placement: CommPlacement,
    #[serde(default = "default_max_actions")]
    pub max_actions: u32,
    /// Worker threads; 1 runs serially.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub curriculum: bool,
    #[serde(default = "default_budget")]
    pub budget: u32,
    #[serde(default = "default_runs")]
    pub curriculum_runs: u32,
    #[serde(default = "default_pool")]
    pub pool_size: u32,
}

fn default_trials() -> u32 {
    DEFAULT_TRIALS
}
fn default_scenario() -> String {
    "plains_day".into()
}
fn default_max_actions() -> u32 {
    DEFAULT_MAX_ACTIONS
}
fn default_budget() -> u32 {
    DEFAULT_BUDGET
}
fn default_runs() -> u32 {
    DEFAULT_CURRICULUM_RUNS
}
fn default_pool() -> u32 {
    DEFAULT_POOL
}

impl ExperimentSpec {
    pub fn new(run_id: impl Into<String>, setting: Setting, task: impl Into<String>) -> Self {
        Self {
            run_id: run_id.into(),
            setting,
            task: task.into(),
            trials: DEFAULT_TRIALS,
            comm_rounds: 0,
            priming: matches!(setting, Setting::CollaborativePrimed).then_some(1),
            scenario: default_scenario(),
            seed: 0,
            seeds: Vec::new(),
            flags: Flags::default(),
            placement: CommPlacement::default(),
            max_actions: DEFAULT_MAX_ACTIONS,
            workers: None,
            curriculum: false,
            budget: DEFAULT_BUDGET,
            curriculum_runs: DEFAULT_CURRICULUM_RUNS,
            pool_size: DEFAULT_POOL,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.run_id.trim().is_empty() || self.run_id.contains(['/', '\\']) {
            return fail("run_id must be a plain non-empty name");
        }
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.max_actions == 0 {
            return fail("max_actions must be at least 1");
        }
        if !self.curriculum && TaskSpec::by_id(&self.task).is_none() {
            return Err(HarnessError::Config(format!(
                "unknown task {:?}",
                self.task
            )));
        }
        if Scenario::by_name(&self.scenario, 0).is_none() {
            return Err(HarnessError::Config(format!(
                "unknown scenario {:?}",
                self.scenario
            )));
        }
        if self.setting == Setting::Solo && self.comm_rounds > 0 {
            return fail("the solo setting has no partner, so comm_rounds must be 0");
        }
        if self.setting == Setting::CollaborativePrimed && self.priming.unwrap_or(0) == 0 {
            return fail("collaborative_primed requires priming of at least 1");
        }
        if self.workers == Some(0) {
            return fail("workers must be at least 1");
        }
        if self.curriculum && (self.budget == 0 || self.curriculum_runs == 0) {
            return fail("curriculum budget and runs must be at least 1");
        }
        Ok(())
    }

    pub fn task_spec(&self) -> Result<TaskSpec, HarnessError> {
        TaskSpec::by_id(&self.task)
            .ok_or_else(|| HarnessError::Config(format!("unknown task {:?}", self.task)))
    }

    pub fn seed_for(&self, index: u32) -> u64 {
        self.seeds
            .get(index as usize)
            .copied()
            .unwrap_or_else(|| self.seed.wrapping_add(u64::from(index)))
    }

    pub fn scenario_for(&self, index: u32) -> Scenario {
        Scenario::by_name(&self.scenario, self.seed_for(index)).expect("scenario validated")
    }
}

/// Builds fresh agents for each unit of work. Implementations must be
/// deterministic in `(seat, ctx)` for runs to be reproducible.
pub trait AgentFactory: Sync {
    fn build(
        &self,
        seat: Seat,
        agent_id: &str,
        ctx: &TrialContext,
    ) -> Result<crate::agent::Agent, HarnessError>;
}

impl<F> AgentFactory for F
where
    F: Fn(Seat, &str, &TrialContext) -> Result<crate::agent::Agent, HarnessError> + Sync,
{
    fn build(
        &self,
        seat: Seat,
        agent_id: &str,
        ctx: &TrialContext,
    ) -> Result<crate::agent::Agent, HarnessError> {
        self(seat, agent_id, ctx)
    }
}

pub const NOVICE_ID: &str = "Novice";
pub const EXPERT_ID: &str = "Expert";
pub const PEER_ID: &str = "Peer";

pub(crate) fn thread_pool(workers: Option<usize>) -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))
}
