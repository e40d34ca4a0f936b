use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{run_trial, Agent, AgentError, TrialRecord, TrialSettings};
use crate::comm::Participant;
use crate::craftworld::{Milestone, TaskSpec, WorldState};
use crate::memory::MemoryDump;

/// Prompting iterations allowed per curriculum run by default.
pub const DEFAULT_BUDGET: u32 = 160;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub task: String,
    pub trials: u32,
    pub iterations: u32,
    pub success: bool,
    /// Cumulative iterations when this task was left.
    pub cumulative_iterations: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MilestoneRecord {
    pub milestone: Milestone,
    /// Cumulative prompting iterations when the defining item was first
    /// obtained; `None` when never reached within the budget.
    pub iterations: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumRecord {
    pub agent_id: String,
    pub seed: u64,
    pub budget: u32,
    pub total_iterations: u32,
    pub tasks: Vec<TaskOutcome>,
    pub milestones: Vec<MilestoneRecord>,
    pub items_held: BTreeSet<String>,
    pub outage: bool,
    pub trials: Vec<TrialRecord>,
    /// The agent's stores when the curriculum ended.
    #[serde(default)]
    pub memory: MemoryDump,
}

impl CurriculumRecord {
    pub fn milestone(&self, milestone: Milestone) -> Option<u32> {
        self.milestones
            .iter()
            .find(|m| m.milestone == milestone)
            .and_then(|m| m.iterations)
    }
}

fn reborrow<'s>(partner: &'s mut Option<&mut dyn Participant>) -> Option<&'s mut dyn Participant> {
    match partner {
        Some(p) => Some(&mut **p),
        None => None,
    }
}

/// Work through `tasks` in order with one world and one memory. A failed
/// task is retried in fresh trials until it succeeds or the budget runs out.
pub fn run_curriculum(
    agent: &mut Agent,
    mut partner: Option<&mut dyn Participant>,
    mut world: WorldState,
    tasks: &[TaskSpec],
    budget: u32,
    comm_rounds: u32,
    seed: u64,
) -> Result<(CurriculumRecord, WorldState), AgentError> {
    if budget == 0 {
        return Err(AgentError::ZeroBudget);
    }
    let agent_id = agent.id().to_string();
    let mut used = 0u32;
    let mut trial_id = 0u32;
    let mut outcomes = Vec::new();
    let mut trials = Vec::new();
    let mut milestones: Vec<MilestoneRecord> = Milestone::ALL
        .iter()
        .map(|&milestone| MilestoneRecord {
            milestone,
            iterations: None,
        })
        .collect();
    let mut items_held = world.agent(&agent_id)?.items_seen.clone();
    let mut outage = false;

    'tasks: for task in tasks {
        let mut outcome = TaskOutcome {
            task: task.name.clone(),
            trials: 0,
            iterations: 0,
            success: false,
            cumulative_iterations: used,
        };
        while used < budget {
            let mut settings = TrialSettings::new(trial_id, comm_rounds, seed);
            settings.attempt_cap = Some(budget - used);
            let (record, next) = run_trial(agent, reborrow(&mut partner), world, task, &settings)?;
            world = next;
            trial_id += 1;
            for (i, attempt) in record.attempts.iter().enumerate() {
                let at = used + i as u32 + 1;
                for m in milestones.iter_mut().filter(|m| m.iterations.is_none()) {
                    let gained = attempt
                        .verdict
                        .inventory_delta
                        .get(m.milestone.defining_item())
                        .is_some_and(|&d| d > 0);
                    if gained {
                        m.iterations = Some(at);
                    }
                }
            }
            used += record.prompting_iterations;
            outcome.trials += 1;
            outcome.iterations += record.prompting_iterations;
            outcome.success = record.succeeded();
            outcome.cumulative_iterations = used;
            items_held.extend(record.items_held.iter().cloned());
            let stop = record.outage;
            trials.push(record);
            if stop {
                outage = true;
                outcomes.push(outcome);
                break 'tasks;
            }
            if outcome.success {
                break;
            }
        }
        let done = outcome.success;
        outcomes.push(outcome);
        if !done {
            break;
        }
    }

    let record = CurriculumRecord {
        agent_id,
        seed,
        budget,
        total_iterations: used,
        tasks: outcomes,
        milestones,
        items_held,
        outage,
        trials,
        memory: agent.memory_dump(),
    };
    Ok((record, world))
}
