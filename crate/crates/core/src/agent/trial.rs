use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Agent, AgentError, CommPlacement};
use crate::comm::{
    decide_ask_or_attempt, run_round, ChatTranscript, CommunicationRound, Decision, Participant,
    SessionEvent, Trigger,
};
use crate::craftworld::{CriticVerdict, ExecutionTrace, TaskSpec, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub context: String,
    pub completion: Option<String>,
    pub script: Option<String>,
    pub parse_error: Option<String>,
    pub trace: Option<ExecutionTrace>,
    pub verdict: CriticVerdict,
    pub tick_before: u64,
    pub tick_after: u64,
    /// The actor backend failed hard on this attempt.
    pub outage: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Success,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "step", content = "index", rename_all = "snake_case")]
pub enum ScheduleStep {
    Attempt(u32),
    Round(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialSettings {
    pub trial_id: u32,
    /// Communication rounds available in this trial.
    pub comm_rounds: u32,
    pub seed: u64,
    /// Tighter attempt cap than the agent's own, e.g. a curriculum budget.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt_cap: Option<u32>,
}

impl TrialSettings {
    pub fn new(trial_id: u32, comm_rounds: u32, seed: u64) -> Self {
        Self {
            trial_id,
            comm_rounds,
            seed,
            attempt_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: u32,
    pub task: String,
    pub seed: u64,
    pub agent_id: String,
    pub partner_id: Option<String>,
    pub comm_rounds: u32,
    pub placement: CommPlacement,
    pub flexible: bool,
    pub attempts: Vec<AttemptRecord>,
    pub rounds: Vec<CommunicationRound>,
    pub schedule: Vec<ScheduleStep>,
    pub outcome: Outcome,
    /// Actor backend calls made during the trial.
    pub prompting_iterations: u32,
    /// Rounds completed before the successful attempt.
    pub rounds_before_success: Option<u32>,
    /// A backend outage cut the trial short.
    pub outage: bool,
    pub final_tick: u64,
    /// Every item the agent held at some point in the trial's world.
    pub items_held: BTreeSet<String>,
}

impl TrialRecord {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Success
    }

    /// Success counted with at most `round` communication rounds.
    pub fn succeeded_by_round(&self, round: u32) -> bool {
        self.rounds_before_success.is_some_and(|r| r <= round)
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("trial record serializes")
    }
}

fn flexible_context(world: &WorldState, agent_id: &str) -> Result<String, AgentError> {
    Ok(world.snapshot_percept(agent_id)?.render())
}

/// Run one trial: attempts in a continuing world with communication rounds
/// placed by the agent's configuration, stopping at the first success.
pub fn run_trial(
    agent: &mut Agent,
    mut partner: Option<&mut dyn Participant>,
    mut world: WorldState,
    task: &TaskSpec,
    settings: &TrialSettings,
) -> Result<(TrialRecord, WorldState), AgentError> {
    if settings.comm_rounds > 0 && partner.is_none() {
        return Err(AgentError::MissingPartner(settings.comm_rounds));
    }
    let agent_id = agent.id().to_string();
    let partner_id = partner.as_ref().map(|p| p.id().to_string());
    let max_attempts = settings
        .attempt_cap
        .map_or(agent.config.max_actions_per_trial, |cap| {
            cap.min(agent.config.max_actions_per_trial)
        });
    let placement = agent.config.comm_placement;
    let flexible = agent.config.flags.flexible_comm;
    let bus = agent.bus.clone();
    if let Some(bus) = &bus {
        bus.publish(SessionEvent::TrialStarted {
            trial: settings.trial_id,
            task: task.name.clone(),
            agent: agent_id.clone(),
            partner: partner_id.clone(),
        });
    }
    Participant::observe_task(agent, task);
    if let Some(p) = partner.as_deref_mut() {
        p.observe_task(task);
    }

    let mut transcript =
        ChatTranscript::new(agent_id.clone(), partner_id.clone().unwrap_or_default());
    let mut attempts = Vec::new();
    let mut schedule = Vec::new();
    let mut rounds_used = 0u32;
    let mut rounds_before_success = None;
    let mut outage = false;
    let mut items_held: BTreeSet<String> = world.agent(&agent_id)?.items_seen.clone();

    let talk = |agent: &mut Agent,
                partner: &mut Option<&mut dyn Participant>,
                transcript: &mut ChatTranscript,
                schedule: &mut Vec<ScheduleStep>,
                rounds_used: &mut u32,
                trigger: Trigger,
                tick: u64| {
        let Some(p) = partner.as_deref_mut() else {
            return;
        };
        match run_round(
            agent,
            p,
            transcript,
            &task.name,
            trigger,
            tick,
            bus.as_ref(),
        ) {
            Ok(report) => {
                schedule.push(ScheduleStep::Round(report.round_index));
                *rounds_used += 1;
            }
            Err(e) => tracing::warn!(error = %e, "round not started"),
        }
    };

    for attempt in 0..max_attempts {
        if flexible && rounds_used < settings.comm_rounds {
            let context = flexible_context(&world, &agent_id)?;
            if decide_ask_or_attempt(&agent.backends.conversationalist, &task.name, &context)
                == Decision::Ask
            {
                let tick = world.tick;
                talk(
                    agent,
                    &mut partner,
                    &mut transcript,
                    &mut schedule,
                    &mut rounds_used,
                    Trigger::FlexibleAsk,
                    tick,
                );
            }
        }
        let (record, next) = agent.attempt_action(&world, task, settings.trial_id, attempt)?;
        world = next;
        items_held.extend(world.agent(&agent_id)?.items_seen.iter().cloned());
        schedule.push(ScheduleStep::Attempt(attempt));
        let success = record.verdict.success;
        let failed_hard = record.outage;
        attempts.push(record);
        if success {
            rounds_before_success = Some(rounds_used);
            break;
        }
        if failed_hard {
            outage = true;
            break;
        }
        let last = attempt + 1 == max_attempts;
        let wants_round = !flexible
            && rounds_used < settings.comm_rounds
            && match placement {
                CommPlacement::Interleaved => !last,
                CommPlacement::Appended => true,
            };
        if wants_round {
            let tick = world.tick;
            talk(
                agent,
                &mut partner,
                &mut transcript,
                &mut schedule,
                &mut rounds_used,
                Trigger::FailedAttempt,
                tick,
            );
        }
    }

    let outcome = if rounds_before_success.is_some() {
        Outcome::Success
    } else {
        Outcome::Failure
    };
    if let Some(bus) = &bus {
        bus.publish(SessionEvent::TrialFinished {
            trial: settings.trial_id,
            success: outcome == Outcome::Success,
        });
    }
    let record = TrialRecord {
        trial_id: settings.trial_id,
        task: task.name.clone(),
        seed: settings.seed,
        agent_id,
        partner_id,
        comm_rounds: settings.comm_rounds,
        placement,
        flexible,
        prompting_iterations: attempts.len() as u32,
        attempts,
        rounds: transcript.rounds.clone(),
        schedule,
        outcome,
        rounds_before_success,
        outage,
        final_tick: world.tick,
        items_held,
    };
    Ok((record, world))
}
