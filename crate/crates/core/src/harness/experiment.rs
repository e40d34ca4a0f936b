use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    thread_pool, AgentFactory, ExperimentSpec, HarnessError, Seat, Setting, TechTreeTable,
    TrialContext, EXPERT_ID, NOVICE_ID, PEER_ID,
};
use crate::agent::{run_trial, Agent, CommPlacement, Flags, TrialRecord, TrialSettings};
use crate::comm::{
    run_round, ChatTranscript, EventBus, HumanExpert, HumanGate, Participant, Trigger,
};
use crate::memory::MemoryDump;

/// Live wiring for a run: an event bus for observers and the gate a human
/// expert types through.
#[derive(Debug, Clone, Default)]
pub struct Hooks {
    pub bus: Option<EventBus>,
    pub gate: Option<Arc<HumanGate>>,
    pub human_timeout: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub setting: Setting,
    pub task: String,
    pub trials: u32,
    /// Trials not cut short by a backend outage; fractions use this count.
    pub completed_trials: u32,
    pub comm_rounds: u32,
    pub placement: CommPlacement,
    pub flags: Flags,
    /// Index `r`: fraction of completed trials that succeeded with at most
    /// `r` communication rounds.
    pub success_fraction: Vec<f64>,
    pub successes_by_round: Vec<u32>,
    pub mean_prompting_iterations: f64,
    pub unique_items: usize,
    pub incomplete: bool,
    pub outage_trials: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tech_tree: Option<TechTreeTable>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub population_curve: Option<Vec<f64>>,
}

/// Successes and fractions by round index `0..=rounds` over `trials`.
pub fn success_fraction(trials: &[TrialRecord], rounds: u32) -> (Vec<u32>, Vec<f64>) {
    let counts: Vec<u32> = (0..=rounds)
        .map(|r| trials.iter().filter(|t| t.succeeded_by_round(r)).count() as u32)
        .collect();
    let n = trials.len();
    let fractions = counts
        .iter()
        .map(|&c| if n == 0 { 0.0 } else { f64::from(c) / n as f64 })
        .collect();
    (counts, fractions)
}

impl MetricReport {
    /// Aggregate raw trial records. Pure: the same records always give the
    /// same report.
    pub fn from_trials(spec: &ExperimentSpec, trials: &[TrialRecord]) -> Self {
        let outage_trials: Vec<u32> = trials
            .iter()
            .filter(|t| t.outage)
            .map(|t| t.trial_id)
            .collect();
        let completed: Vec<TrialRecord> = trials.iter().filter(|t| !t.outage).cloned().collect();
        let (successes_by_round, success_fraction) = success_fraction(&completed, spec.comm_rounds);
        let iterations: u32 = completed.iter().map(|t| t.prompting_iterations).sum();
        let items: BTreeSet<&String> = trials.iter().flat_map(|t| t.items_held.iter()).collect();
        Self {
            run_id: spec.run_id.clone(),
            setting: spec.setting,
            task: spec.task.clone(),
            trials: trials.len() as u32,
            completed_trials: completed.len() as u32,
            comm_rounds: spec.comm_rounds,
            placement: spec.placement,
            flags: spec.flags,
            success_fraction,
            successes_by_round,
            mean_prompting_iterations: if completed.is_empty() {
                0.0
            } else {
                f64::from(iterations) / completed.len() as f64
            },
            unique_items: items.len(),
            incomplete: !outage_trials.is_empty(),
            outage_trials,
            tech_tree: None,
            population_curve: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain two-column `round\tfraction` data for external plotting.
    pub fn curve_tsv(&self) -> String {
        let curve = self
            .population_curve
            .as_ref()
            .unwrap_or(&self.success_fraction);
        let mut out = String::from("round\tfraction\n");
        for (r, f) in curve.iter().enumerate() {
            writeln!(out, "{r}\t{f:.4}").expect("string write");
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "run {}  setting {:?}  task {}",
            self.run_id, self.setting, self.task
        )
        .expect("write");
        writeln!(
            out,
            "trials {} (completed {})  rounds {}  placement {:?}",
            self.trials, self.completed_trials, self.comm_rounds, self.placement
        )
        .expect("write");
        if self.incomplete {
            writeln!(
                out,
                "INCOMPLETE: backend outage in trials {:?}",
                self.outage_trials
            )
            .expect("write");
        }
        writeln!(out, "{:>6}  {:>9}  {:>8}", "round", "successes", "fraction").expect("write");
        for (r, (c, f)) in self
            .successes_by_round
            .iter()
            .zip(&self.success_fraction)
            .enumerate()
        {
            writeln!(out, "{r:>6}  {c:>9}  {:>7.1}%", f * 100.0).expect("write");
        }
        writeln!(
            out,
            "mean prompting iterations {:.2}",
            self.mean_prompting_iterations
        )
        .expect("write");
        writeln!(out, "unique items {}", self.unique_items).expect("write");
        if let Some(curve) = &self.population_curve {
            let points: Vec<String> = curve.iter().map(|f| format!("{:.1}%", f * 100.0)).collect();
            writeln!(out, "population curve {}", points.join(" ")).expect("write");
        }
        if let Some(tree) = &self.tech_tree {
            out.push_str(&tree.to_table());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub report: MetricReport,
    pub trials: Vec<TrialRecord>,
    /// The novice's stores at the end of each trial, in trial order.
    pub memory: Vec<MemoryDump>,
}

pub(crate) fn configure(agent: &mut Agent, spec: &ExperimentSpec) {
    agent.config.flags = spec.flags;
    agent.config.comm_placement = spec.placement;
    agent.config.max_actions_per_trial = spec.max_actions;
}

/// Run `rounds` expert rounds with `agent` asking, before any attempt.
pub(crate) fn prime(
    agent: &mut Agent,
    factory: &dyn AgentFactory,
    ctx: &TrialContext,
    task: &crate::craftworld::TaskSpec,
    rounds: u32,
    tick: u64,
) -> Result<(), HarnessError> {
    if rounds == 0 {
        return Ok(());
    }
    let mut expert = factory.build(Seat::Expert, EXPERT_ID, ctx)?;
    Participant::observe_task(agent, task);
    expert.observe_task(task);
    let mut transcript = ChatTranscript::new(agent.id().to_string(), EXPERT_ID);
    for _ in 0..rounds {
        if let Err(e) = run_round(
            agent,
            &mut expert,
            &mut transcript,
            &task.name,
            Trigger::FlexibleAsk,
            tick,
            None,
        ) {
            tracing::warn!(error = %e, "priming round not started");
        }
    }
    Ok(())
}

fn run_one(
    spec: &ExperimentSpec,
    factory: &dyn AgentFactory,
    hooks: &Hooks,
    index: u32,
) -> Result<(TrialRecord, MemoryDump), HarnessError> {
    let task = spec.task_spec()?;
    let ctx = TrialContext {
        trial: index,
        seed: spec.seed_for(index),
    };
    let mut novice = factory.build(Seat::Novice, NOVICE_ID, &ctx)?;
    configure(&mut novice, spec);
    novice.set_bus(hooks.bus.clone());
    let world = spec.scenario_for(index).build(&[NOVICE_ID]);
    let settings = TrialSettings::new(index, spec.comm_rounds, ctx.seed);
    let record = match spec.setting {
        Setting::Solo => run_trial(&mut novice, None, world, &task, &settings)?.0,
        Setting::InstructiveModel => {
            let mut expert = factory.build(Seat::Expert, EXPERT_ID, &ctx)?;
            run_trial(&mut novice, Some(&mut expert), world, &task, &settings)?.0
        }
        Setting::InstructiveHuman => {
            let gate = hooks.gate.clone().ok_or_else(|| {
                HarnessError::Config("instructive_human needs a human gate".into())
            })?;
            let mut human = HumanExpert::new(EXPERT_ID, gate);
            if let Some(t) = hooks.human_timeout {
                human = human.with_timeout(t);
            }
            if let Some(bus) = &hooks.bus {
                human = human.with_bus(bus.clone());
            }
            run_trial(&mut novice, Some(&mut human), world, &task, &settings)?.0
        }
        Setting::CollaborativePeer | Setting::CollaborativePrimed => {
            let mut peer = factory.build(Seat::Peer(1), PEER_ID, &ctx)?;
            configure(&mut peer, spec);
            let priming = if spec.setting == Setting::CollaborativePrimed {
                spec.priming.unwrap_or(0)
            } else {
                0
            };
            prime(&mut novice, factory, &ctx, &task, priming, world.tick)?;
            prime(&mut peer, factory, &ctx, &task, priming, world.tick)?;
            run_trial(&mut novice, Some(&mut peer), world, &task, &settings)?.0
        }
    };
    Ok((record, novice.memory_dump()))
}

/// Run every trial of `spec` and aggregate. Trials are independent and run
/// on a worker pool; records come back in trial order.
pub fn run_experiment(
    spec: &ExperimentSpec,
    factory: &dyn AgentFactory,
    hooks: &Hooks,
) -> Result<ExperimentOutput, HarnessError> {
    spec.validate()?;
    spec.task_spec()?;
    let serial = spec.workers == Some(1) || spec.setting == Setting::InstructiveHuman;
    let runs: Vec<(TrialRecord, MemoryDump)> = if serial {
        (0..spec.trials)
            .map(|i| run_one(spec, factory, hooks, i))
            .collect::<Result<_, _>>()?
    } else {
        let pool = thread_pool(spec.workers)?;
        pool.install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|i| run_one(spec, factory, hooks, i))
                .collect::<Result<Vec<_>, _>>()
        })?
    };
    let (trials, memory): (Vec<TrialRecord>, Vec<MemoryDump>) = runs.into_iter().unzip();
    let report = MetricReport::from_trials(spec, &trials);
    if report.incomplete {
        tracing::warn!(trials = ?report.outage_trials, "backend outage, report is incomplete");
    }
    Ok(ExperimentOutput {
        report,
        trials,
        memory,
    })
}
