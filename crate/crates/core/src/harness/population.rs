use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{configure, prime};
use super::{thread_pool, AgentFactory, ExperimentSpec, HarnessError, Seat, Setting, TrialContext};
use crate::agent::Agent;
use crate::comm::{run_round, ChatTranscript, CommunicationRound, Participant, Trigger};
use crate::craftworld::{TaskSpec, WorldState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub run_id: String,
    pub pool_size: u32,
    pub priming: u32,
    pub rounds: u32,
    pub pairs: Vec<(String, String)>,
    /// Peer round after which each agent first succeeded; 0 is the
    /// attempt right after priming.
    pub success_round: BTreeMap<String, Option<u32>>,
    /// Fraction of the pool that has succeeded after each peer round.
    pub curve: Vec<f64>,
    pub prompting_iterations: u32,
    pub outage: bool,
    pub transcripts: Vec<Vec<CommunicationRound>>,
}

fn agent_id(index: u32) -> String {
    format!("Agent-{index:02}")
}

/// Deterministic pairing: a seeded permutation of the pool taken two at a time.
pub fn pairing(pool_size: u32, seed: u64) -> Vec<(u32, u32)> {
    let mut order: Vec<u32> = (0..pool_size).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.chunks(2).map(|c| (c[0], c[1])).collect()
}

struct Member {
    agent: Agent,
    world: WorldState,
    success_round: Option<u32>,
    iterations: u32,
    outage: bool,
}

impl Member {
    fn attempt(&mut self, task: &TaskSpec, round: u32) -> Result<(), HarnessError> {
        if self.success_round.is_some() || self.outage {
            return Ok(());
        }
        let (record, world) = self.agent.attempt_action(&self.world, task, 0, round)?;
        self.world = world;
        self.iterations += 1;
        self.outage = record.outage;
        if record.verdict.success {
            self.success_round = Some(round);
        }
        Ok(())
    }
}

fn run_pair(
    mut a: Member,
    mut b: Member,
    task: &TaskSpec,
    rounds: u32,
) -> Result<(Member, Member, Vec<CommunicationRound>), HarnessError> {
    let mut transcript = ChatTranscript::new(a.agent.id().to_string(), b.agent.id().to_string());
    for round in 1..=rounds {
        let (initiator, responder) = match (a.success_round.is_some(), b.success_round.is_some()) {
            (true, true) => break,
            (false, _) => (&mut a, &mut b),
            (true, false) => (&mut b, &mut a),
        };
        let tick = initiator.world.tick;
        if let Err(e) = run_round(
            &mut initiator.agent,
            &mut responder.agent,
            &mut transcript,
            &task.name,
            Trigger::FailedAttempt,
            tick,
            None,
        ) {
            tracing::warn!(error = %e, "peer round not started");
        }
        a.attempt(task, round)?;
        b.attempt(task, round)?;
    }
    Ok((a, b, transcript.rounds))
}

/// Prime every agent with an expert, take one baseline attempt each, then
/// pair agents and alternate peer rounds with attempts.
pub fn run_population(
    spec: &ExperimentSpec,
    factory: &dyn AgentFactory,
) -> Result<PopulationRecord, HarnessError> {
    spec.validate()?;
    if !matches!(
        spec.setting,
        Setting::CollaborativePrimed | Setting::CollaborativePeer
    ) {
        return Err(HarnessError::Config(
            "population runs need a collaborative setting".into(),
        ));
    }
    if spec.pool_size < 2 || spec.pool_size % 2 == 1 {
        return Err(HarnessError::Config(format!(
            "pool_size must be even and at least 2, got {}",
            spec.pool_size
        )));
    }
    let task = spec.task_spec()?;
    let priming = if spec.setting == Setting::CollaborativePrimed {
        spec.priming.unwrap_or(0)
    } else {
        0
    };
    let pool = thread_pool(spec.workers)?;

    let build = |i: u32| -> Result<Member, HarnessError> {
        let ctx = TrialContext {
            trial: i,
            seed: spec.seed_for(i),
        };
        let id = agent_id(i);
        let mut agent = factory.build(Seat::Peer(i), &id, &ctx)?;
        configure(&mut agent, spec);
        let world = spec.scenario_for(i).build(&[id.as_str()]);
        Participant::observe_task(&mut agent, &task);
        prime(&mut agent, factory, &ctx, &task, priming, world.tick)?;
        let mut member = Member {
            agent,
            world,
            success_round: None,
            iterations: 0,
            outage: false,
        };
        member.attempt(&task, 0)?;
        Ok(member)
    };
    let members: Vec<Member> = if spec.workers == Some(1) {
        (0..spec.pool_size).map(build).collect::<Result<_, _>>()?
    } else {
        pool.install(|| {
            (0..spec.pool_size)
                .into_par_iter()
                .map(build)
                .collect::<Result<_, _>>()
        })?
    };

    let pairs = pairing(spec.pool_size, spec.seed);
    let mut slots: Vec<Option<Member>> = members.into_iter().map(Some).collect();
    let work: Vec<(Member, Member)> = pairs
        .iter()
        .map(|&(x, y)| {
            (
                slots[x as usize].take().expect("each agent paired once"),
                slots[y as usize].take().expect("each agent paired once"),
            )
        })
        .collect();
    let run = |(a, b): (Member, Member)| run_pair(a, b, &task, spec.comm_rounds);
    let done: Vec<(Member, Member, Vec<CommunicationRound>)> = if spec.workers == Some(1) {
        work.into_iter().map(run).collect::<Result<_, _>>()?
    } else {
        pool.install(|| work.into_par_iter().map(run).collect::<Result<_, _>>())?
    };

    let mut success_round = BTreeMap::new();
    let mut iterations = 0;
    let mut outage = false;
    let mut transcripts = Vec::new();
    let mut named_pairs = Vec::new();
    for (a, b, rounds) in done {
        named_pairs.push((a.agent.id().to_string(), b.agent.id().to_string()));
        for m in [a, b] {
            iterations += m.iterations;
            outage |= m.outage;
            success_round.insert(m.agent.id().to_string(), m.success_round);
        }
        transcripts.push(rounds);
    }
    let pool_size = f64::from(spec.pool_size);
    let curve = (0..=spec.comm_rounds)
        .map(|r| {
            success_round
                .values()
                .filter(|s| s.is_some_and(|s| s <= r))
                .count() as f64
                / pool_size
        })
        .collect();
    Ok(PopulationRecord {
        run_id: spec.run_id.clone(),
        pool_size: spec.pool_size,
        priming,
        rounds: spec.comm_rounds,
        pairs: named_pairs,
        success_round,
        curve,
        prompting_iterations: iterations,
        outage,
        transcripts,
    })
}
