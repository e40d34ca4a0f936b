//! Scripted agents and the canned scenarios built from them. Every backend
//! here is a table-driven oracle, so runs are fully deterministic.

use std::sync::Arc;

use crate::agent::{Agent, AgentConfig, AgentError, AgentRole, Backends};
use crate::gateway::{CallRole, LocalHashEmbedder, Matcher, Responder, RoleClient, ScriptedOracle};
use crate::prompts;

/// Distinctive fragments of each fixed prompt, for oracle matching.
pub mod keys {
    pub const PERCEPTION: &str = "Describe what you currently perceive";
    pub const TASK: &str = "reflecting on your next task";
    pub const INTERACTION: &str = "that can help you complete the task";
    pub const PARTNER: &str = "represent your perception of the other agent";
    pub const SUMMARY: &str = "summarizing past experience episodes";
    pub const PERSPECTIVE: &str = "Perspective Analysis:";
    pub const CONVERSATION: &str = "chatting with another agent";
    pub const ASK_OR_ATTEMPT: &str = "deciding whether to ask your partner";
    pub const ACTOR: &str = "Write an action script";
}

pub const DEFAULT_PARTNER_GRAPH: &str = "context: working on a Minecraft task\ndesire: finish the task\npercept: unknown\nbelief: unknown\ncausal event: none\naction: chatting";

/// A script wrapped the way an actor completion carries it.
pub fn fenced(script: &str) -> String {
    format!("```\n{script}\n```")
}

/// Support oracle for every non-actor role. `overrides` are tried first.
pub fn support_oracle(overrides: Vec<(Matcher, Responder)>) -> ScriptedOracle {
    let mut oracle = ScriptedOracle::new("OK").named("support");
    for (m, r) in overrides {
        oracle = oracle.rule(m, r);
    }
    oracle
        // An empty answer makes the belief former use its templates.
        .rule(Matcher::system(keys::PERCEPTION), Responder::text(""))
        .rule(
            Matcher::system(keys::TASK),
            Responder::text("Answer: I am not sure yet."),
        )
        .rule(
            Matcher::system(keys::INTERACTION),
            Responder::text("- I asked my partner for help with the task."),
        )
        .rule(
            Matcher::system(keys::PARTNER),
            Responder::text(DEFAULT_PARTNER_GRAPH),
        )
        .rule(
            Matcher::system(keys::SUMMARY),
            Responder::text("- Earlier attempts failed."),
        )
        .rule(
            Matcher::contains(keys::PERSPECTIVE),
            Responder::text("My partner probably needs concrete steps."),
        )
        .rule(
            Matcher::system(keys::ASK_OR_ATTEMPT),
            Responder::text("ATTEMPT"),
        )
        .rule(
            Matcher::system(keys::CONVERSATION),
            Responder::text("I am still working on it."),
        )
}

/// An agent with its oracles kept at hand for call-log inspection.
pub struct ScriptedAgent {
    pub agent: Agent,
    pub actor: Option<Arc<ScriptedOracle>>,
    pub support: Arc<ScriptedOracle>,
}

impl ScriptedAgent {
    pub fn new(
        config: AgentConfig,
        actor: Option<ScriptedOracle>,
        support: ScriptedOracle,
    ) -> Result<Self, AgentError> {
        let support = Arc::new(support);
        let actor = actor.map(Arc::new);
        let backends = Backends {
            actor: actor.clone().map(|a| RoleClient::new(a, CallRole::Actor)),
            critic: Some(RoleClient::new(support.clone(), CallRole::Critic)),
            belief_former: RoleClient::new(support.clone(), CallRole::BeliefFormer),
            conversationalist: RoleClient::new(support.clone(), CallRole::Conversationalist),
        };
        let agent = Agent::new(config, backends, LocalHashEmbedder::handle())?;
        Ok(Self {
            agent,
            actor,
            support,
        })
    }

    pub fn actor_calls(&self) -> usize {
        self.actor.as_ref().map_or(0, |a| a.call_log().len())
    }

    /// Support calls whose system prompt or body contains `key`.
    pub fn support_calls(&self, key: &str) -> usize {
        self.support
            .call_log()
            .iter()
            .filter(|r| r.messages.iter().any(|m| m.content.contains(key)))
            .count()
    }

    /// Every actor prompt body, in call order.
    pub fn actor_contexts(&self) -> Vec<String> {
        self.actor.as_ref().map_or_else(Vec::new, |a| {
            a.call_log()
                .iter()
                .map(|r| r.last_user().to_string())
                .collect()
        })
    }
}

/// An actor that always emits the same script.
pub fn constant_actor(script: &str) -> ScriptedOracle {
    ScriptedOracle::new(fenced(script)).named("actor")
}

/// An actor that emits `corrected` once the prompt contains `cue`, and
/// `initial` before that.
pub fn cued_actor(cue: &str, initial: &str, corrected: &str) -> ScriptedOracle {
    ScriptedOracle::new(fenced(initial)).named("actor").rule(
        Matcher::LastUserContains(cue.to_string()),
        Responder::text(fenced(corrected)),
    )
}

/// A knowledgeable partner that only talks.
pub fn expert(id: &str, reply: &str) -> Result<ScriptedAgent, AgentError> {
    let support = support_oracle(vec![(
        Matcher::system(keys::CONVERSATION),
        Responder::text(reply),
    )]);
    ScriptedAgent::new(AgentConfig::new(id, AgentRole::Expert), None, support)
}

pub const CORRECTED_WOOD_ANSWER: &str = "punch a tree with your bare hands";
pub const FALSE_WOOD_ANSWER: &str = "Answer: you need an axe to mine wood.";

/// Novice who believes wood needs an axe, and an expert who corrects it.
pub fn false_belief_pair(
    config: AgentConfig,
) -> Result<(ScriptedAgent, ScriptedAgent), AgentError> {
    let question = crate::craftworld::TaskSpec::mine_wood().canonical_question;
    let support = support_oracle(vec![
        (
            Matcher::system(keys::TASK),
            Responder::text(FALSE_WOOD_ANSWER),
        ),
        (
            Matcher::system(keys::INTERACTION).and(Matcher::contains(CORRECTED_WOOD_ANSWER)),
            Responder::text(format!(
                "- {question} Answer: {CORRECTED_WOOD_ANSWER}\n- Trees can be mined without tools."
            )),
        ),
        (
            Matcher::system(keys::CONVERSATION),
            Responder::text("I tried to make an axe first but it did not work."),
        ),
    ]);
    let actor = cued_actor(CORRECTED_WOOD_ANSWER, "craft wooden_axe", "mine oak_log");
    let novice = ScriptedAgent::new(config, Some(actor), support)?;
    let expert = expert(
        "Expert",
        &format!("You don't need an axe for that. Just {CORRECTED_WOOD_ANSWER}: `mine oak_log`."),
    )?;
    Ok((novice, expert))
}

pub const FAULTY_SCRIPT: &str = "mine(dirt";
pub const EXPERT_SCRIPT: &str = "mine dirt";

/// Novice who writes a malformed script, and an expert who sends a valid one.
pub fn faulty_script_pair(
    config: AgentConfig,
) -> Result<(ScriptedAgent, ScriptedAgent), AgentError> {
    let support = support_oracle(vec![(
        Matcher::system(keys::INTERACTION).and(Matcher::contains(EXPERT_SCRIPT)),
        Responder::text(format!(
            "- My partner says the script `{EXPERT_SCRIPT}` collects dirt."
        )),
    )]);
    let actor = cued_actor(&format!("`{EXPERT_SCRIPT}`"), FAULTY_SCRIPT, EXPERT_SCRIPT);
    let novice = ScriptedAgent::new(config, Some(actor), support)?;
    let expert = expert(
        "Expert",
        &format!("Your script does not parse. Use exactly this:\n```\n{EXPERT_SCRIPT}\n```"),
    )?;
    Ok((novice, expert))
}

pub const NIGHT_NAIVE_SCRIPT: &str = "mine dark_oak_log";
pub const NIGHT_SCRIPT: &str = "wait_until_day\nmine dark_oak_log";

/// Novice stuck at night in a dark forest, and an expert who says to wait.
pub fn night_pair(config: AgentConfig) -> Result<(ScriptedAgent, ScriptedAgent), AgentError> {
    let support = support_oracle(vec![
        (
            Matcher::system(keys::INTERACTION).and(Matcher::contains("wait_until_day")),
            Responder::text("- Logs cannot be reached at night; run wait_until_day before mining."),
        ),
        (
            Matcher::system(keys::CONVERSATION),
            Responder::text("It is night and I can't reach any tree here."),
        ),
    ]);
    let actor = cued_actor(
        "wait_until_day before mining",
        NIGHT_NAIVE_SCRIPT,
        NIGHT_SCRIPT,
    );
    let novice = ScriptedAgent::new(config, Some(actor), support)?;
    let expert = expert(
        "Expert",
        "Trees are out of reach at night. Use wait_until_day, then mine dark_oak_log.",
    )?;
    Ok((novice, expert))
}

/// Scripts that solve each tech-tree task in one attempt from a fresh
/// plains world, in curriculum order.
pub const COMPETENT_SCRIPTS: [(&str, &str); 10] = [
    ("Mine 3 wood log", "mine wood_log\nmine wood_log\nmine wood_log"),
    (
        "Place 1 crafting table",
        "craft wooden_plank\ncraft wooden_plank\ncraft wooden_plank\ncraft crafting_table\nplace crafting_table",
    ),
    ("Craft 1 wooden pickaxe", "craft stick\ncraft wooden_pickaxe"),
    ("Mine 3 stone", "mine stone\nmine stone\nmine stone"),
    ("Craft 1 stone pickaxe", "craft stone_pickaxe"),
    ("Mine 8 stone", "mine stone\nmine stone\nmine stone\nmine stone\nmine stone\nmine stone\nmine stone\nmine stone"),
    ("Place 1 furnace", "craft furnace\nplace furnace"),
    ("Mine 3 iron ore", "mine iron_ore\nmine iron_ore\nmine iron_ore"),
    ("Smelt 3 iron ingot", "smelt iron_ore\nsmelt iron_ore\nsmelt iron_ore"),
    ("Craft 1 iron pickaxe", "mine wood_log\ncraft wooden_plank\ncraft stick\ncraft iron_pickaxe"),
];

/// An actor that answers each tech-tree task with its competent script,
/// and `fallback` for anything else.
pub fn competent_actor(fallback: &str) -> ScriptedOracle {
    let mut oracle = ScriptedOracle::new(fenced(fallback)).named("actor");
    for (task, script) in COMPETENT_SCRIPTS {
        oracle = oracle.rule(
            Matcher::LastUserContains(format!("Task: {task}\n")),
            Responder::text(fenced(script)),
        );
    }
    oracle
}

/// Help request text for `task_name`, as the opening message carries it.
pub fn opening_for(task_name: &str) -> String {
    prompts::help_request(task_name)
}

/// The corrective tip passed around in population runs.
pub const TIP: &str = "dirt needs no tool, just punch it";
const TIP_COUNT_PREFIX: &str = "I heard the tip ";

/// How many times the agent has heard the tip, read from its own beliefs.
pub fn tip_count(text: &str) -> u32 {
    text.lines()
        .filter_map(|l| l.split(TIP_COUNT_PREFIX).nth(1))
        .filter_map(|rest| rest.split_whitespace().next()?.parse().ok())
        .max()
        .unwrap_or(0)
}

/// An agent whose competence is a step function of the corrective messages
/// it has heard: it mines dirt once the tip count reaches `threshold`.
/// Agents that know the tip pass it on when they talk.
pub fn step_agent(config: AgentConfig, threshold: u32) -> Result<ScriptedAgent, AgentError> {
    let me = format!("\n{}: ", config.agent_id);
    let integrate = move |req: &crate::gateway::ChatRequest| {
        let user = req.last_user();
        let (conversation, prior) = user
            .split_once("\n\nPrevious beliefs:")
            .unwrap_or((user, ""));
        let heard = conversation
            .split('\n')
            .skip(1)
            .any(|line| !format!("\n{line}").starts_with(me.as_str()) && line.contains(TIP));
        let count = tip_count(prior) + u32::from(heard);
        if count == 0 {
            "- Nobody has shared a tip yet.".to_string()
        } else {
            format!("- {TIP_COUNT_PREFIX}{count} times: {TIP}")
        }
    };
    let support = support_oracle(vec![
        (
            Matcher::system(keys::INTERACTION),
            Responder::dynamic(integrate),
        ),
        (
            Matcher::system(keys::CONVERSATION).and(Matcher::contains(TIP_COUNT_PREFIX)),
            Responder::text(format!("Here is a tip: {TIP}.")),
        ),
        (
            Matcher::system(keys::CONVERSATION),
            Responder::text("I have no idea how to do it either."),
        ),
    ]);
    let actor = ScriptedOracle::new("")
        .named("actor")
        .with_default(Responder::dynamic(move |req| {
            if tip_count(req.last_user()) >= threshold {
                fenced("mine dirt")
            } else {
                fenced("mine iron_ore")
            }
        }));
    ScriptedAgent::new(config, Some(actor), support)
}

/// The expert used for priming population agents.
pub fn tip_expert(id: &str) -> Result<ScriptedAgent, AgentError> {
    expert(id, &format!("Here is a tip: {TIP}."))
}
