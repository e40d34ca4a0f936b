//! Two-party chat rounds and the perspective-taking reply pipeline.

mod events;
mod human;
mod transcript;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{render_belief_context, BeliefSet, PartnerModel};
use crate::craftworld::TaskSpec;
use crate::gateway::{Message, RoleClient};
use crate::prompts;

pub use events::{EventBus, SessionEvent, Subscription};
pub use human::{GateError, HumanExpert, HumanGate, TurnInfo};
pub use transcript::{
    ChatMessage, ChatTranscript, CommunicationRound, RoundState, TranscriptRecord, MESSAGE_CAP,
    ROUND_MESSAGES,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CommError {
    #[error("a round is already open")]
    RoundAlreadyOpen,
    #[error("no round is open")]
    NoOpenRound,
    #[error("{0} is not a participant in this conversation")]
    NotParticipant(String),
    #[error("message is empty")]
    EmptyMessage,
    #[error("message has {len} characters, the cap is {cap}")]
    TooLong { len: usize, cap: usize },
    #[error("turn {turn} belongs to {expected}, not {got}")]
    OutOfTurn {
        expected: String,
        got: String,
        turn: usize,
    },
    #[error("help is only requested after a failed attempt")]
    NotAfterFailure,
    #[error("transcript has no message from {0}")]
    NoPartnerMessage(String),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error("timed out waiting for the human expert")]
    HumanTimeout,
}

/// What prompted a help request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    FailedAttempt,
    SucceededAttempt,
    /// The flexible protocol chose to ask before acting.
    FlexibleAsk,
}

/// Outcome of the flexible-protocol decision call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Attempt,
    Ask,
}

/// One side of a conversation.
pub trait Participant {
    fn id(&self) -> &str;

    fn is_human(&self) -> bool {
        false
    }

    /// Append this participant's next message to the open round.
    fn take_turn(
        &mut self,
        transcript: &mut ChatTranscript,
        tick: u64,
    ) -> Result<ChatMessage, CommError>;

    /// Called once after a round closes, initiator first.
    fn after_round(&mut self, transcript: &ChatTranscript, partner_is_human: bool);

    /// The task the pair is working on, announced before a trial starts.
    fn observe_task(&mut self, _task: &TaskSpec) {}
}

/// Open a round with the templated help request for `task_name`.
pub fn initiate_round(
    transcript: &mut ChatTranscript,
    initiator: &str,
    task_name: &str,
    trigger: Trigger,
    tick: u64,
) -> Result<ChatMessage, CommError> {
    if trigger == Trigger::SucceededAttempt {
        return Err(CommError::NotAfterFailure);
    }
    transcript.begin_round(initiator, &prompts::help_request(task_name), tick)
}

/// One call deciding whether to ask before acting. Anything but an exact
/// `ASK` token, including backend errors, means attempt.
pub fn decide_ask_or_attempt(client: &RoleClient, task_name: &str, context: &str) -> Decision {
    let response = client.call(vec![
        Message::system(prompts::ASK_OR_ATTEMPT),
        Message::user(format!("Task: {task_name}\n\n{context}")),
    ]);
    if response.is_error() {
        return Decision::Attempt;
    }
    let token = response
        .content
        .trim()
        .trim_matches(|c: char| !c.is_alphanumeric());
    if token == "ASK" {
        Decision::Ask
    } else {
        Decision::Attempt
    }
}

fn other_participant<'a>(transcript: &'a ChatTranscript, id: &str) -> &'a str {
    let (a, b) = &transcript.participants;
    if id == a {
        b
    } else {
        a
    }
}

/// Private analysis of the partner's knowledge and needs. Never posted.
/// A backend error yields an empty analysis.
pub fn take_perspective(
    self_id: &str,
    partner: &PartnerModel,
    transcript: &ChatTranscript,
    client: &RoleClient,
) -> Result<String, CommError> {
    if transcript.messages_from(&partner.partner_id) == 0 {
        return Err(CommError::NoPartnerMessage(partner.partner_id.clone()));
    }
    let world_model = if partner.model.is_empty() {
        "(nothing known yet)".to_string()
    } else {
        partner.model.render()
    };
    let prompt = prompts::perspective_taking(
        self_id,
        &partner.partner_id,
        &transcript.render(),
        &world_model,
    );
    let response = client.call(vec![Message::user(prompt)]);
    if response.is_error() {
        tracing::warn!(diagnostic = %response.content, "perspective taking failed");
        return Ok(String::new());
    }
    Ok(response.content)
}

/// Header introducing the perspective analysis in reply prompts.
pub const PERSPECTIVE_HEADER: &str = "Perspective analysis:";

fn clean_reply(responder: &str, text: &str) -> String {
    let mut text = text.trim();
    if let Some(rest) = text
        .strip_prefix(responder)
        .and_then(|r| r.strip_prefix(':'))
    {
        text = rest.trim();
    }
    text.chars().take(MESSAGE_CAP).collect()
}

/// Generate and post the responder's next message.
pub fn compose_reply(
    responder: &str,
    transcript: &mut ChatTranscript,
    beliefs: &BeliefSet,
    perspective: Option<&str>,
    client: &RoleClient,
    belief_budget: usize,
    tick: u64,
) -> Result<ChatMessage, CommError> {
    let round = transcript.open_round().ok_or(CommError::NoOpenRound)?;
    let turn = round.messages.len();
    let expected = round.speaker_at(turn);
    if expected != responder {
        return Err(CommError::OutOfTurn {
            expected: expected.to_string(),
            got: responder.to_string(),
            turn,
        });
    }
    let partner = other_participant(transcript, responder).to_string();
    let rendered = render_belief_context(beliefs, belief_budget);
    let mut user = format!(
        "Conversation so far:{}\n\nYour beliefs:\n{}\n\n",
        transcript.render(),
        if rendered.is_empty() {
            "(none)"
        } else {
            &rendered
        }
    );
    if let Some(p) = perspective.filter(|p| !p.trim().is_empty()) {
        user.push_str(&format!("{PERSPECTIVE_HEADER}\n{}\n\n", p.trim()));
    }
    user.push_str(&format!("Write your next message to {partner}."));
    let response = client.call(vec![
        Message::system(format!(
            "{} Your name is {responder}.",
            prompts::CONVERSATION_SYSTEM
        )),
        Message::user(user),
    ]);
    if response.is_error() {
        return Err(CommError::Backend(response.content));
    }
    let content = clean_reply(responder, &response.content);
    if content.is_empty() {
        return Err(CommError::Backend("empty reply".into()));
    }
    transcript.post(responder, &content, tick)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round_index: u32,
    pub messages: usize,
    pub force_closed: bool,
}

/// Run one full round: templated opening, five alternating replies, then
/// belief updates on both sides. A failed turn force-closes the round.
#[allow(clippy::too_many_arguments)]
pub fn run_round(
    initiator: &mut dyn Participant,
    responder: &mut dyn Participant,
    transcript: &mut ChatTranscript,
    task_name: &str,
    trigger: Trigger,
    tick: u64,
    bus: Option<&EventBus>,
) -> Result<RoundReport, CommError> {
    let publish = |event: SessionEvent| {
        if let Some(bus) = bus {
            bus.publish(event);
        }
    };
    let opening = initiate_round(transcript, initiator.id(), task_name, trigger, tick)?;
    let round_index = opening.round_index;
    publish(SessionEvent::Message(opening));
    for turn in 1..ROUND_MESSAGES {
        let speaker: &mut dyn Participant = if turn % 2 == 1 {
            &mut *responder
        } else {
            &mut *initiator
        };
        match speaker.take_turn(transcript, tick) {
            Ok(message) => publish(SessionEvent::Message(message)),
            Err(err) => {
                tracing::warn!(error = %err, round = round_index, turn, "force-closing round");
                if let Some(message) = transcript.force_close(&err.to_string(), tick) {
                    publish(SessionEvent::Message(message));
                }
                break;
            }
        }
    }
    let round = transcript.last_round().expect("round was opened");
    let report = RoundReport {
        round_index,
        messages: round.messages.len(),
        force_closed: round.force_closed,
    };
    publish(SessionEvent::RoundClosed {
        round_index,
        force_closed: report.force_closed,
    });
    let (initiator_human, responder_human) = (initiator.is_human(), responder.is_human());
    initiator.after_round(transcript, responder_human);
    responder.after_round(transcript, initiator_human);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{CausalGraph, MentalModel};
    use crate::gateway::{CallRole, ScriptedOracle};
    use std::sync::Arc;

    fn client(oracle: ScriptedOracle) -> (Arc<ScriptedOracle>, RoleClient) {
        let h = Arc::new(oracle);
        (h.clone(), RoleClient::new(h, CallRole::Conversationalist))
    }

    /// Replies from a fixed list; records after_round calls.
    struct Canned {
        id: String,
        replies: Vec<String>,
        next: usize,
        rounds_seen: Vec<usize>,
        log: Arc<std::sync::Mutex<Vec<String>>>,
    }

    impl Canned {
        fn new(id: &str, replies: &[&str], log: Arc<std::sync::Mutex<Vec<String>>>) -> Self {
            Self {
                id: id.into(),
                replies: replies.iter().map(|s| s.to_string()).collect(),
                next: 0,
                rounds_seen: vec![],
                log,
            }
        }
    }

    impl Participant for Canned {
        fn id(&self) -> &str {
            &self.id
        }
        fn take_turn(
            &mut self,
            transcript: &mut ChatTranscript,
            tick: u64,
        ) -> Result<ChatMessage, CommError> {
            let text = self
                .replies
                .get(self.next)
                .cloned()
                .ok_or(CommError::Backend("out of lines".into()))?;
            self.next += 1;
            transcript.post(&self.id, &text, tick)
        }
        fn after_round(&mut self, transcript: &ChatTranscript, _partner_is_human: bool) {
            self.rounds_seen.push(transcript.rounds.len());
            self.log.lock().unwrap().push(self.id.clone());
        }
    }

    #[test]
    fn scripted_pair_produces_six_alternating_messages() {
        let log = Arc::new(std::sync::Mutex::new(vec![]));
        let mut weak = Canned::new(
            "Weak",
            &["It is night and I can't find a tree.", "Thank you, Strong"],
            log.clone(),
        );
        let mut strong = Canned::new(
            "Strong",
            &[
                "Where are you right now?",
                "Use wait_until_day, then mine a dark_oak_log.",
                "You're welcome, good luck!",
            ],
            log.clone(),
        );
        let mut t = ChatTranscript::new("Weak", "Strong");
        let bus = EventBus::default();
        let sub = bus.subscribe();
        let report = run_round(
            &mut weak,
            &mut strong,
            &mut t,
            "Mine 1 wood log",
            Trigger::FailedAttempt,
            7,
            Some(&bus),
        )
        .unwrap();
        assert_eq!(
            report,
            RoundReport {
                round_index: 0,
                messages: 6,
                force_closed: false
            }
        );
        let round = t.last_round().unwrap();
        assert!(round.is_well_formed());
        assert_eq!(
            round.messages[0].content,
            "Hey, can you help me with Mine 1 wood log?"
        );
        assert_eq!(
            (
                round.messages[4].sender.as_str(),
                round.messages[4].content.as_str()
            ),
            ("Weak", "Thank you, Strong")
        );
        assert_eq!(round.messages[5].sender, "Strong");
        assert_eq!(*log.lock().unwrap(), vec!["Weak", "Strong"]);
        let events: Vec<SessionEvent> = sub.drain();
        let messages = events
            .iter()
            .filter(|e| matches!(e, SessionEvent::Message(_)))
            .count();
        assert_eq!(messages, 6);
        assert!(matches!(
            events.last(),
            Some(SessionEvent::RoundClosed {
                round_index: 0,
                force_closed: false
            })
        ));
    }

    #[test]
    fn failed_turn_force_closes() {
        let log = Arc::new(std::sync::Mutex::new(vec![]));
        let mut weak = Canned::new("Weak", &[], log.clone());
        let mut strong = Canned::new("Strong", &["hi"], log.clone());
        let mut t = ChatTranscript::new("Weak", "Strong");
        let report = run_round(
            &mut weak,
            &mut strong,
            &mut t,
            "Mine 1 dirt",
            Trigger::FailedAttempt,
            0,
            None,
        )
        .unwrap();
        assert!(report.force_closed);
        assert_eq!(report.messages, 3);
        assert!(t.last_round().unwrap().messages[2]
            .content
            .starts_with("[conversation ended:"));
        assert_eq!(log.lock().unwrap().len(), 2);
    }

    #[test]
    fn consecutive_rounds_are_indexed() {
        let log = Arc::new(std::sync::Mutex::new(vec![]));
        let lines = ["a", "b", "c", "d", "e", "f"];
        let mut weak = Canned::new("Weak", &lines, log.clone());
        let mut strong = Canned::new("Strong", &lines, log.clone());
        let mut t = ChatTranscript::new("Weak", "Strong");
        for expected in 0..2 {
            let r = run_round(
                &mut weak,
                &mut strong,
                &mut t,
                "Mine 1 dirt",
                Trigger::FailedAttempt,
                0,
                None,
            )
            .unwrap();
            assert_eq!(r.round_index, expected);
        }
        assert!(t.rounds.iter().all(|r| r.is_well_formed()));
    }

    #[test]
    fn no_help_request_after_success() {
        let mut t = ChatTranscript::new("a", "b");
        assert_eq!(
            initiate_round(&mut t, "a", "Mine 1 dirt", Trigger::SucceededAttempt, 0),
            Err(CommError::NotAfterFailure)
        );
        assert!(t.rounds.is_empty());
        assert!(initiate_round(&mut t, "a", "Mine 1 dirt", Trigger::FlexibleAsk, 0).is_ok());
    }

    #[test]
    fn decision_parsing() {
        for (reply, expected) in [
            ("ASK", Decision::Ask),
            (" ASK.\n", Decision::Ask),
            ("ATTEMPT", Decision::Attempt),
            ("ask", Decision::Attempt),
            ("maybe", Decision::Attempt),
        ] {
            let (_, c) = client(ScriptedOracle::new(reply));
            assert_eq!(
                decide_ask_or_attempt(&c, "Mine 1 dirt", ""),
                expected,
                "{reply:?}"
            );
        }
        let (_, c) = client(ScriptedOracle::failing("down"));
        assert_eq!(
            decide_ask_or_attempt(&c, "Mine 1 dirt", ""),
            Decision::Attempt
        );
    }

    fn night_round() -> ChatTranscript {
        let mut t = ChatTranscript::new("Weak", "Strong");
        t.begin_round("Weak", "Hey, can you help me with Mine 1 wood log?", 7)
            .unwrap();
        t.post("Strong", "What do you see around you?", 7).unwrap();
        t.post(
            "Weak",
            "It is night in a dark forest and I do not have an axe.",
            7,
        )
        .unwrap();
        t
    }

    #[test]
    fn perspective_uses_fixed_prompt_and_is_not_posted() {
        let (oracle, c) = client(ScriptedOracle::new("nothing").when(
            "do not have an axe",
            "Weak's likely needs from Strong include waiting for daylight and crafting a wooden axe.",
        ));
        let mut partner = PartnerModel::new("Weak", true);
        partner.model = MentalModel::Structured(CausalGraph {
            percept: "night".into(),
            ..Default::default()
        });
        let t = night_round();
        let analysis = take_perspective("Strong", &partner, &t, &c).unwrap();
        assert!(analysis.contains("needs") && analysis.contains("daylight"));
        assert_eq!(t.message_count(), 3);
        let prompt = oracle.call_log()[0].last_user().to_string();
        assert!(prompt.starts_with("You are a Minecraft agent named Strong"));
        assert!(prompt.contains("\nWeak: It is night in a dark forest"));
        assert!(prompt.contains("Here is your mental model of Weak: percept: night"));
        assert!(prompt.ends_with("Perspective Analysis:"));

        let empty = ChatTranscript::new("Weak", "Strong");
        assert_eq!(
            take_perspective("Strong", &partner, &empty, &c),
            Err(CommError::NoPartnerMessage("Weak".into()))
        );
        let (_, failing) = client(ScriptedOracle::failing("down"));
        assert_eq!(
            take_perspective("Strong", &partner, &t, &failing),
            Ok(String::new())
        );
    }

    #[test]
    fn reply_prompt_gates_perspective_section() {
        let (oracle, c) = client(ScriptedOracle::new("ok").when(
            "dark forest",
            "Strong: Run wait_until_day first, then mine dark_oak_log.",
        ));
        let mut t = night_round();
        let msg = compose_reply(
            "Strong",
            &mut t,
            &BeliefSet::default(),
            Some("Weak needs daylight."),
            &c,
            400,
            7,
        )
        .unwrap();
        assert!(msg.content.contains("wait_until_day"));
        assert!(!msg.content.starts_with("Strong:"));
        assert!(oracle.call_log()[0]
            .last_user()
            .contains(PERSPECTIVE_HEADER));

        let mut t = night_round();
        compose_reply("Strong", &mut t, &BeliefSet::default(), None, &c, 400, 7).unwrap();
        assert!(!oracle.call_log()[1]
            .last_user()
            .contains(PERSPECTIVE_HEADER));
    }

    #[test]
    fn reply_out_of_turn_and_final_turn() {
        let (_, c) = client(ScriptedOracle::new("ok"));
        let mut t = night_round();
        assert!(matches!(
            compose_reply("Weak", &mut t, &BeliefSet::default(), None, &c, 400, 7),
            Err(CommError::OutOfTurn { turn: 3, .. })
        ));
        compose_reply("Strong", &mut t, &BeliefSet::default(), None, &c, 400, 7).unwrap();
        compose_reply("Weak", &mut t, &BeliefSet::default(), None, &c, 400, 7).unwrap();
        let last =
            compose_reply("Strong", &mut t, &BeliefSet::default(), None, &c, 400, 7).unwrap();
        assert_eq!(last.turn_index, 5);
        assert_eq!(t.last_round().unwrap().state, RoundState::Closed);
        assert_eq!(
            compose_reply("Weak", &mut t, &BeliefSet::default(), None, &c, 400, 7),
            Err(CommError::NoOpenRound)
        );
    }

    #[test]
    fn oversized_replies_are_truncated_to_the_cap() {
        let (_, c) = client(ScriptedOracle::new("x".repeat(MESSAGE_CAP + 20)));
        let mut t = night_round();
        let m = compose_reply("Strong", &mut t, &BeliefSet::default(), None, &c, 400, 7).unwrap();
        assert_eq!(m.content.chars().count(), MESSAGE_CAP);
    }
}
