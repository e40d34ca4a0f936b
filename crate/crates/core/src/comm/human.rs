use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::events::{EventBus, SessionEvent};
use super::transcript::{ChatMessage, ChatTranscript, MESSAGE_CAP};
use super::{CommError, Participant};

/// The turn a human is expected to fill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnInfo {
    pub agent_id: String,
    pub round_index: u32,
    pub turn_index: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("it is not the human's turn")]
    NotYourTurn { awaiting: Option<TurnInfo> },
    #[error(transparent)]
    Invalid(CommError),
}

#[derive(Default)]
struct GateState {
    awaiting: Option<TurnInfo>,
    inbox: Option<String>,
}

/// Hand-off point between a blocked trial and an external message source.
/// Exactly one message is accepted per awaited turn.
#[derive(Default)]
pub struct HumanGate {
    state: Mutex<GateState>,
    ready: Condvar,
}

impl std::fmt::Debug for HumanGate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HumanGate")
            .field("awaiting", &self.awaiting())
            .finish()
    }
}

impl HumanGate {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn awaiting(&self) -> Option<TurnInfo> {
        self.state.lock().expect("gate poisoned").awaiting.clone()
    }

    /// Deliver the human's message for the awaited turn.
    pub fn submit(&self, content: &str) -> Result<TurnInfo, GateError> {
        let mut state = self.state.lock().expect("gate poisoned");
        let Some(turn) = state.awaiting.clone() else {
            return Err(GateError::NotYourTurn { awaiting: None });
        };
        if content.trim().is_empty() {
            return Err(GateError::Invalid(CommError::EmptyMessage));
        }
        let len = content.chars().count();
        if len > MESSAGE_CAP {
            return Err(GateError::Invalid(CommError::TooLong {
                len,
                cap: MESSAGE_CAP,
            }));
        }
        state.awaiting = None;
        state.inbox = Some(content.to_string());
        self.ready.notify_all();
        Ok(turn)
    }

    fn wait(&self, turn: TurnInfo, timeout: Option<Duration>) -> Option<String> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut state = self.state.lock().expect("gate poisoned");
        state.inbox = None;
        state.awaiting = Some(turn);
        loop {
            if let Some(text) = state.inbox.take() {
                return Some(text);
            }
            state = match deadline {
                None => self.ready.wait(state).expect("gate poisoned"),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        state.awaiting = None;
                        return None;
                    }
                    self.ready
                        .wait_timeout(state, d - now)
                        .expect("gate poisoned")
                        .0
                }
            };
        }
    }
}

/// A participant whose turns come from a person through a [`HumanGate`].
/// It holds no beliefs of its own.
pub struct HumanExpert {
    id: String,
    gate: Arc<HumanGate>,
    timeout: Option<Duration>,
    bus: Option<EventBus>,
}

impl HumanExpert {
    pub fn new(id: impl Into<String>, gate: Arc<HumanGate>) -> Self {
        Self {
            id: id.into(),
            gate,
            timeout: None,
            bus: None,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn with_bus(mut self, bus: EventBus) -> Self {
        self.bus = Some(bus);
        self
    }
}

impl Participant for HumanExpert {
    fn id(&self) -> &str {
        &self.id
    }

    fn is_human(&self) -> bool {
        true
    }

    fn take_turn(
        &mut self,
        transcript: &mut ChatTranscript,
        tick: u64,
    ) -> Result<ChatMessage, CommError> {
        let round = transcript.open_round().ok_or(CommError::NoOpenRound)?;
        let turn = TurnInfo {
            agent_id: self.id.clone(),
            round_index: round.round_index,
            turn_index: round.messages.len() as u8,
        };
        if let Some(bus) = &self.bus {
            bus.publish(SessionEvent::AwaitingHuman {
                agent_id: turn.agent_id.clone(),
                round_index: turn.round_index,
                turn_index: turn.turn_index,
            });
        }
        let text = self
            .gate
            .wait(turn, self.timeout)
            .ok_or(CommError::HumanTimeout)?;
        transcript.post(&self.id, &text, tick)
    }

    fn after_round(&mut self, _transcript: &ChatTranscript, _partner_is_human: bool) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn submit_without_pending_turn_is_rejected() {
        let gate = HumanGate::new();
        assert_eq!(
            gate.submit("hello"),
            Err(GateError::NotYourTurn { awaiting: None })
        );
    }

    #[test]
    fn blocked_turn_receives_submitted_message() {
        let gate = HumanGate::new();
        let mut human = HumanExpert::new("Human", gate.clone());
        let mut t = ChatTranscript::new("Novice", "Human");
        t.begin_round("Novice", "Hey, can you help me with Mine 1 dirt?", 0)
            .unwrap();
        let submitter = std::thread::spawn({
            let gate = gate.clone();
            move || loop {
                if gate.awaiting().is_some() {
                    let turn = gate.submit("Just punch the dirt block.").unwrap();
                    assert!(gate.submit("second").is_err());
                    return turn;
                }
                std::thread::sleep(Duration::from_millis(2));
            }
        });
        let message = human.take_turn(&mut t, 0).unwrap();
        let turn = submitter.join().unwrap();
        assert_eq!(
            turn,
            TurnInfo {
                agent_id: "Human".into(),
                round_index: 0,
                turn_index: 1
            }
        );
        assert_eq!(message.content, "Just punch the dirt block.");
        assert_eq!(message.turn_index, 1);
    }

    #[test]
    fn timeout_fails_the_turn() {
        let gate = HumanGate::new();
        let mut human =
            HumanExpert::new("Human", gate.clone()).with_timeout(Duration::from_millis(20));
        let mut t = ChatTranscript::new("Novice", "Human");
        t.begin_round("Novice", "hi", 0).unwrap();
        assert_eq!(human.take_turn(&mut t, 0), Err(CommError::HumanTimeout));
        assert_eq!(gate.awaiting(), None);
    }

    #[test]
    fn oversized_human_message_is_rejected_and_turn_stays_open() {
        let gate = HumanGate::new();
        gate.state.lock().unwrap().awaiting = Some(TurnInfo {
            agent_id: "H".into(),
            round_index: 0,
            turn_index: 1,
        });
        assert!(matches!(
            gate.submit(&"x".repeat(MESSAGE_CAP + 1)),
            Err(GateError::Invalid(CommError::TooLong { .. }))
        ));
        assert!(gate.awaiting().is_some());
    }
}
