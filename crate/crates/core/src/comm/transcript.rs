use serde::{Deserialize, Serialize};

use super::CommError;

/// Messages per closed round.
pub const ROUND_MESSAGES: usize = 6;
/// Longest chat message in characters.
pub const MESSAGE_CAP: usize = 1500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub sender: String,
    pub recipient: String,
    pub content: String,
    pub round_index: u32,
    pub turn_index: u8,
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommunicationRound {
    pub round_index: u32,
    pub initiator: String,
    pub responder: String,
    pub messages: Vec<ChatMessage>,
    pub state: RoundState,
    /// Closed early after a hard failure; such a round may hold fewer
    /// than six messages.
    #[serde(default)]
    pub force_closed: bool,
}

impl CommunicationRound {
    /// Who speaks at `turn`: the initiator on even turns.
    pub fn speaker_at(&self, turn: usize) -> &str {
        if turn.is_multiple_of(2) {
            &self.initiator
        } else {
            &self.responder
        }
    }

    pub fn next_speaker(&self) -> Option<&str> {
        (self.state == RoundState::Open).then(|| self.speaker_at(self.messages.len()))
    }

    /// Closed normally, six messages, strict alternation, turn = position.
    pub fn is_well_formed(&self) -> bool {
        self.state == RoundState::Closed
            && !self.force_closed
            && self.messages.len() == ROUND_MESSAGES
            && self.messages.iter().enumerate().all(|(i, m)| {
                m.turn_index as usize == i
                    && m.round_index == self.round_index
                    && m.sender == self.speaker_at(i)
                    && m.recipient == self.speaker_at(i + 1)
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub participants: (String, String),
    pub rounds: Vec<CommunicationRound>,
}

/// One line of a serialized transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub sender: String,
    pub round: u32,
    pub turn: u8,
    pub content: String,
}

impl ChatTranscript {
    pub fn new(a: impl Into<String>, b: impl Into<String>) -> Self {
        Self {
            participants: (a.into(), b.into()),
            rounds: Vec::new(),
        }
    }

    fn other(&self, id: &str) -> Result<String, CommError> {
        let (a, b) = &self.participants;
        if id == a {
            Ok(b.clone())
        } else if id == b {
            Ok(a.clone())
        } else {
            Err(CommError::NotParticipant(id.to_string()))
        }
    }

    pub fn open_round(&self) -> Option<&CommunicationRound> {
        self.rounds.last().filter(|r| r.state == RoundState::Open)
    }

    pub fn last_round(&self) -> Option<&CommunicationRound> {
        self.rounds.last()
    }

    pub fn message_count(&self) -> usize {
        self.rounds.iter().map(|r| r.messages.len()).sum()
    }

    pub fn messages_from(&self, sender: &str) -> usize {
        self.rounds
            .iter()
            .flat_map(|r| &r.messages)
            .filter(|m| m.sender == sender)
            .count()
    }

    pub fn next_speaker(&self) -> Option<&str> {
        self.open_round().and_then(CommunicationRound::next_speaker)
    }

    fn check_content(content: &str) -> Result<(), CommError> {
        if content.trim().is_empty() {
            return Err(CommError::EmptyMessage);
        }
        let len = content.chars().count();
        if len > MESSAGE_CAP {
            return Err(CommError::TooLong {
                len,
                cap: MESSAGE_CAP,
            });
        }
        Ok(())
    }

    /// Open a new round with the initiator's first message.
    pub fn begin_round(
        &mut self,
        initiator: &str,
        content: &str,
        tick: u64,
    ) -> Result<ChatMessage, CommError> {
        if self.open_round().is_some() {
            return Err(CommError::RoundAlreadyOpen);
        }
        Self::check_content(content)?;
        let responder = self.other(initiator)?;
        let round_index = self.rounds.len() as u32;
        let message = ChatMessage {
            sender: initiator.to_string(),
            recipient: responder.clone(),
            content: content.to_string(),
            round_index,
            turn_index: 0,
            tick,
        };
        self.rounds.push(CommunicationRound {
            round_index,
            initiator: initiator.to_string(),
            responder,
            messages: vec![message.clone()],
            state: RoundState::Open,
            force_closed: false,
        });
        Ok(message)
    }

    /// Append the next message of the open round; the sixth closes it.
    pub fn post(
        &mut self,
        sender: &str,
        content: &str,
        tick: u64,
    ) -> Result<ChatMessage, CommError> {
        let round = self
            .rounds
            .last_mut()
            .filter(|r| r.state == RoundState::Open)
            .ok_or(CommError::NoOpenRound)?;
        let turn = round.messages.len();
        let expected = round.speaker_at(turn).to_string();
        if sender != expected {
            return Err(CommError::OutOfTurn {
                expected,
                got: sender.to_string(),
                turn,
            });
        }
        Self::check_content(content)?;
        let message = ChatMessage {
            sender: sender.to_string(),
            recipient: round.speaker_at(turn + 1).to_string(),
            content: content.to_string(),
            round_index: round.round_index,
            turn_index: turn as u8,
            tick,
        };
        round.messages.push(message.clone());
        if round.messages.len() == ROUND_MESSAGES {
            round.state = RoundState::Closed;
        }
        Ok(message)
    }

    /// Close the open round after a hard failure, appending a synthesized
    /// terminal message from whoever was due to speak.
    pub fn force_close(&mut self, reason: &str, tick: u64) -> Option<ChatMessage> {
        let round = self
            .rounds
            .last_mut()
            .filter(|r| r.state == RoundState::Open)?;
        let turn = round.messages.len();
        let message = ChatMessage {
            sender: round.speaker_at(turn).to_string(),
            recipient: round.speaker_at(turn + 1).to_string(),
            content: format!("[conversation ended: {reason}]"),
            round_index: round.round_index,
            turn_index: turn as u8,
            tick,
        };
        round.messages.push(message.clone());
        round.state = RoundState::Closed;
        round.force_closed = true;
        Some(message)
    }

    /// Plain-text conversation for prompts, one `name: message` per line.
    pub fn render(&self) -> String {
        self.rounds
            .iter()
            .flat_map(|r| &r.messages)
            .map(|m| format!("\n{}: {}", m.sender, m.content))
            .collect()
    }

    /// A transcript holding only the most recent round.
    pub fn latest_round_only(&self) -> ChatTranscript {
        ChatTranscript {
            participants: self.participants.clone(),
            rounds: self.rounds.last().cloned().into_iter().collect(),
        }
    }

    pub fn to_records(&self) -> Vec<TranscriptRecord> {
        self.rounds
            .iter()
            .flat_map(|r| &r.messages)
            .map(|m| TranscriptRecord {
                sender: m.sender.clone(),
                round: m.round_index,
                turn: m.turn_index,
                content: m.content.clone(),
            })
            .collect()
    }

    pub fn to_lines(&self) -> String {
        self.to_records()
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}
