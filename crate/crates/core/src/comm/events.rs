use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::transcript::ChatMessage;
use crate::belief::BeliefSet;
use crate::memory::MemoryDump;

/// Everything a live observer can see of a running session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SessionEvent {
    TrialStarted {
        trial: u32,
        task: String,
        agent: String,
        partner: Option<String>,
    },
    Message(ChatMessage),
    RoundClosed {
        round_index: u32,
        force_closed: bool,
    },
    AwaitingHuman {
        agent_id: String,
        round_index: u32,
        turn_index: u8,
    },
    Beliefs {
        agent_id: String,
        beliefs: BeliefSet,
    },
    Memory {
        agent_id: String,
        memory: MemoryDump,
    },
    Attempt {
        agent_id: String,
        attempt: u32,
        tick: u64,
        success: bool,
        feedback: String,
    },
    TrialFinished {
        trial: u32,
        success: bool,
    },
}

#[derive(Default)]
struct Inner {
    history: Vec<SessionEvent>,
    subscribers: Vec<Sender<(u64, SessionEvent)>>,
}

/// Ordered fan-out of session events. Every event gets a sequence number
/// equal to its position in the retained history.
#[derive(Clone, Default)]
pub struct EventBus {
    inner: Arc<Mutex<Inner>>,
}

impl std::fmt::Debug for EventBus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EventBus")
            .field("events", &self.len())
            .finish()
    }
}

pub struct Subscription {
    rx: Receiver<(u64, SessionEvent)>,
}

impl Subscription {
    pub fn recv_timeout(&self, timeout: Duration) -> Option<(u64, SessionEvent)> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn recv(&self) -> Option<(u64, SessionEvent)> {
        self.rx.recv().ok()
    }

    /// Events already delivered, without blocking.
    pub fn drain(&self) -> Vec<SessionEvent> {
        self.rx.try_iter().map(|(_, e)| e).collect()
    }
}

impl EventBus {
    pub fn publish(&self, event: SessionEvent) {
        let mut inner = self.inner.lock().expect("event bus poisoned");
        let seq = inner.history.len() as u64;
        inner.history.push(event.clone());
        inner
            .subscribers
            .retain(|tx| tx.send((seq, event.clone())).is_ok());
    }

    /// Future events only.
    pub fn subscribe(&self) -> Subscription {
        self.subscribe_with_history().1
    }

    /// The history so far plus a subscription to everything after it, with
    /// no gap or overlap between the two.
    pub fn subscribe_with_history(&self) -> (Vec<SessionEvent>, Subscription) {
        let (tx, rx) = mpsc::channel();
        let mut inner = self.inner.lock().expect("event bus poisoned");
        inner.subscribers.push(tx);
        (inner.history.clone(), Subscription { rx })
    }

    pub fn history(&self) -> Vec<SessionEvent> {
        self.inner
            .lock()
            .expect("event bus poisoned")
            .history
            .clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("event bus poisoned").history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
