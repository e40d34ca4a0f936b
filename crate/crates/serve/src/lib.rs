//! Read endpoints, the human-turn endpoint and a live event stream for one
//! session. All reads are projections of the session's event history; the
//! only write is a message for an awaited human turn.

use std::collections::BTreeMap;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::{Deserialize, Serialize};
use tomcraft_core::agent::{ScheduleStep, TrialRecord};
use tomcraft_core::belief::BeliefSet;
use tomcraft_core::comm::{ChatMessage, EventBus, GateError, HumanGate, SessionEvent, TurnInfo};
use tomcraft_core::memory::MemoryDump;

pub const API_PREFIX: &str = "/api/v1";
const DEFAULT_WRITER: &str = "default";
const POLL: Duration = Duration::from_millis(100);

/// One observable session: its event bus and, for live human-expert runs,
/// the gate the human's messages go through.
pub struct Session {
    pub bus: EventBus,
    pub gate: Option<Arc<HumanGate>>,
    writer: Mutex<Option<String>>,
}

impl Session {
    pub fn live(bus: EventBus, gate: Option<Arc<HumanGate>>) -> Arc<Self> {
        Arc::new(Self {
            bus,
            gate,
            writer: Mutex::new(None),
        })
    }

    /// A read-only session replaying finished trial records.
    pub fn replay(trials: &[TrialRecord]) -> Arc<Self> {
        let bus = EventBus::default();
        for t in trials {
            bus.publish(SessionEvent::TrialStarted {
                trial: t.trial_id,
                task: t.task.clone(),
                agent: t.agent_id.clone(),
                partner: t.partner_id.clone(),
            });
            for step in &t.schedule {
                match *step {
                    ScheduleStep::Attempt(i) => {
                        if let Some(a) = t.attempts.iter().find(|a| a.attempt == i) {
                            bus.publish(SessionEvent::Attempt {
                                agent_id: t.agent_id.clone(),
                                attempt: a.attempt,
                                tick: a.tick_after,
                                success: a.verdict.success,
                                feedback: a.verdict.message.clone(),
                            });
                        }
                    }
                    ScheduleStep::Round(i) => {
                        if let Some(r) = t.rounds.iter().find(|r| r.round_index == i) {
                            for m in &r.messages {
                                bus.publish(SessionEvent::Message(m.clone()));
                            }
                            bus.publish(SessionEvent::RoundClosed {
                                round_index: i,
                                force_closed: r.force_closed,
                            });
                        }
                    }
                }
            }
            bus.publish(SessionEvent::TrialFinished {
                trial: t.trial_id,
                success: t.succeeded(),
            });
        }
        Self::live(bus, None)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AttemptView {
    pub agent_id: String,
    pub attempt: u32,
    pub tick: u64,
    pub success: bool,
    pub feedback: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StateView {
    pub trial: Option<u32>,
    pub task: Option<String>,
    pub agent: Option<String>,
    pub partner: Option<String>,
    pub attempts: Vec<AttemptView>,
    pub rounds_closed: u32,
    /// `Some(success)` once the current trial has ended.
    pub finished: Option<bool>,
    pub awaiting: Option<TurnInfo>,
    pub events: usize,
}

/// Latest-wins projection of an event history.
#[derive(Debug, Default)]
struct Projection {
    state: StateView,
    transcript: Vec<ChatMessage>,
    beliefs: BTreeMap<String, BeliefSet>,
    memory: BTreeMap<String, MemoryDump>,
}

fn project(events: &[SessionEvent]) -> Projection {
    let mut p = Projection::default();
    for event in events {
        match event {
            SessionEvent::TrialStarted {
                trial,
                task,
                agent,
                partner,
            } => {
                p.state = StateView {
                    trial: Some(*trial),
                    task: Some(task.clone()),
                    agent: Some(agent.clone()),
                    partner: partner.clone(),
                    ..StateView::default()
                };
                p.transcript.clear();
            }
            SessionEvent::Message(m) => p.transcript.push(m.clone()),
            SessionEvent::RoundClosed { .. } => p.state.rounds_closed += 1,
            SessionEvent::AwaitingHuman { .. } => {}
            SessionEvent::Beliefs { agent_id, beliefs } => {
                p.beliefs.insert(agent_id.clone(), beliefs.clone());
            }
            SessionEvent::Memory { agent_id, memory } => {
                p.memory.insert(agent_id.clone(), memory.clone());
            }
            SessionEvent::Attempt {
                agent_id,
                attempt,
                tick,
                success,
                feedback,
            } => p.state.attempts.push(AttemptView {
                agent_id: agent_id.clone(),
                attempt: *attempt,
                tick: *tick,
                success: *success,
                feedback: feedback.clone(),
            }),
            SessionEvent::TrialFinished { success, .. } => p.state.finished = Some(*success),
        }
    }
    p.state.events = events.len();
    p
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostMessage {
    pub content: String,
    /// Identifies the client holding the human seat; the first writer
    /// claims it for the session.
    #[serde(default)]
    pub writer: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accepted {
    pub accepted: TurnInfo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub error: String,
    #[serde(default)]
    pub awaiting: Option<TurnInfo>,
}

fn reject(status: StatusCode, error: impl Into<String>, awaiting: Option<TurnInfo>) -> Response {
    (
        status,
        Json(ApiError {
            error: error.into(),
            awaiting,
        }),
    )
        .into_response()
}

type Shared = State<Arc<Session>>;

async fn state(State(s): Shared) -> Json<StateView> {
    let mut view = project(&s.bus.history()).state;
    view.awaiting = s.gate.as_ref().and_then(|g| g.awaiting());
    Json(view)
}

async fn transcript(State(s): Shared) -> Json<Vec<ChatMessage>> {
    Json(project(&s.bus.history()).transcript)
}

async fn beliefs(State(s): Shared) -> Json<BTreeMap<String, BeliefSet>> {
    Json(project(&s.bus.history()).beliefs)
}

async fn agent_beliefs(State(s): Shared, Path(agent): Path<String>) -> Response {
    match project(&s.bus.history()).beliefs.remove(&agent) {
        Some(b) => Json(b).into_response(),
        None => reject(
            StatusCode::NOT_FOUND,
            format!("no beliefs for {agent}"),
            None,
        ),
    }
}

async fn memory(State(s): Shared) -> Json<BTreeMap<String, MemoryDump>> {
    Json(project(&s.bus.history()).memory)
}

async fn agent_memory(State(s): Shared, Path(agent): Path<String>) -> Response {
    match project(&s.bus.history()).memory.remove(&agent) {
        Some(m) => Json(m).into_response(),
        None => reject(
            StatusCode::NOT_FOUND,
            format!("no memory for {agent}"),
            None,
        ),
    }
}

async fn post_message(State(s): Shared, Json(body): Json<PostMessage>) -> Response {
    let Some(gate) = &s.gate else {
        return reject(
            StatusCode::NOT_FOUND,
            "this session has no human seat",
            None,
        );
    };
    let writer = body.writer.unwrap_or_else(|| DEFAULT_WRITER.to_string());
    {
        let mut holder = s.writer.lock().expect("writer lock poisoned");
        match holder.as_deref() {
            Some(w) if w != writer => {
                return reject(
                    StatusCode::CONFLICT,
                    "another writer holds the human seat",
                    gate.awaiting(),
                )
            }
            Some(_) => {}
            None => *holder = Some(writer),
        }
    }
    match gate.submit(&body.content) {
        Ok(turn) => Json(Accepted { accepted: turn }).into_response(),
        Err(GateError::NotYourTurn { awaiting }) => {
            reject(StatusCode::CONFLICT, "it is not the human's turn", awaiting)
        }
        Err(GateError::Invalid(e)) => reject(
            StatusCode::UNPROCESSABLE_ENTITY,
            e.to_string(),
            gate.awaiting(),
        ),
    }
}

fn event_name(event: &SessionEvent) -> &'static str {
    match event {
        SessionEvent::TrialStarted { .. } => "trial_started",
        SessionEvent::Message(_) => "message",
        SessionEvent::RoundClosed { .. } => "round_closed",
        SessionEvent::AwaitingHuman { .. } => "awaiting_human",
        SessionEvent::Beliefs { .. } => "beliefs",
        SessionEvent::Memory { .. } => "memory",
        SessionEvent::Attempt { .. } => "attempt",
        SessionEvent::TrialFinished { .. } => "trial_finished",
    }
}

fn sse_event(seq: u64, event: &SessionEvent) -> Event {
    Event::default()
        .id(seq.to_string())
        .event(event_name(event))
        .data(serde_json::to_string(event).expect("event serializes"))
}

/// History then live events. A `Last-Event-ID` header resumes after that
/// sequence number.
async fn events(
    State(s): Shared,
    headers: HeaderMap,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let resume_from = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok())
        .map_or(0, |id| id + 1);
    let (history, subscription) = s.bus.subscribe_with_history();
    let (tx, rx) = tokio::sync::mpsc::unbounded_channel();
    for (seq, event) in history.iter().enumerate().skip(resume_from as usize) {
        let _ = tx.send(sse_event(seq as u64, event));
    }
    // The bus is synchronous; forward from a blocking thread until the
    // client goes away.
    std::thread::spawn(move || loop {
        if tx.is_closed() {
            break;
        }
        if let Some((seq, event)) = subscription.recv_timeout(POLL) {
            if seq >= resume_from && tx.send(sse_event(seq, &event)).is_err() {
                break;
            }
        }
    });
    let stream =
        futures::stream::unfold(
            rx,
            |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) },
        );
    Sse::new(stream).keep_alive(KeepAlive::default())
}

pub fn router(session: Arc<Session>) -> Router {
    Router::new()
        .route(&format!("{API_PREFIX}/state"), get(state))
        .route(&format!("{API_PREFIX}/transcript"), get(transcript))
        .route(&format!("{API_PREFIX}/beliefs"), get(beliefs))
        .route(&format!("{API_PREFIX}/beliefs/:agent"), get(agent_beliefs))
        .route(&format!("{API_PREFIX}/memory"), get(memory))
        .route(&format!("{API_PREFIX}/memory/:agent"), get(agent_memory))
        .route(&format!("{API_PREFIX}/message"), post(post_message))
        .route(&format!("{API_PREFIX}/events"), get(events))
        .with_state(session)
}

/// Serve until the listener fails.
pub async fn serve(
    listener: tokio::net::TcpListener,
    session: Arc<Session>,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "serving session");
    axum::serve(listener, router(session)).await
}
