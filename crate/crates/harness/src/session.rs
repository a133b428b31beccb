//! HTTP and WebSocket access to interactive episodes.
//!
//! Each session runs the ordinary episode driver on its own thread with a
//! [`ChannelAgent`] in place of a process. The driver's pending request is
//! published as a [`Snapshot`]; a reply is accepted only when its kind matches
//! what is pending, otherwise the request is answered with 409.
//!
//! Routes:
//! - `POST /sessions` creates a session and returns its first snapshot
//! - `GET /sessions/{id}` current snapshot
//! - `GET /sessions/{id}/briefing`, `GET /sessions/{id}/observation`
//! - `POST /sessions/{id}/ack|action|probe|changes|answer` submit a reply
//! - `GET /sessions/{id}/scores` the finished record (409 until then)
//! - `GET /sessions/{id}/ws` a single WebSocket writer for the session

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gridmind_core::env::Briefing;
use gridmind_core::probe::CognitiveMap;
use gridmind_core::scenegen::{generate_scene, SceneConfig};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::watch;

use crate::agents::{Agent, AgentError, DEFAULT_TIMEOUT_SECS};
use crate::episode::{run_episode, EpisodeConfig, EpisodeRecord};
use crate::protocol::{ChangeClaim, Feedback, FromAgent, ReplyKind, ToAgent};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateSession {
    pub seed: u64,
    #[serde(default)]
    pub scene: Option<SceneConfig>,
    #[serde(default)]
    pub episode: EpisodeConfig,
    /// Per-request timeout; an expired action becomes an Observe.
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_SECS
}

/// What the driver is waiting for.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub id: u64,
    /// Increments with every request the driver sends.
    pub seq: u64,
    pub pending: Option<ToAgent>,
    pub expects: Option<ReplyKind>,
    pub finished: bool,
    pub error: Option<String>,
}

struct Session {
    snapshot: watch::Receiver<Snapshot>,
    replies: mpsc::Sender<(u64, FromAgent)>,
    /// Last seq a reply was accepted for; guards against double submits.
    answered: Mutex<u64>,
    briefing: Mutex<Option<Briefing>>,
    observation: Mutex<Option<Feedback>>,
    record: Mutex<Option<EpisodeRecord>>,
    ws_attached: AtomicBool,
}

/// The driver side of a session.
struct ChannelAgent {
    id: u64,
    /// Weak, so a dropped session also stops its driver.
    session: Weak<Session>,
    publish: watch::Sender<Snapshot>,
    replies: mpsc::Receiver<(u64, FromAgent)>,
    timeout: Duration,
}

impl Agent for ChannelAgent {
    fn id(&self) -> String {
        format!("session:{}", self.id)
    }

    fn respond(&mut self, msg: &ToAgent) -> Result<FromAgent, AgentError> {
        {
            let session = self.session.upgrade().ok_or(AgentError::Closed)?;
            match msg {
                ToAgent::Briefing { briefing } => *session.briefing.lock().unwrap() = Some(briefing.clone()),
                ToAgent::Step { last: Some(f), .. } => *session.observation.lock().unwrap() = Some(f.clone()),
                _ => {}
            }
        }
        let mut seq = 0;
        self.publish.send_modify(|s| {
            s.seq += 1;
            s.pending = Some(msg.clone());
            s.expects = Some(msg.expects());
            seq = s.seq;
        });
        let deadline = std::time::Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(std::time::Instant::now());
            match self.replies.recv_timeout(left) {
                Ok((s, reply)) if s == seq => return Ok(reply),
                Ok(_) => continue,
                Err(mpsc::RecvTimeoutError::Timeout) => return Err(AgentError::Timeout(self.timeout)),
                Err(mpsc::RecvTimeoutError::Disconnected) => return Err(AgentError::Closed),
            }
        }
    }
}

#[derive(Clone, Default)]
pub struct AppState {
    sessions: Arc<Mutex<HashMap<u64, Arc<Session>>>>,
    next: Arc<AtomicU64>,
}

pub fn router() -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(snapshot))
        .route("/sessions/{id}/briefing", get(briefing))
        .route("/sessions/{id}/observation", get(observation))
        .route("/sessions/{id}/ack", post(ack))
        .route("/sessions/{id}/action", post(action))
        .route("/sessions/{id}/probe", post(probe))
        .route("/sessions/{id}/changes", post(changes))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/scores", get(scores))
        .route("/sessions/{id}/ws", get(ws))
        .with_state(AppState::default())
}

/// Serve until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

fn err(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn lookup(state: &AppState, id: u64) -> Option<Arc<Session>> {
    state.sessions.lock().unwrap().get(&id).cloned()
}

fn missing() -> Response {
    err(StatusCode::NOT_FOUND, "no such session")
}

async fn create(State(state): State<AppState>, Json(req): Json<CreateSession>) -> Response {
    let scene_cfg = SceneConfig { seed: req.seed, ..req.scene.clone().unwrap_or_default() };
    let scene = match generate_scene(&scene_cfg) {
        Ok(s) => s,
        Err(e) => return err(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let id = state.next.fetch_add(1, Ordering::Relaxed) + 1;
    let (publish, rx) = watch::channel(Snapshot { id, ..Snapshot::default() });
    let (tx, replies) = mpsc::channel();
    let session = Arc::new(Session {
        snapshot: rx.clone(),
        replies: tx,
        answered: Mutex::new(0),
        briefing: Mutex::new(None),
        observation: Mutex::new(None),
        record: Mutex::new(None),
        ws_attached: AtomicBool::new(false),
    });
    state.sessions.lock().unwrap().insert(id, session.clone());
    let hash = hex::encode(&Sha256::digest(serde_json::to_vec(&req).expect("request serializes"))[..8]);
    let mut agent = ChannelAgent {
        id,
        session: Arc::downgrade(&session),
        publish,
        replies,
        timeout: Duration::from_secs(req.timeout_secs.max(1)),
    };
    let cfg = req.episode.clone();
    thread::spawn(move || {
        let result = run_episode(&mut agent, &cfg, &scene, &hash);
        let error = result.as_ref().err().map(|e| e.to_string());
        if let (Ok(rec), Some(session)) = (result, agent.session.upgrade()) {
            *session.record.lock().unwrap() = Some(rec);
        }
        agent.publish.send_modify(|s| {
            s.pending = None;
            s.expects = None;
            s.finished = true;
            s.error = error;
        });
    });
    let snap = next_snapshot(rx, 0).await;
    (StatusCode::CREATED, Json(snap)).into_response()
}

/// Wait until the session moves past `seq`.
async fn next_snapshot(mut rx: watch::Receiver<Snapshot>, seq: u64) -> Snapshot {
    let _ = rx.wait_for(|s| s.seq > seq || s.finished).await;
    let snap = rx.borrow().clone();
    snap
}

async fn snapshot(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    match lookup(&state, id) {
        Some(s) => Json(s.snapshot.borrow().clone()).into_response(),
        None => missing(),
    }
}

async fn briefing(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    match lookup(&state, id) {
        Some(s) => match s.briefing.lock().unwrap().clone() {
            Some(b) => Json(b).into_response(),
            None => err(StatusCode::CONFLICT, "no briefing yet"),
        },
        None => missing(),
    }
}

async fn observation(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    match lookup(&state, id) {
        Some(s) => match s.observation.lock().unwrap().clone() {
            Some(f) => Json(f).into_response(),
            None => err(StatusCode::CONFLICT, "no action taken yet"),
        },
        None => missing(),
    }
}

async fn scores(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    let s = match lookup(&state, id) {
        Some(s) => s,
        None => return missing(),
    };
    if !s.snapshot.borrow().finished {
        return err(StatusCode::CONFLICT, "session still running");
    }
    let record = s.record.lock().unwrap().clone();
    match record {
        Some(rec) => Json(rec).into_response(),
        None => err(StatusCode::INTERNAL_SERVER_ERROR, s.snapshot.borrow().error.clone().unwrap_or_default()),
    }
}

/// Hand a reply to the driver if it matches the pending request.
fn offer(s: &Session, reply: FromAgent) -> Result<u64, (StatusCode, String)> {
    let mut answered = s.answered.lock().unwrap();
    let snap = s.snapshot.borrow().clone();
    let expected = match (&snap.expects, snap.finished) {
        (_, true) => return Err((StatusCode::CONFLICT, "session finished".into())),
        (None, _) => return Err((StatusCode::CONFLICT, "nothing pending".into())),
        (Some(k), _) => *k,
    };
    if *answered >= snap.seq {
        return Err((StatusCode::CONFLICT, "reply already received for this turn".into()));
    }
    if reply.kind() != expected {
        return Err((StatusCode::CONFLICT, format!("expected {expected:?}, got {:?}", reply.kind())));
    }
    s.replies.send((snap.seq, reply)).map_err(|_| (StatusCode::GONE, "session driver stopped".to_string()))?;
    *answered = snap.seq;
    Ok(snap.seq)
}

async fn submit(state: AppState, id: u64, reply: FromAgent) -> Response {
    let s = match lookup(&state, id) {
        Some(s) => s,
        None => return missing(),
    };
    if s.ws_attached.load(Ordering::Acquire) {
        return err(StatusCode::CONFLICT, "a WebSocket client owns this session");
    }
    match offer(&s, reply) {
        Ok(seq) => Json(next_snapshot(s.snapshot.clone(), seq).await).into_response(),
        Err((code, msg)) => err(code, msg),
    }
}

#[derive(Deserialize)]
struct ActionBody {
    action: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ProbeBody {
    Map { map: CognitiveMap },
    Uncertainty { selected: Vec<u32> },
}

#[derive(Deserialize)]
struct ChangesBody {
    claims: Vec<ChangeClaim>,
}

#[derive(Deserialize)]
struct AnswerBody {
    text: String,
}

async fn ack(State(state): State<AppState>, Path(id): Path<u64>) -> Response {
    submit(state, id, FromAgent::Ack).await
}

async fn action(State(state): State<AppState>, Path(id): Path<u64>, Json(b): Json<ActionBody>) -> Response {
    submit(state, id, FromAgent::Action { action: b.action }).await
}

async fn probe(State(state): State<AppState>, Path(id): Path<u64>, Json(b): Json<ProbeBody>) -> Response {
    let reply = match b {
        ProbeBody::Map { map } => FromAgent::Map { map },
        ProbeBody::Uncertainty { selected } => FromAgent::Uncertainty { selected },
    };
    submit(state, id, reply).await
}

async fn changes(State(state): State<AppState>, Path(id): Path<u64>, Json(b): Json<ChangesBody>) -> Response {
    submit(state, id, FromAgent::Changes { claims: b.claims }).await
}

async fn answer(State(state): State<AppState>, Path(id): Path<u64>, Json(b): Json<AnswerBody>) -> Response {
    submit(state, id, FromAgent::Answer { text: b.text }).await
}

async fn ws(State(state): State<AppState>, Path(id): Path<u64>, upgrade: WebSocketUpgrade) -> Response {
    let s = match lookup(&state, id) {
        Some(s) => s,
        None => return missing(),
    };
    if s.ws_attached.swap(true, Ordering::AcqRel) {
        return err(StatusCode::CONFLICT, "session already has a WebSocket client");
    }
    upgrade.on_upgrade(move |socket| async move {
        drive_socket(socket, &s).await;
        s.ws_attached.store(false, Ordering::Release);
    })
}

/// Push every snapshot as a text frame; read `FromAgent` replies back. A
/// rejected reply yields an `{"error", "status"}` frame. The socket closes
/// after the finished snapshot is sent.
async fn drive_socket(mut socket: WebSocket, s: &Session) {
    let mut rx = s.snapshot.clone();
    let mut sent = None;
    loop {
        let snap = rx.borrow_and_update().clone();
        if sent != Some(snap.seq) || snap.finished {
            let text = serde_json::to_string(&snap).expect("snapshot serializes");
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
            sent = Some(snap.seq);
            if snap.finished {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
        }
        tokio::select! {
            changed = rx.changed() => if changed.is_err() { return },
            msg = socket.recv() => {
                let text = match msg {
                    Some(Ok(Message::Text(t))) => t,
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                    Some(Ok(_)) => continue,
                };
                let problem = match serde_json::from_str::<FromAgent>(&text) {
                    Ok(reply) => offer(s, reply).err(),
                    Err(e) => Some((StatusCode::BAD_REQUEST, e.to_string())),
                };
                if let Some((code, msg)) = problem {
                    let frame = json!({ "error": msg, "status": code.as_u16() }).to_string();
                    if socket.send(Message::Text(frame.into())).await.is_err() {
                        return;
                    }
                }
            }
        }
    }
}
