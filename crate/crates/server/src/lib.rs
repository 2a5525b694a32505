//! HTTP and WebSocket front end for live sessions.
//!
//! | route | |
//! |---|---|
//! | `GET /health` | service name, version, schema version |
//! | `GET /sessions` | ids of known sessions |
//! | `POST /sessions` | create; body `{ "config"?: SessionConfig, "seed"?: u64 }` |
//! | `POST /sessions/{id}/start` | begin the first task |
//! | `GET /sessions/{id}/state` | [`SessionSnapshot`] |
//! | `GET /sessions/{id}/log` | the JSONL event log |
//! | `POST /sessions/{id}/survey` | `{ "operator"?: k, "kind": "SAM" \| "ISA" \| "NASA-TLX", "payload": any }` |
//! | `POST /sessions/{id}/predictions` | `{ "operator": k, "s_obj": f64 }` objective estimate for the next prediction step |
//! | `GET /sessions/{id}/ws?operator=k&schema_version=1` | operator WebSocket, see [`protocol`] |

pub mod actor;
pub mod protocol;

use actor::{spawn_session, ActorError, SessionClock, SessionHandle};
use awac_core::allocator::Allocator;
use awac_core::hpm::{HpmParams, IsaScore};
use awac_core::ppo::PolicyParams;
use awac_core::session::{SessionConfig, SessionEngine, SessionError, SessionSnapshot, SurveyKind, SCHEMA_VERSION};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use protocol::{hello, ClientMessage, OperatorView, ServerMessage};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, watch, RwLock};

pub const SERVICE: &str = "awac";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub log_dir: PathBuf,
    pub session: SessionConfig,
    pub hpm: HpmParams,
    pub policy: Option<Arc<PolicyParams>>,
    /// Session milliseconds per wall-clock millisecond.
    pub time_scale: f64,
}

impl ServerConfig {
    pub fn new(log_dir: impl Into<PathBuf>) -> Self {
        Self {
            log_dir: log_dir.into(),
            session: SessionConfig::default(),
            hpm: HpmParams::default(),
            policy: None,
            time_scale: 1.0,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    config: ServerConfig,
    sessions: RwLock<BTreeMap<String, SessionHandle>>,
    stop: watch::Sender<bool>,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: RwLock::new(BTreeMap::new()),
                stop: watch::channel(false).0,
            }),
        }
    }

    async fn get(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }

    pub async fn create_session(&self, config: SessionConfig, seed: u64) -> Result<SessionHandle, ApiError> {
        let cfg = &self.inner.config;
        let mut allocator = Allocator::new(config.env_config(), cfg.hpm);
        if let Some(p) = &cfg.policy {
            allocator = allocator
                .with_policy(p.clone())
                .map_err(|e| ApiError::BadRequest(e.to_string()))?;
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let engine = SessionEngine::new(id.clone(), config, allocator, seed)?;
        std::fs::create_dir_all(&cfg.log_dir).map_err(|e| ApiError::Internal(e.to_string()))?;
        let path = cfg.log_dir.join(format!("{id}.jsonl"));
        let handle = spawn_session(engine, path, SessionClock::new(cfg.time_scale))
            .map_err(|e| ApiError::Internal(e.to_string()))?;
        self.inner.sessions.write().await.insert(id, handle.clone());
        Ok(handle)
    }

    /// Closes operator sockets and flushes every session log.
    pub async fn shutdown(&self) {
        let _ = self.inner.stop.send(true);
        let handles: Vec<_> = self.inner.sessions.read().await.values().cloned().collect();
        for h in handles {
            h.shutdown().await;
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ApiError {
    #[error("no session {0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Internal(String),
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::OutOfPhase { .. } | SessionError::NoOpenPrompt(_) => ApiError::Conflict(e.to_string()),
            _ => ApiError::BadRequest(e.to_string()),
        }
    }
}

impl From<ActorError> for ApiError {
    fn from(e: ActorError) -> Self {
        match e {
            ActorError::Gone => ApiError::Internal(e.to_string()),
            ActorError::Session(s) => s.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self {
            ApiError::NotFound(_) => StatusCode::NOT_FOUND,
            ApiError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ApiError::Conflict(_) => StatusCode::CONFLICT,
            ApiError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Health {
    pub service: String,
    pub version: String,
    pub schema_version: u32,
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    pub config: Option<SessionConfig>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub schema_version: u32,
    pub ws: String,
}

#[derive(Debug, Deserialize)]
pub struct SurveyRequest {
    pub operator: Option<usize>,
    pub kind: SurveyKind,
    pub payload: serde_json::Value,
}

#[derive(Debug, Deserialize)]
pub struct PredictionRequest {
    pub operator: usize,
    pub s_obj: f64,
}

#[derive(Debug, Deserialize)]
pub struct WsQuery {
    pub operator: usize,
    pub schema_version: Option<u32>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", get(list_sessions).post(create_session))
        .route("/sessions/{id}/start", post(start_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/log", get(session_log))
        .route("/sessions/{id}/survey", post(submit_survey))
        .route("/sessions/{id}/predictions", post(submit_prediction))
        .route("/sessions/{id}/ws", get(operator_ws))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then closes sockets and flushes logs.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let app = router(state.clone());
    let stopping = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stopping.inner.stop.send(true);
        })
        .await?;
    state.shutdown().await;
    Ok(())
}

async fn health() -> Json<Health> {
    Json(Health {
        service: SERVICE.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
    })
}

async fn list_sessions(State(st): State<AppState>) -> Json<Vec<String>> {
    Json(st.inner.sessions.read().await.keys().cloned().collect())
}

async fn create_session(State(st): State<AppState>, body: axum::body::Bytes) -> Result<Response, ApiError> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::BadRequest(e.to_string()))?
    };
    let config = req.config.unwrap_or_else(|| st.inner.config.session.clone());
    let handle = st.create_session(config, req.seed.unwrap_or(0)).await?;
    let body = Created {
        ws: format!("/sessions/{}/ws", handle.id),
        session_id: handle.id,
        schema_version: SCHEMA_VERSION,
    };
    Ok((StatusCode::CREATED, Json(body)).into_response())
}

async fn start_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(st.get(&id).await?.start().await?))
}

async fn session_state(State(st): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionSnapshot>, ApiError> {
    Ok(Json(st.get(&id).await?.snapshot().await?))
}

async fn session_log(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let records = st.get(&id).await?.log().await?;
    let mut body = String::new();
    for r in &records {
        body.push_str(&serde_json::to_string(r).map_err(|e| ApiError::Internal(e.to_string()))?);
        body.push('\n');
    }
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn submit_survey(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SurveyRequest>,
) -> Result<StatusCode, ApiError> {
    st.get(&id).await?.survey(req.operator, req.kind, req.payload).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn submit_prediction(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<PredictionRequest>,
) -> Result<StatusCode, ApiError> {
    st.get(&id).await?.prediction(req.operator, req.s_obj).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn operator_ws(
    ws: WebSocketUpgrade,
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<WsQuery>,
) -> Result<Response, ApiError> {
    let handle = st.get(&id).await?;
    if q.operator >= handle.n_operators {
        return Err(ApiError::BadRequest(format!("unknown operator {}", q.operator)));
    }
    if let Some(v) = q.schema_version {
        if v != SCHEMA_VERSION {
            return Err(ApiError::BadRequest(format!(
                "schema version {v} unsupported, server speaks {SCHEMA_VERSION}"
            )));
        }
    }
    let stop = st.inner.stop.subscribe();
    Ok(ws.on_upgrade(move |socket| operator_session(socket, handle, q.operator, stop)))
}

async fn send(sink: &mut futures::stream::SplitSink<WebSocket, Message>, msg: &ServerMessage) -> bool {
    let text = serde_json::to_string(msg).expect("message serializes");
    sink.send(Message::Text(text.into())).await.is_ok()
}

async fn operator_session(socket: WebSocket, handle: SessionHandle, operator: usize, mut stop: watch::Receiver<bool>) {
    let (mut sink, mut stream) = socket.split();
    let mut events = handle.subscribe();
    let Ok(backlog) = handle.log().await else {
        return;
    };
    let mut view = OperatorView::new(operator);
    let mut last_seq = 0;
    let mut team_total = 0;
    let mut t = 0;
    for r in &backlog {
        view.translate(r);
        last_seq = r.seq;
        t = r.t;
        if let awac_core::session::SessionEvent::ScoreUpdate { team_total: total, .. } = r.event {
            team_total = total;
        }
    }
    if !send(&mut sink, &hello(t, &handle.id, operator, team_total)).await {
        return;
    }
    for m in view.resume(t) {
        if !send(&mut sink, &m).await {
            return;
        }
    }
    loop {
        tokio::select! {
            rec = events.recv() => match rec {
                Ok(r) if r.seq > last_seq => {
                    last_seq = r.seq;
                    for m in view.translate(&r) {
                        if !send(&mut sink, &m).await {
                            return;
                        }
                    }
                }
                Ok(_) => {}
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(session = %handle.id, operator, "socket lagged by {n} events");
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            msg = stream.next() => match msg {
                Some(Ok(Message::Text(text))) => {
                    if let Some(err) = handle_client(&handle, operator, &text).await {
                        let msg = ServerMessage::Error { t: last_t(&handle).await, message: err };
                        if !send(&mut sink, &msg).await {
                            return;
                        }
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            _ = stop.changed() => break,
        }
    }
    let _ = sink.send(Message::Close(None)).await;
}

async fn last_t(handle: &SessionHandle) -> u64 {
    handle.snapshot().await.map(|s| s.t).unwrap_or(0)
}

async fn handle_client(handle: &SessionHandle, operator: usize, text: &str) -> Option<String> {
    let msg: ClientMessage = match serde_json::from_str(text) {
        Ok(m) => m,
        Err(e) => return Some(format!("bad message: {e}")),
    };
    let result = match msg {
        ClientMessage::Click { view, object_id, .. } => handle.click(operator, view, object_id).await.map(|_| ()),
        ClientMessage::IsaResponse { score, .. } => match IsaScore::new(score) {
            Ok(s) => handle.isa(operator, s).await,
            Err(e) => return Some(e.to_string()),
        },
        ClientMessage::ApprovalDecision { accept, .. } => handle.approval(operator, accept).await,
    };
    match result {
        // rejected clicks already reach the operator through the log stream
        Err(ActorError::Session(
            SessionError::ViewNotAssigned { .. } | SessionError::OutOfPhase { action: "click", .. },
        )) => None,
        Err(e) => Some(e.to_string()),
        Ok(()) => None,
    }
}
