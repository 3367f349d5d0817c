//! Local HTTP service for live sessions: a person (or a script) plays
//! Treasure or Highway against an interface that adapts between interactions.
//!
//! Every session sits behind its own mutex, so requests to one session are
//! serialized while different sessions proceed in parallel. Training runs on
//! the blocking pool.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng;
use serde::{Deserialize, Serialize};

use attune_core::baselines::BayesConfig;
use attune_core::domain::{write_jsonl, Action, Signal, State as EnvState};
use attune_core::env::EnvKind;
use attune_core::learning::LearnerConfig;
use attune_core::session::{Algorithm, Observation, Session, SessionConfig, StepResult};
use attune_core::Error;

pub const DEFAULT_PORT: u16 = 8733;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("no session `{id}`"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Config(_) | Error::Shape { .. } => StatusCode::BAD_REQUEST,
            Error::Usage(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::bad_request(e.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

struct Live {
    session: Session,
    seed: u64,
    config_hash: String,
}

#[derive(Default)]
pub struct AppState {
    sessions: RwLock<HashMap<String, Arc<Mutex<Live>>>>,
    next_id: AtomicU64,
}

impl AppState {
    fn get(&self, id: &str) -> Result<Arc<Mutex<Live>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(id))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Runs `f` on the blocking pool with the session locked.
async fn with_session<T, F>(state: &AppState, id: &str, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&mut Live) -> Result<T, ApiError> + Send + 'static,
{
    let live = state.get(id)?;
    tokio::task::spawn_blocking(move || {
        let mut guard = live.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    /// `treasure` (2D), `treasureN`, or `highway`.
    pub env: String,
    /// Omit to let the server pick one at random.
    #[serde(default)]
    pub algorithm: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub learner: Option<LearnerConfig>,
    #[serde(default)]
    pub bayes: Option<BayesConfig>,
    #[serde(default)]
    pub buffer_capacity: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CreateResponse {
    pub session_id: String,
    pub env: String,
    pub interaction: usize,
    pub t: usize,
    pub state: EnvState,
    pub signal: Signal,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct StepRequest {
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepResponse {
    #[serde(flatten)]
    pub result: StepResult,
    /// Present when the action was outside the bounds and got clamped.
    pub notice: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricsResponse {
    pub session_id: String,
    pub env: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub config_hash: String,
    pub weights_digest: String,
    pub interactions_completed: usize,
    pub in_flight: bool,
    pub clamped_actions: u64,
    pub metrics: Vec<f64>,
}

async fn create(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<CreateResponse>), ApiError> {
    let Json(req) = body?;
    let env = EnvKind::parse(&req.env)?;
    let algorithm = match &req.algorithm {
        Some(name) => Algorithm::parse(name)?,
        None => Algorithm::ALL[rand::rng().random_range(0..Algorithm::ALL.len())],
    };
    let seed = req.seed.unwrap_or_else(|| rand::rng().random());
    let defaults = SessionConfig::default();
    let config = SessionConfig {
        env,
        algorithm,
        learner: req.learner.unwrap_or(defaults.learner),
        bayes: req.bayes.unwrap_or(defaults.bayes),
        buffer_capacity: req.buffer_capacity.unwrap_or(defaults.buffer_capacity),
    };
    config.learner.validate()?;
    let config_hash = config.hash()?;
    let (session, obs) = tokio::task::spawn_blocking(move || -> Result<_, Error> {
        let mut session = Session::new(config, seed)?;
        let obs = session.begin()?;
        Ok((session, obs))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;

    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed) + 1);
    state.sessions.write().expect("session map poisoned").insert(
        id.clone(),
        Arc::new(Mutex::new(Live {
            session,
            seed,
            config_hash,
        })),
    );
    log::info!("created session {id}: {} / {algorithm}", env.label());
    Ok((
        StatusCode::CREATED,
        Json(CreateResponse {
            session_id: id,
            env: env.label(),
            interaction: obs.interaction,
            t: obs.t,
            state: obs.state,
            signal: obs.signal,
        }),
    ))
}

async fn step(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult<StepResponse> {
    let Json(req) = body?;
    with_session(&state, &id, move |live| {
        let width = live.session.env().dims().action;
        if req.action.len() != width {
            return Err(ApiError::bad_request(format!(
                "action has width {}, expected {width}",
                req.action.len()
            )));
        }
        if !live.session.in_flight() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "interaction finished; must reset before stepping",
            ));
        }
        let result = live.session.step(&Action(req.action))?;
        let notice = result.clamped.then(|| {
            format!(
                "action clamped to [-{b}, {b}]",
                b = live.session.env().action_bound()
            )
        });
        Ok(Json(StepResponse { result, notice }))
    })
    .await
}

async fn reset(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    _body: axum::body::Bytes,
) -> ApiResult<Observation> {
    with_session(&state, &id, |live| {
        if live.session.in_flight() {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "interaction in progress; finish it before resetting",
            ));
        }
        Ok(Json(live.session.begin()?))
    })
    .await
}

async fn metrics(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<MetricsResponse> {
    let sid = id.clone();
    with_session(&state, &id, move |live| {
        let s = &live.session;
        Ok(Json(MetricsResponse {
            session_id: sid,
            env: s.config().env.label(),
            algorithm: s.algorithm(),
            seed: live.seed,
            config_hash: live.config_hash.clone(),
            weights_digest: s.weights_digest()?,
            interactions_completed: s.metrics().len(),
            in_flight: s.in_flight(),
            clamped_actions: s.clamped_actions(),
            metrics: s.metrics().to_vec(),
        }))
    })
    .await
}

/// Tuples as JSON lines. The interaction in progress is withheld so its
/// hidden information stays private.
async fn tuple_log(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let body = with_session(&state, &id, |live| {
        let s = &live.session;
        let hidden = s.in_flight().then(|| s.interaction());
        let visible = s.log().iter().filter(|t| Some(t.interaction) != hidden);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, visible)?;
        Ok(buf)
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "sessions": state.len() }))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/reset", post(reset))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/log", get(tuple_log))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(AppState::default()))).await
}
