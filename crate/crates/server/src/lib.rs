//! HTTP front end for [`SessionService`]. Every engine call runs on the
//! blocking pool because backends do synchronous I/O.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cop_core::config::PipelineConfig;
use cop_core::debug::DebugFeedback;
use cop_core::kb::KbKind;
use cop_core::session::{SessionError, SessionService};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const DEFAULT_K: usize = 5;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, kind: "validation", message: message.into() }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let (status, kind) = match &e {
            SessionError::Validation(_) => (StatusCode::BAD_REQUEST, "validation"),
            SessionError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            SessionError::WrongPhase { .. } => (StatusCode::CONFLICT, "wrong_phase"),
            SessionError::CorruptLog { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "corrupt_log"),
            SessionError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io"),
        };
        Self { status, kind, message: e.to_string() }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message, "kind": self.kind}))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTask {
    pub requirement_text: String,
    #[serde(default)]
    pub config: Option<PipelineConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answers {
    pub answers: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
pub struct SearchParams {
    pub q: Option<String>,
    pub platform: Option<String>,
    pub k: Option<String>,
}

#[derive(Debug, Serialize)]
struct SearchResponse {
    kind: KbKind,
    query: String,
    hits: Vec<cop_core::kb::RetrievalHit>,
}

/// Body parsing with our own 400 instead of axum's 415/422 rejections.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, SessionError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            kind: "internal",
            message: format!("worker failed: {e}"),
        }),
    }
}

type Svc = State<Arc<SessionService>>;

async fn create_task(State(svc): Svc, body: Bytes) -> ApiResult<cop_core::session::SessionView> {
    let req: CreateTask = parse_body(&body)?;
    blocking(move || svc.create(&req.requirement_text, req.config)).await.map(Json)
}

async fn post_answers(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ApiResult<cop_core::session::SessionView> {
    let req: Answers = parse_body(&body)?;
    blocking(move || svc.post_answers(&id, &req.answers)).await.map(Json)
}

async fn post_feedback(State(svc): Svc, Path(id): Path<String>, body: Bytes) -> ApiResult<cop_core::session::SessionView> {
    let fb: DebugFeedback = parse_body(&body)?;
    blocking(move || svc.post_feedback(&id, &fb)).await.map(Json)
}

async fn get_task(State(svc): Svc, Path(id): Path<String>) -> ApiResult<cop_core::session::SessionView> {
    blocking(move || svc.view(&id)).await.map(Json)
}

async fn get_artifacts(State(svc): Svc, Path(id): Path<String>) -> ApiResult<cop_core::session::ArtifactsView> {
    blocking(move || svc.artifacts(&id)).await.map(Json)
}

async fn search_kb(
    State(svc): Svc,
    Path(kind): Path<String>,
    Query(params): Query<SearchParams>,
) -> Result<Response, ApiError> {
    let kind: KbKind = kind.parse().map_err(|e: cop_core::kb::KbError| ApiError::bad_request(e.to_string()))?;
    let query = params.q.unwrap_or_default();
    let k = match params.k.as_deref() {
        None | Some("") => DEFAULT_K,
        Some(s) => s.parse().map_err(|_| ApiError::bad_request(format!("k must be a positive integer, got {s:?}")))?,
    };
    let platform = params.platform.filter(|p| !p.trim().is_empty());
    let q = query.clone();
    let hits = blocking(move || svc.search_kb(kind, &q, platform.as_deref(), k)).await?;
    Ok(Json(SearchResponse { kind, query, hits }).into_response())
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, kind: "not_found", message: "no such route".into() }
}

pub fn router(service: Arc<SessionService>) -> Router {
    Router::new()
        .route("/api/tasks", post(create_task))
        .route("/api/tasks/{id}", get(get_task))
        .route("/api/tasks/{id}/answers", post(post_answers))
        .route("/api/tasks/{id}/feedback", post(post_feedback))
        .route("/api/tasks/{id}/artifacts", get(get_artifacts))
        .route("/api/kb/{kind}/search", get(search_kb))
        .fallback(not_found)
        .with_state(service)
}

/// Binds and serves until ctrl-c.
pub async fn serve(addr: SocketAddr, service: Arc<SessionService>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
