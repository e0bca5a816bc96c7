//! HTTP API under `/v1`.
//!
//! | method | path                       | body / query              |
//! |--------|----------------------------|---------------------------|
//! | GET    | `/v1/sessions`             |                           |
//! | GET    | `/v1/sessions/{id}/graph`  | `?seeds=`                 |
//! | GET    | `/v1/sessions/{id}/deviations` | `?seeds=`             |
//! | GET    | `/v1/sessions/{id}/cdi`    | `?seeds=&seed=`           |
//! | GET    | `/v1/sessions/{id}/verdict`| `?seeds=&seed=`           |
//! | GET    | `/v1/sessions/{id}/quiz`   | `?seeds=&seed=`           |
//! | POST   | `/v1/sessions/{id}/events` | SAT lines (text)          |
//! | POST   | `/v1/sessions/{id}/reviews`| review JSON               |
//!
//! Errors are `{"error": {"code": ..., "message": ...}}`. When a token is
//! configured every `/v1` route needs `Authorization: Bearer <token>`.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;

use sentinel_core::cdi::CdiError;

use crate::store::{ReviewRequest, Store, StoreError};

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub token: Option<String>,
}

pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StatusCode as S;
        let (status, code) = match &e {
            StoreError::UnknownSession(_) => (S::NOT_FOUND, "unknown_session"),
            StoreError::UnknownSeeds(_) => (S::NOT_FOUND, "unknown_seeds"),
            StoreError::BadSessionId(_) => (S::BAD_REQUEST, "bad_session_id"),
            StoreError::SeqRegression { .. } => (S::CONFLICT, "seq_regression"),
            StoreError::Validation { .. } => (S::UNPROCESSABLE_ENTITY, "validation_error"),
            StoreError::UnknownNodeRef(_) => (S::UNPROCESSABLE_ENTITY, "unknown_node_ref"),
            StoreError::BadReview(_) => (S::UNPROCESSABLE_ENTITY, "bad_review"),
            StoreError::Seed(_) => (S::UNPROCESSABLE_ENTITY, "seed_error"),
            StoreError::Cdi(CdiError::ChainTooShort(_)) => (S::CONFLICT, "chain_too_short"),
            StoreError::Cdi(_) => (S::UNPROCESSABLE_ENTITY, "cdi_error"),
            StoreError::Io(_) => (S::INTERNAL_SERVER_ERROR, "storage_error"),
        };
        if status.is_server_error() {
            tracing::error!(error = %e, "request failed");
        }
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"code": self.code, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

/// Pre-serialized canonical JSON.
struct RawJson(Arc<String>);

impl IntoResponse for RawJson {
    fn into_response(self) -> Response {
        ([(header::CONTENT_TYPE, "application/json")], self.0.as_str().to_owned()).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
pub struct ArtifactQuery {
    seeds: Option<String>,
    seed: Option<u64>,
}

type ApiResult<T> = Result<T, ApiError>;

async fn list_sessions(State(s): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({"sessions": s.store.list()}))
}

async fn graph(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<ArtifactQuery>) -> ApiResult<RawJson> {
    Ok(RawJson(s.store.graph_json(&id, q.seeds.as_deref())?))
}

async fn deviations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ArtifactQuery>,
) -> ApiResult<RawJson> {
    Ok(RawJson(s.store.deviations_json(&id, q.seeds.as_deref())?))
}

async fn cdi(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<ArtifactQuery>) -> ApiResult<RawJson> {
    Ok(RawJson(s.store.cdi_json(&id, q.seeds.as_deref(), q.seed)?))
}

async fn verdict(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<ArtifactQuery>) -> ApiResult<RawJson> {
    Ok(RawJson(s.store.verdict_json(&id, q.seeds.as_deref(), q.seed)?))
}

async fn quiz(State(s): State<AppState>, Path(id): Path<String>, Query(q): Query<ArtifactQuery>) -> ApiResult<RawJson> {
    Ok(RawJson(s.store.quiz_json(&id, q.seeds.as_deref(), q.seed)?))
}

async fn post_events(State(s): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Response> {
    let ack = s.store.ingest(&id, &body)?;
    let status = if ack.created { StatusCode::CREATED } else { StatusCode::OK };
    let body = json!({
        "session": ack.session_id,
        "accepted": ack.accepted,
        "created": ack.created,
        "last_seq": ack.last_seq,
    });
    Ok((status, Json(body)).into_response())
}

async fn post_review(State(s): State<AppState>, Path(id): Path<String>, body: String) -> ApiResult<Response> {
    let req: ReviewRequest = serde_json::from_str(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "bad_json", e.to_string()))?;
    let ack = s.store.post_review(&id, &req)?;
    let status = if ack.duplicate { StatusCode::OK } else { StatusCode::CREATED };
    Ok((status, Json(json!({"session": id, "seq": ack.seq, "duplicate": ack.duplicate}))).into_response())
}

async fn require_token(State(s): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(token) = &s.token {
        let presented = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(req).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

/// The `/v1` routes, plus static files from `ui_dir` at `/` when given.
pub fn router(state: AppState, ui_dir: Option<PathBuf>) -> Router {
    let v1 = Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}/graph", get(graph))
        .route("/sessions/{id}/deviations", get(deviations))
        .route("/sessions/{id}/cdi", get(cdi))
        .route("/sessions/{id}/verdict", get(verdict))
        .route("/sessions/{id}/quiz", get(quiz))
        .route("/sessions/{id}/events", post(post_events))
        .route("/sessions/{id}/reviews", post(post_review))
        .fallback(not_found)
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    let app = Router::new().nest("/v1", v1);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            app.fallback_service(tower_http::services::ServeDir::new(dir).fallback(tower_http::services::ServeFile::new(index)))
        }
        None => app,
    }
}
