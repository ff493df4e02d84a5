//! Review HTTP API over the decision store and trace ledger.

use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use screening_core::corpus::{Corpus, Label, StudyRecord};
use screening_core::gateway::{RoundTrace, TraceIndex};
use screening_core::orchestrator::{QueueItem, QueueKind, ReviewError, ReviewStore};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 500;

pub struct AppState {
    pub store: ReviewStore,
    pub traces: TraceIndex,
    pub corpus: Option<Corpus>,
    /// Shared bearer token; `None` leaves the API open.
    pub token: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let message = e.to_string();
        match e {
            ReviewError::UnknownStudy(_) => ApiError::new(StatusCode::NOT_FOUND, message),
            ReviewError::AlreadyFinal { current } | ReviewError::VersionMismatch { current } => ApiError {
                status: StatusCode::CONFLICT,
                body: json!({ "error": message, "current": current }),
            },
            ReviewError::InvalidFraction(_) | ReviewError::NothingToSample | ReviewError::NotFinal(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, message)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, message),
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct QueueQuery {
    pub kind: Option<String>,
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct QueueEntry {
    #[serde(flatten)]
    pub item: QueueItem,
    pub study: Option<StudyRecord>,
}

#[derive(Debug, Serialize)]
pub struct QueuePage {
    pub kind: QueueKind,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
    pub items: Vec<QueueEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub study_id: String,
    pub verdict: Label,
    pub reviewer: String,
    #[serde(default)]
    pub expected_version: Option<u64>,
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/studies/{id}", get(study))
        .route("/api/decisions", post(decide))
        .route("/api/progress", get(progress))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .route("/api/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn health(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "studies": state.store.decisions().len() }))
}

async fn queue(
    State(state): State<Arc<AppState>>,
    Query(q): Query<QueueQuery>,
) -> Result<Json<QueuePage>, ApiError> {
    let kind: QueueKind = q
        .kind
        .as_deref()
        .unwrap_or("conflict")
        .parse()
        .map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let page = q.page.unwrap_or(1);
    let per_page = q.per_page.unwrap_or(DEFAULT_PAGE_SIZE);
    if page == 0 || per_page == 0 || per_page > MAX_PAGE_SIZE {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            format!("page must be >= 1 and per_page in 1..={MAX_PAGE_SIZE}"),
        ));
    }
    let all = state.store.queue(kind);
    let total = all.len();
    let items = all
        .into_iter()
        .skip((page - 1) * per_page)
        .take(per_page)
        .map(|item| QueueEntry {
            study: state.corpus.as_ref().and_then(|c| c.get(&item.decision.study_id)).cloned(),
            item,
        })
        .collect();
    Ok(Json(QueuePage {
        kind,
        page,
        per_page,
        total,
        items,
    }))
}

async fn study(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let decision = state.store.decision(&id);
    let record = state.corpus.as_ref().and_then(|c| c.get(&id)).cloned();
    if decision.is_none() && record.is_none() {
        return Err(ApiError::new(StatusCode::NOT_FOUND, format!("unknown study {id}")));
    }
    let mut traces: Vec<&RoundTrace> = state.traces.for_study(&id).collect();
    traces.sort_by_key(|t| t.key());
    Ok(Json(json!({
        "study": record,
        "decision": decision,
        "sample": state.store.sample(&id),
        "traces": traces,
    })))
}

async fn decide(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Response, ApiError> {
    let req: DecisionRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed decision body: {e}")))?;
    if req.reviewer.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "reviewer must not be empty"));
    }
    let store = &state.store;
    let updated = store.record_human_decision(&req.study_id, req.verdict, req.reviewer.trim(), req.expected_version)?;
    Ok(Json(json!({ "decision": updated, "sample": store.sample(&req.study_id) })).into_response())
}

async fn progress(State(state): State<Arc<AppState>>) -> impl IntoResponse {
    Json(state.store.progress())
}
