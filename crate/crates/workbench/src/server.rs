//! HTTP interface of the refinement workbench.

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medanno_core::analysis::{diff_corrections, CorrectionDiff};
use medanno_core::evalsuite::{evaluate_corpus, EvalOptions, Level, MetricsReport, Mode};
use medanno_core::model::{AnnotationSet, Document, Source, TimerKind, TimingRecord};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::store::{DocumentSummary, Store, StoreError};

pub struct ApiError(StatusCode, serde_json::Value);

impl ApiError {
    fn new(status: StatusCode, msg: impl ToString) -> Self {
        Self(status, json!({ "error": msg.to_string() }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownDocument(_) | StoreError::MissingSet { .. } => Self::new(StatusCode::NOT_FOUND, e),
            StoreError::Invalid(violations) => Self(
                StatusCode::BAD_REQUEST,
                json!({ "error": "annotation set failed validation", "violations": violations }),
            ),
            StoreError::BadRequest(_) => Self::new(StatusCode::BAD_REQUEST, e),
            StoreError::Timing(_) => Self::new(StatusCode::CONFLICT, e),
            StoreError::Io(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, e),
        }
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_source(s: &str) -> Result<Source, ApiError> {
    s.parse().map_err(|e: String| ApiError::new(StatusCode::NOT_FOUND, e))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DocumentView {
    #[serde(flatten)]
    pub document: Document,
    pub available_sources: Vec<Source>,
}

#[derive(Debug, Deserialize)]
pub struct TimerRequest {
    pub kind: TimerKind,
    /// Seconds since the Unix epoch; the server clock when absent.
    pub at: Option<f64>,
}

#[derive(Debug, Deserialize)]
pub struct DiffQuery {
    pub base: String,
}

#[derive(Debug, Deserialize)]
pub struct MetricsQuery {
    pub gold: String,
    pub pred: String,
    pub level: Option<Level>,
    pub mode: Option<Mode>,
    #[serde(default)]
    pub include_reason: bool,
}

async fn list_documents(State(store): State<Arc<Store>>) -> Json<Vec<DocumentSummary>> {
    Json(store.documents())
}

async fn get_document(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<DocumentView> {
    let (document, available_sources) = store.document(&id)?;
    Ok(Json(DocumentView {
        document,
        available_sources,
    }))
}

async fn get_annotations(
    State(store): State<Arc<Store>>,
    Path((id, source)): Path<(String, String)>,
) -> ApiResult<AnnotationSet> {
    let source = parse_source(&source)?;
    Ok(Json(store.annotations(&id, source)?))
}

async fn put_refined(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Json(set): Json<AnnotationSet>,
) -> ApiResult<AnnotationSet> {
    let saved = tokio::task::spawn_blocking(move || store.put_refined(&id, set))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))??;
    Ok(Json(saved))
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

async fn post_timer(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Json(req): Json<TimerRequest>,
) -> ApiResult<TimingRecord> {
    let at = req.at.unwrap_or_else(now);
    Ok(Json(store.timer_event(&id, req.kind, at)?))
}

async fn get_diff(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(q): Query<DiffQuery>,
) -> ApiResult<CorrectionDiff> {
    let base = store.annotations(&id, parse_source(&q.base)?)?;
    let refined = store.annotations(&id, Source::Refined)?;
    diff_corrections(&base, &refined)
        .map(Json)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))
}

async fn get_metrics(State(store): State<Arc<Store>>, Query(q): Query<MetricsQuery>) -> ApiResult<MetricsReport> {
    let gold = store.sets_of(parse_source(&q.gold)?);
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.doc_id.as_str()).collect();
    let pred: Vec<AnnotationSet> = store
        .sets_of(parse_source(&q.pred)?)
        .into_iter()
        .filter(|p| gold_ids.contains(p.doc_id.as_str()))
        .collect();
    let opts = EvalOptions {
        include_reason: q.include_reason,
    };
    evaluate_corpus(
        &gold,
        &pred,
        q.level.unwrap_or(Level::Phrase),
        q.mode.unwrap_or(Mode::Vertical),
        &opts,
    )
    .map(Json)
    .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/documents", get(list_documents))
        .route("/documents/{id}", get(get_document))
        .route("/documents/{id}/annotations/refined", get(get_refined).put(put_refined))
        .route("/documents/{id}/annotations/{source}", get(get_annotations))
        .route("/documents/{id}/timer", post(post_timer))
        .route("/documents/{id}/diff", get(get_diff))
        .route("/reports/metrics", get(get_metrics))
        .with_state(store)
}

async fn get_refined(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<AnnotationSet> {
    Ok(Json(store.annotations(&id, Source::Refined)?))
}

/// Bind and serve until ctrl-c.
pub async fn serve(store: Arc<Store>, addr: SocketAddr) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| anyhow::anyhow!("binding {addr}: {e}"))?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
