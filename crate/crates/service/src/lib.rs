//! JSON-over-HTTP front end for the two-round annotation workflow.
//!
//! One mutex guards the corpus store and the annotation engine together, so every
//! request sees a consistent snapshot and writes are serialized. A label is
//! persisted to the store log (flushed and synced) before the engine records it and
//! before the client gets its 201.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;

use opinion_core::annotation::{
    AdjudicationConfig, AgreementReport, Annotation, AnnotationEngine, DocStatus, EngineError, Round, Task,
};
use opinion_core::corpus::{compute_stats, CorpusError, CorpusStats, CorpusStore, GoldRecord};
use opinion_core::Polarity;

/// Header carrying the shared access token.
pub const TOKEN_HEADER: &str = "x-annotation-token";

pub const GUIDELINES_VERSION: u32 = 1;
pub const GUIDELINES: &str = include_str!("../assets/guidelines.md");
/// JSON Schema (draft 2020-12) for every response body.
pub const API_SCHEMA: &str = include_str!("../assets/api.schema.json");

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// Store log; created if missing.
    pub corpus: PathBuf,
    /// Required in [`TOKEN_HEADER`] on every request when set.
    pub token: Option<String>,
    pub adjudication: AdjudicationConfig,
    /// Annotators registered at startup, in addition to those found in the log.
    pub annotators: Vec<String>,
}

struct Inner {
    store: CorpusStore,
    engine: AnnotationEngine,
}

pub struct AppState {
    inner: Mutex<Inner>,
    token: Option<String>,
}

impl AppState {
    /// Builds the engine from the store's documents and replays its annotations.
    pub fn new(
        store: CorpusStore,
        adjudication: AdjudicationConfig,
        annotators: &[String],
        token: Option<String>,
    ) -> Result<Self, ServiceError> {
        let mut engine = AnnotationEngine::new(adjudication, store.documents().map(|d| d.doc_id.clone()))?;
        engine.replay(store.annotations());
        for a in annotators {
            engine.register(a.clone());
        }
        Ok(Self {
            inner: Mutex::new(Inner { store, engine }),
            token,
        })
    }

    pub fn open(config: &ServiceConfig) -> Result<Self, ServiceError> {
        let store = CorpusStore::open(&config.corpus)?;
        Self::new(store, config.adjudication, &config.annotators, config.token.clone())
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        // A panic mid-request cannot leave the store half-written: appends happen
        // before the in-memory update, so the state stays usable.
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskView {
    pub doc_id: String,
    /// The post as written, emoji and all; annotators never see normalized text.
    pub text: String,
    pub round: Round,
    pub probe: bool,
    pub guidelines_version: u32,
}

/// Request body of `POST /api/label`. The label arrives as a bare integer so that
/// out-of-range values reach the handler and get a 422 naming the value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSubmission {
    pub annotator_id: String,
    pub doc_id: String,
    pub label: i64,
    #[serde(default = "round_one")]
    pub round: Round,
    /// Stored as the annotation time; the server clock is used when absent.
    #[serde(default)]
    pub client_timestamp: Option<DateTime<Utc>>,
}

fn round_one() -> Round {
    Round::One
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelAccepted {
    pub annotation: Annotation,
    /// Document status after this label; adjudication has already run.
    pub status: DocStatus,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotatorRequest {
    pub annotator_id: String,
    #[serde(default = "round_one")]
    pub round: Round,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Guidelines {
    pub version: u32,
    pub text: String,
    pub rules: Vec<String>,
}

impl Guidelines {
    pub fn shipped() -> Self {
        Self {
            version: GUIDELINES_VERSION,
            text: GUIDELINES.to_string(),
            rules: numbered_rules(GUIDELINES),
        }
    }
}

/// Lines of the form `<n>. rule`, without the number.
pub fn numbered_rules(text: &str) -> Vec<String> {
    text.lines()
        .filter_map(|l| {
            let (num, rest) = l.split_once(". ")?;
            num.parse::<u32>().ok()?;
            Some(rest.trim().to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Export {
    pub annotations: Vec<Annotation>,
    pub gold: Vec<GoldRecord>,
}

/// An error response: a status code and `{"error": message}`.
#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let status = match &e {
            EngineError::UnknownAnnotator(_) | EngineError::UnknownDocument(_) => StatusCode::NOT_FOUND,
            EngineError::Duplicate { .. } | EngineError::NotOpen { .. } => StatusCode::CONFLICT,
            EngineError::Annotation(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.body_text())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/task", get(get_task))
        .route("/api/label", post(post_label))
        .route("/api/skip", post(post_skip))
        .route("/api/register", post(post_register))
        .route("/api/agreement", get(get_agreement))
        .route("/api/stats", get(get_stats))
        .route("/api/guidelines", get(get_guidelines))
        .route("/api/export", get(get_export))
        .route("/api/schema", get(get_schema))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

async fn require_token(State(state): State<Arc<AppState>>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = headers.get(TOKEN_HEADER).and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError(StatusCode::UNAUTHORIZED, format!("missing or wrong {TOKEN_HEADER} header")).into_response();
        }
    }
    next.run(req).await
}

#[derive(Debug, Deserialize)]
struct TaskQuery {
    annotator: String,
    #[serde(default)]
    round: Option<u8>,
}

async fn get_task(
    State(state): State<Arc<AppState>>,
    query: Result<Query<TaskQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(q) = query.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let round = Round::try_from(q.round.unwrap_or(1)).map_err(|e| ApiError(StatusCode::BAD_REQUEST, e))?;
    let mut inner = state.lock();
    let Some(Task { doc_id, round, probe }) = inner.engine.next_task(&q.annotator, round)? else {
        return Ok(StatusCode::NO_CONTENT.into_response());
    };
    let doc = inner
        .store
        .document(&doc_id)
        .ok_or_else(|| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("document `{doc_id}` missing from store")))?;
    let view = TaskView {
        text: doc.raw_text.clone(),
        doc_id,
        round,
        probe,
        guidelines_version: GUIDELINES_VERSION,
    };
    Ok(Json(view).into_response())
}

async fn post_label(
    State(state): State<Arc<AppState>>,
    body: Result<Json<LabelSubmission>, JsonRejection>,
) -> Result<(StatusCode, Json<LabelAccepted>), ApiError> {
    let Json(sub) = body?;
    let label = Polarity::from_value(sub.label).map_err(|e| ApiError(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let annotation = Annotation {
        annotator_id: sub.annotator_id,
        doc_id: sub.doc_id,
        label,
        round: sub.round,
        submitted_at: sub.client_timestamp.unwrap_or_else(Utc::now),
    };
    let mut inner = state.lock();
    inner.engine.check(&annotation)?;
    inner
        .store
        .append_annotation(annotation.clone())
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    let status = inner.engine.record(annotation.clone())?;
    if let DocStatus::Gold(g) = &status {
        log::info!("`{}` adjudicated {} ({:?})", g.doc_id, g.label, g.provenance);
    }
    Ok((StatusCode::CREATED, Json(LabelAccepted { annotation, status })))
}

async fn post_skip(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AnnotatorRequest>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let Json(req) = body?;
    let mut inner = state.lock();
    if !inner.engine.is_registered(&req.annotator_id) {
        return Err(EngineError::UnknownAnnotator(req.annotator_id).into());
    }
    let skipped = inner.engine.skip(&req.annotator_id, req.round);
    Ok(Json(json!({ "skipped": skipped })))
}

async fn post_register(
    State(state): State<Arc<AppState>>,
    body: Result<Json<AnnotatorRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<serde_json::Value>), ApiError> {
    let Json(req) = body?;
    if req.annotator_id.trim().is_empty() {
        return Err(ApiError(StatusCode::UNPROCESSABLE_ENTITY, "annotator_id must be nonempty".into()));
    }
    let mut inner = state.lock();
    let created = !inner.engine.is_registered(&req.annotator_id);
    inner.engine.register(req.annotator_id.clone());
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(json!({ "annotator_id": req.annotator_id, "created": created }))))
}

async fn get_agreement(State(state): State<Arc<AppState>>) -> Json<AgreementReport> {
    Json(state.lock().engine.report())
}

/// Statistics over the store's documents, labeled by the current gold records.
pub fn corpus_stats(store: &CorpusStore, engine: &AnnotationEngine) -> CorpusStats {
    let gold: std::collections::HashMap<String, GoldRecord> =
        engine.gold_records().into_iter().map(|g| (g.doc_id.clone(), g)).collect();
    compute_stats(store.documents().map(|d| (d, gold.get(&d.doc_id))))
}

async fn get_stats(State(state): State<Arc<AppState>>) -> Json<CorpusStats> {
    let inner = state.lock();
    Json(corpus_stats(&inner.store, &inner.engine))
}

async fn get_guidelines() -> Json<Guidelines> {
    Json(Guidelines::shipped())
}

async fn get_export(State(state): State<Arc<AppState>>) -> Json<Export> {
    let inner = state.lock();
    Json(Export {
        annotations: inner.store.annotations().to_vec(),
        gold: inner.engine.gold_records(),
    })
}

async fn get_schema() -> Response {
    ([(axum::http::header::CONTENT_TYPE, "application/schema+json")], API_SCHEMA).into_response()
}

/// Serves until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServiceError> {
    let state = Arc::new(AppState::open(&config)?);
    let listener = tokio::net::TcpListener::bind(config.bind).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
