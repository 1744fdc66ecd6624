//! HTTP API for the review loop: translate, list, post-edit, search.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use hilmt_core::{generate_feedback, FeedbackRecord, RetrievalConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::gateway::Gateway;
use crate::pipeline::{
    translate_one, DomainIndex, PipelineConfig, PipelineError, Strategy, TranslationRecord,
};
use crate::store::{content_id, DemoStore, DemonstrationRecord, Provenance, StoreError};

pub const DEFAULT_PORT: u16 = 8080;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    Pending,
    Reviewed,
}

/// A translation awaiting (or past) human review.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub id: String,
    pub domain: String,
    pub source: String,
    pub draft: String,
    pub refined: Option<String>,
    #[serde(rename = "final")]
    pub final_text: String,
    pub status: ReviewStatus,
    pub strategy: Strategy,
    pub demos_used: Vec<String>,
    pub created_at: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub post_edit: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Id of the demonstration created from the post-edit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_id: Option<String>,
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Review items persisted as JSON Lines snapshots; the last snapshot of an id
/// wins on load.
#[derive(Debug)]
struct ReviewLog {
    path: PathBuf,
    items: Vec<ReviewItem>,
    by_id: HashMap<String, usize>,
}

impl ReviewLog {
    fn open(path: PathBuf) -> Result<Self, ServiceError> {
        let mut log = Self {
            path,
            items: Vec::new(),
            by_id: HashMap::new(),
        };
        let file = match File::open(&log.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(log),
            Err(source) => {
                return Err(ServiceError::Io {
                    path: log.path,
                    source,
                })
            }
        };
        for (index, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| ServiceError::Io {
                path: log.path.clone(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let item: ReviewItem =
                serde_json::from_str(&line).map_err(|source| ServiceError::Parse {
                    path: log.path.clone(),
                    line: index + 1,
                    source,
                })?;
            log.upsert(item);
        }
        Ok(log)
    }

    fn upsert(&mut self, item: ReviewItem) {
        match self.by_id.get(&item.id) {
            Some(&i) => self.items[i] = item,
            None => {
                self.by_id.insert(item.id.clone(), self.items.len());
                self.items.push(item);
            }
        }
    }

    fn save(&mut self, item: ReviewItem) -> Result<(), ServiceError> {
        let io_err = |source| ServiceError::Io {
            path: self.path.clone(),
            source,
        };
        let mut line = serde_json::to_string(&item).expect("item serializes");
        line.push('\n');
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(io_err)?;
        file.write_all(line.as_bytes()).map_err(io_err)?;
        file.sync_data().map_err(io_err)?;
        self.upsert(item);
        Ok(())
    }

    fn get(&self, id: &str) -> Option<&ReviewItem> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }
}

/// Review log location for a store file: `store.jsonl` → `store.reviews.jsonl`.
pub fn review_log_path(store_path: &Path) -> PathBuf {
    store_path.with_extension("reviews.jsonl")
}

type Clock = Box<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Shared service state. Locks are always taken in the order
/// reviews → store → indexes.
pub struct AppState {
    reviews: Mutex<ReviewLog>,
    store: Mutex<DemoStore>,
    indexes: RwLock<HashMap<String, Arc<DomainIndex>>>,
    gateway: Gateway,
    config: PipelineConfig,
    clock: Clock,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(err: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, err.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(rejection: JsonRejection) -> Self {
        ApiError::bad_request(rejection.body_text())
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, Deserialize)]
pub struct TranslateRequest {
    pub source: String,
    pub domain: String,
    #[serde(default)]
    pub strategy: Option<String>,
    #[serde(default)]
    pub shots: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslateResponse {
    pub id: String,
    #[serde(flatten)]
    pub record: TranslationRecord,
}

#[derive(Debug, Clone, Deserialize)]
pub struct FeedbackSubmission {
    pub post_edit: String,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PreviewRequest {
    pub hypothesis: String,
    pub reference: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchHit {
    pub rank: usize,
    pub bm25: f64,
    pub rerank: Option<f64>,
    #[serde(flatten)]
    pub demo: DemonstrationRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub pending: usize,
    pub reviewed: usize,
    pub human_demos: usize,
    pub simulated_demos: usize,
}

impl AppState {
    /// Opens the review log next to the store file.
    pub fn new(
        store: DemoStore,
        gateway: Gateway,
        config: PipelineConfig,
    ) -> Result<Self, ServiceError> {
        let reviews = ReviewLog::open(review_log_path(store.path()))?;
        Ok(Self {
            reviews: Mutex::new(reviews),
            store: Mutex::new(store),
            indexes: RwLock::new(HashMap::new()),
            gateway,
            config,
            clock: Box::new(Utc::now),
        })
    }

    /// Replaces the wall clock used for timestamps.
    pub fn with_clock(mut self, clock: impl Fn() -> DateTime<Utc> + Send + Sync + 'static) -> Self {
        self.clock = Box::new(clock);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn index_for(&self, domain: &str) -> Result<Arc<DomainIndex>, ApiError> {
        if let Some(index) = self
            .indexes
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(domain)
        {
            return Ok(Arc::clone(index));
        }
        let store = lock(&self.store);
        let index = Arc::new(DomainIndex::build(&store, domain).map_err(ApiError::internal)?);
        self.indexes
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(domain.to_owned(), Arc::clone(&index));
        Ok(index)
    }

    /// Runs the pipeline for one sentence and queues the result for review.
    /// The status is 502 when the gateway failed.
    pub fn translate(
        &self,
        request: TranslateRequest,
    ) -> Result<(StatusCode, TranslateResponse), ApiError> {
        if request.source.trim().is_empty() {
            return Err(ApiError::bad_request("source must be non-empty"));
        }
        if request.domain.trim().is_empty() {
            return Err(ApiError::bad_request("domain must be non-empty"));
        }
        let strategy = match &request.strategy {
            Some(s) => s.parse::<Strategy>().map_err(ApiError::bad_request)?,
            None => Strategy::default(),
        };
        let mut config = self.config.clone();
        if let Some(shots) = request.shots {
            config.retrieval.shots = shots;
        }
        config
            .retrieval
            .validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let index = match strategy {
            Strategy::DraftOnly => None,
            _ => Some(self.index_for(&request.domain)?),
        };
        let record = translate_one(
            &request.source,
            &request.domain,
            index.as_deref(),
            &self.gateway,
            &config,
            strategy,
        )
        .map_err(|e| match e {
            PipelineError::EmptySource => ApiError::bad_request(e.to_string()),
            other => ApiError::internal(other),
        })?;

        let mut reviews = lock(&self.reviews);
        let id = review_id(&record, reviews.items.len());
        let item = ReviewItem {
            id: id.clone(),
            domain: record.domain.clone(),
            source: record.source.clone(),
            draft: record.draft.clone(),
            refined: record.refined.clone(),
            final_text: record.final_text.clone(),
            status: ReviewStatus::Pending,
            strategy,
            demos_used: record.demos_used.clone(),
            created_at: (self.clock)(),
            post_edit: None,
            note: None,
            demo_id: None,
        };
        reviews.save(item).map_err(ApiError::internal)?;
        let status = if record.validity.gateway_error {
            StatusCode::BAD_GATEWAY
        } else {
            StatusCode::OK
        };
        Ok((status, TranslateResponse { id, record }))
    }

    /// Items matching the filters, newest first.
    pub fn list(&self, status: Option<ReviewStatus>, domain: Option<&str>) -> Vec<ReviewItem> {
        lock(&self.reviews)
            .items
            .iter()
            .rev()
            .filter(|i| status.map_or(true, |s| i.status == s))
            .filter(|i| domain.map_or(true, |d| i.domain == d))
            .cloned()
            .collect()
    }

    pub fn item(&self, id: &str) -> Option<ReviewItem> {
        lock(&self.reviews).get(id).cloned()
    }

    /// Turns a post-edit into a human demonstration and makes it retrievable.
    pub fn submit_feedback(
        &self,
        id: &str,
        submission: FeedbackSubmission,
    ) -> Result<DemonstrationRecord, ApiError> {
        if submission.post_edit.trim().is_empty() {
            return Err(ApiError::bad_request("post_edit must be non-empty"));
        }
        let mut reviews = lock(&self.reviews);
        let mut item = match reviews.get(id) {
            None => {
                return Err(ApiError::new(
                    StatusCode::NOT_FOUND,
                    format!("no record {id}"),
                ))
            }
            Some(item) if item.status == ReviewStatus::Reviewed => {
                return Err(ApiError::new(
                    StatusCode::CONFLICT,
                    format!("record {id} was already reviewed"),
                ))
            }
            Some(item) => item.clone(),
        };

        let post_edit = submission.post_edit.trim();
        let mut demo = DemonstrationRecord::derive(
            &item.domain,
            &item.source,
            &item.final_text,
            post_edit,
            Provenance::Human,
            (self.clock)(),
        );
        let mut store = lock(&self.store);
        demo.id = demo.content_id();
        if store.contains(&demo.id) {
            demo.id = content_id(
                &item.domain,
                &item.source,
                &item.final_text,
                &format!("{post_edit}\0{id}"),
            );
        }
        store.append(demo.clone()).map_err(|e| match e {
            StoreError::DuplicateId(_) => ApiError::new(StatusCode::CONFLICT, e.to_string()),
            other => ApiError::internal(other),
        })?;
        let index = DomainIndex::build(&store, &item.domain).map_err(ApiError::internal)?;
        self.indexes
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(item.domain.clone(), Arc::new(index));
        drop(store);

        item.status = ReviewStatus::Reviewed;
        item.post_edit = Some(post_edit.to_owned());
        item.note = submission.note;
        item.demo_id = Some(demo.id.clone());
        reviews.save(item).map_err(ApiError::internal)?;
        Ok(demo)
    }

    pub fn search(&self, query: &str, domain: &str, k: usize) -> Result<Vec<SearchHit>, ApiError> {
        if query.trim().is_empty() {
            return Err(ApiError::bad_request("q must be non-empty"));
        }
        let config = RetrievalConfig {
            shots: k,
            ..self.config.retrieval.clone()
        };
        config
            .validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let index = self.index_for(domain)?;
        let hits = index.retrieve(query, &config).map_err(ApiError::internal)?;
        Ok(hits
            .into_iter()
            .enumerate()
            .map(|(i, (scored, demo))| SearchHit {
                rank: i + 1,
                bm25: scored.bm25,
                rerank: scored.rerank,
                demo: demo.clone(),
            })
            .collect())
    }

    pub fn summary(&self) -> Summary {
        let reviews = lock(&self.reviews);
        let store = lock(&self.store);
        let pending = reviews
            .items
            .iter()
            .filter(|i| i.status == ReviewStatus::Pending)
            .count();
        let human = store
            .records()
            .iter()
            .filter(|r| r.provenance == Provenance::Human)
            .count();
        Summary {
            records: reviews.items.len(),
            pending,
            reviewed: reviews.items.len() - pending,
            human_demos: human,
            simulated_demos: store.len() - human,
        }
    }

    pub fn demo_count(&self) -> usize {
        lock(&self.store).len()
    }
}

fn review_id(record: &TranslationRecord, sequence: usize) -> String {
    let mut hasher = Sha256::new();
    for part in [
        record.domain.as_str(),
        record.source.as_str(),
        record.final_text.as_str(),
    ] {
        hasher.update(part.as_bytes());
        hasher.update([0u8]);
    }
    hasher.update(sequence.to_string().as_bytes());
    hex::encode(&hasher.finalize()[..8])
}

async fn blocking<T, F>(state: Arc<AppState>, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(ApiError::internal)?
}

async fn translate_handler(
    State(state): State<Arc<AppState>>,
    body: Result<Json<TranslateRequest>, JsonRejection>,
) -> Result<Response, ApiError> {
    let Json(request) = body?;
    let (status, response) = blocking(state, move |s| s.translate(request)).await?;
    Ok((status, Json(response)).into_response())
}

#[derive(Debug, Deserialize)]
struct ListQuery {
    status: Option<String>,
    domain: Option<String>,
}

async fn list_handler(
    State(state): State<Arc<AppState>>,
    Query(query): Query<ListQuery>,
) -> Result<Json<Vec<ReviewItem>>, ApiError> {
    let status = match query.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some("pending") => Some(ReviewStatus::Pending),
        Some("reviewed") => Some(ReviewStatus::Reviewed),
        Some(other) => return Err(ApiError::bad_request(format!("unknown status {other:?}"))),
    };
    let domain = query.domain.filter(|d| !d.is_empty());
    Ok(Json(state.list(status, domain.as_deref())))
}

async fn item_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<ReviewItem>, ApiError> {
    state
        .item(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no record {id}")))
}

async fn feedback_handler(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<FeedbackSubmission>, JsonRejection>,
) -> Result<Json<DemonstrationRecord>, ApiError> {
    let Json(submission) = body?;
    blocking(state, move |s| s.submit_feedback(&id, submission))
        .await
        .map(Json)
}

#[derive(Debug, Deserialize)]
struct SearchQuery {
    #[serde(default)]
    q: String,
    #[serde(default)]
    domain: String,
    k: Option<usize>,
}

async fn search_handler(
    State(state): State<Arc<AppState>>,
    Query(query): Query<SearchQuery>,
) -> Result<Json<Vec<SearchHit>>, ApiError> {
    let k = query.k.unwrap_or(state.config.retrieval.shots);
    blocking(state, move |s| s.search(&query.q, &query.domain, k))
        .await
        .map(Json)
}

async fn preview_handler(
    body: Result<Json<PreviewRequest>, JsonRejection>,
) -> Result<Json<FeedbackRecord>, ApiError> {
    let Json(request) = body?;
    Ok(Json(generate_feedback(
        &request.hypothesis,
        &request.reference,
    )))
}

async fn summary_handler(State(state): State<Arc<AppState>>) -> Json<Summary> {
    Json(state.summary())
}

/// All routes, with CORS open to `origin` or to any origin when `None`.
pub fn router(state: Arc<AppState>, origin: Option<HeaderValue>) -> Router {
    let cors = match origin {
        Some(origin) => CorsLayer::new()
            .allow_origin(AllowOrigin::exact(origin))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any),
        None => CorsLayer::permissive(),
    };
    Router::new()
        .route("/api/translate", post(translate_handler))
        .route("/api/records", get(list_handler))
        .route("/api/records/{id}", get(item_handler))
        .route("/api/records/{id}/feedback", post(feedback_handler))
        .route("/api/demos/search", get(search_handler))
        .route("/api/feedback/preview", post(preview_handler))
        .route("/api/metrics/summary", get(summary_handler))
        .layer(cors)
        .with_state(state)
}

/// Serves on `listener` until Ctrl-C.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    origin: Option<HeaderValue>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state, origin))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
