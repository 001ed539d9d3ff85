//! HTTP + JSON interface.
//!
//! | route | body / query |
//! |---|---|
//! | `POST /api/campaigns` | [`CreateCampaign`] |
//! | `GET /api/campaigns/{id}/next-batch` | `annotator`, optional `size` |
//! | `POST /api/campaigns/{id}/annotations` | `{"records": [AnnotationRecord]}` |
//! | `GET /api/campaigns/{id}/progress` | |
//! | `GET /api/campaigns/{id}/export` | `method` (default `RAW`), `format` (`csv` or `jsonl`) |
//! | `GET /api/campaigns/{id}/annotators/{aid}` | |
//! | `POST /api/campaigns/{id}/annotators/{aid}/exclude` | optional `{"reason": ...}` |
//!
//! Mutations of one campaign are serialized by its mutex; campaigns are
//! independent of each other.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use softlabel_core::export::ExportFormat;
use softlabel_core::{AnnotationRecord, Method};

use crate::campaign::Campaign;
use crate::error::ServiceError;
use crate::model::{CreateCampaign, TaskBatch};
use crate::store::campaign_dirs;

/// Source of the current time in milliseconds.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Clock that only moves when told to; for tests and scripted runs.
#[derive(Default)]
pub struct ManualClock(AtomicU64);

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self(AtomicU64::new(start_ms))
    }

    pub fn set(&self, ms: u64) {
        self.0.store(ms, Ordering::SeqCst);
    }

    pub fn advance(&self, ms: u64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }
}

impl<C: Clock + ?Sized> Clock for Arc<C> {
    fn now_ms(&self) -> u64 {
        (**self).now_ms()
    }
}

/// All campaigns of one store directory.
pub struct Service {
    store_dir: Option<PathBuf>,
    campaigns: RwLock<BTreeMap<String, Arc<Mutex<Campaign>>>>,
    clock: Box<dyn Clock>,
}

impl Service {
    /// Opens `store_dir`, replaying every campaign found in it.
    pub fn open(store_dir: impl Into<PathBuf>, clock: impl Clock + 'static) -> crate::Result<Self> {
        let store_dir = store_dir.into();
        let mut campaigns = BTreeMap::new();
        for dir in campaign_dirs(&store_dir)? {
            let c = Campaign::open(&dir)?;
            campaigns.insert(c.config().campaign_id.clone(), Arc::new(Mutex::new(c)));
        }
        Ok(Self { store_dir: Some(store_dir), campaigns: RwLock::new(campaigns), clock: Box::new(clock) })
    }

    /// A service whose campaigns are never written to disk.
    pub fn in_memory(clock: impl Clock + 'static) -> Self {
        Self { store_dir: None, campaigns: RwLock::new(BTreeMap::new()), clock: Box::new(clock) }
    }

    pub fn store_dir(&self) -> Option<&Path> {
        self.store_dir.as_deref()
    }

    pub fn now_ms(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn create(&self, req: CreateCampaign) -> crate::Result<String> {
        let mut campaigns = self.campaigns.write().expect("campaign registry poisoned");
        let id = req.config.campaign_id.clone();
        if campaigns.contains_key(&id) {
            return Err(ServiceError::DuplicateCampaign(id));
        }
        let campaign = match &self.store_dir {
            Some(dir) => Campaign::create(dir, req.config, req.manifest)?,
            None => Campaign::in_memory(req.config, req.manifest)?,
        };
        campaigns.insert(id.clone(), Arc::new(Mutex::new(campaign)));
        Ok(id)
    }

    /// Runs `f` with exclusive access to one campaign.
    pub fn with<T>(
        &self,
        campaign_id: &str,
        f: impl FnOnce(&mut Campaign, u64) -> crate::Result<T>,
    ) -> crate::Result<T> {
        let campaign = self
            .campaigns
            .read()
            .expect("campaign registry poisoned")
            .get(campaign_id)
            .cloned()
            .ok_or_else(|| ServiceError::UnknownCampaign(campaign_id.to_string()))?;
        let mut guard = campaign.lock().expect("campaign state poisoned");
        let now = self.clock.now_ms();
        f(&mut guard, now)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub campaign_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextBatchResponse {
    /// `None` when nothing is currently eligible for this annotator.
    pub batch: Option<TaskBatch>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub records: Vec<AnnotationRecord>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct ExcludeRequest {
    #[serde(default)]
    pub reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct NextBatchQuery {
    annotator: String,
    size: Option<usize>,
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    method: Option<String>,
    format: Option<String>,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
}

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::UnknownCampaign(_) | ServiceError::UnknownAnnotator(_) => StatusCode::NOT_FOUND,
            ServiceError::DuplicateCampaign(_) => StatusCode::CONFLICT,
            ServiceError::AnnotatorExcluded(_) => StatusCode::FORBIDDEN,
            ServiceError::InvalidConfig(_) | ServiceError::InvalidManifest { .. } | ServiceError::Core(_) => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ServiceError::Io { .. } | ServiceError::Corrupt { .. } => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorBody { error: self.0.to_string() })).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/campaigns", post(create_campaign))
        .route("/api/campaigns/{id}/next-batch", get(next_batch))
        .route("/api/campaigns/{id}/annotations", post(submit))
        .route("/api/campaigns/{id}/progress", get(progress))
        .route("/api/campaigns/{id}/export", get(export))
        .route("/api/campaigns/{id}/annotators/{aid}", get(annotator))
        .route("/api/campaigns/{id}/annotators/{aid}/exclude", post(exclude))
        .with_state(service)
}

async fn create_campaign(
    State(svc): State<Arc<Service>>,
    Json(req): Json<CreateCampaign>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let campaign_id = svc.create(req)?;
    Ok((StatusCode::CREATED, Json(Created { campaign_id })))
}

async fn next_batch(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<NextBatchQuery>,
) -> ApiResult<Json<NextBatchResponse>> {
    let batch = svc.with(&id, |c, now| c.next_batch(&q.annotator, now, q.size))?;
    Ok(Json(NextBatchResponse { batch }))
}

async fn submit(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<SubmitRequest>,
) -> ApiResult<Json<crate::SubmitResponse>> {
    Ok(Json(svc.with(&id, |c, now| c.submit(req.records, now))?))
}

async fn progress(State(svc): State<Arc<Service>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<crate::Progress>> {
    Ok(Json(svc.with(&id, |c, _| Ok(c.progress()))?))
}

async fn export(
    State(svc): State<Arc<Service>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let method: Method = q.method.as_deref().unwrap_or("RAW").parse().map_err(ServiceError::Core)?;
    let format: ExportFormat = q.format.as_deref().unwrap_or("csv").parse().map_err(ServiceError::Core)?;
    let body = svc.with(&id, |c, _| c.export(method, format))?;
    let content_type = match format {
        ExportFormat::Csv => "text/csv; charset=utf-8",
        ExportFormat::Jsonl => "application/x-ndjson",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], body).into_response())
}

async fn annotator(
    State(svc): State<Arc<Service>>,
    UrlPath((id, aid)): UrlPath<(String, String)>,
) -> ApiResult<Json<softlabel_core::gatekeeper::AnnotatorLedger>> {
    Ok(Json(svc.with(&id, |c, _| c.annotator(&aid))?))
}

async fn exclude(
    State(svc): State<Arc<Service>>,
    UrlPath((id, aid)): UrlPath<(String, String)>,
    body: Option<Json<ExcludeRequest>>,
) -> ApiResult<Json<softlabel_core::gatekeeper::AnnotatorLedger>> {
    let reason = body.and_then(|Json(b)| b.reason).unwrap_or_else(|| "operator exclusion".into());
    Ok(Json(svc.with(&id, |c, now| c.exclude(&aid, &reason, now))?))
}

/// Serves `service` on `addr` until Ctrl-C.
pub async fn serve(service: Arc<Service>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
