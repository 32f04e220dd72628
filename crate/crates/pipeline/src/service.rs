//! HTTP interface of the review loop.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/queue/next` | next pending [`ReviewItem`] or `{"empty": true}` |
//! | GET | `/api/items/{id}/image` | tile PNG |
//! | GET | `/api/items/{id}/mask` | predicted mask PNG |
//! | GET | `/api/items/{id}/overlay?opacity=40` | RGB PNG, mask highlighted over the tile |
//! | POST | `/api/items/{id}/decision` | `{"decision": "accept"\|"reject"}`; 404 unknown, 409 already decided |
//! | GET | `/api/status` | `{pending, accepted, rejected, round, training, last_error}` |
//! | POST | `/api/train` | 202 and starts the next round; 409 while one is running |
//!
//! Anything else falls through to an optional static directory.

use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cfos_core::image::encode_png_rgb;
use cfos_core::{load_image, load_mask};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::iterate::{overlay_rgb, Decision, ReviewItem, ReviewStore};

#[derive(Clone)]
pub struct AppState {
    store: Arc<Mutex<ReviewStore>>,
    cfg: Arc<PipelineConfig>,
    training: Arc<AtomicBool>,
    last_error: Arc<Mutex<Option<String>>>,
}

impl AppState {
    pub fn new(store: ReviewStore, cfg: PipelineConfig) -> Self {
        Self {
            store: Arc::new(Mutex::new(store)),
            cfg: Arc::new(cfg),
            training: Arc::new(AtomicBool::new(false)),
            last_error: Arc::new(Mutex::new(None)),
        }
    }

    fn store(&self) -> MutexGuard<'_, ReviewStore> {
        // A panic while holding the lock cannot leave the store half-written:
        // every mutation appends to the log before touching memory.
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusBody {
    pub pending: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub round: usize,
    pub training: bool,
    pub last_error: Option<String>,
}

#[derive(Debug, Deserialize)]
pub struct DecisionBody {
    pub decision: Decision,
}

#[derive(Debug, Deserialize)]
pub struct OverlayQuery {
    /// Percent, 0 to 100.
    pub opacity: Option<f32>,
}

struct ApiError(PipelineError);

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        ApiError(e)
    }
}

impl From<cfos_core::Error> for ApiError {
    fn from(e: cfos_core::Error) -> Self {
        ApiError(e.into())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = match self.0 {
            PipelineError::UnknownItem(_) => StatusCode::NOT_FOUND,
            PipelineError::AlreadyDecided(_) => StatusCode::CONFLICT,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = std::result::Result<T, ApiError>;

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn queue_next(State(s): State<AppState>) -> Response {
    match s.store().next_pending() {
        Some(item) => Json(item.clone()).into_response(),
        None => Json(json!({ "empty": true })).into_response(),
    }
}

fn item_paths(s: &AppState, id: &str) -> ApiResult<(PathBuf, PathBuf)> {
    let store = s.store();
    let item = store.item(id)?;
    Ok((store.resolve(&item.image_path), store.resolve(&item.mask_path)))
}

fn read(path: &std::path::Path) -> ApiResult<Vec<u8>> {
    fs::read(path).map_err(|e| ApiError(PipelineError::io(path, e)))
}

async fn item_image(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (image, _) = item_paths(&s, &id)?;
    Ok(png(read(&image)?))
}

async fn item_mask(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let (_, mask) = item_paths(&s, &id)?;
    Ok(png(read(&mask)?))
}

async fn item_overlay(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<OverlayQuery>,
) -> ApiResult<Response> {
    let (image, mask) = item_paths(&s, &id)?;
    let (image, mask) = (load_image(image)?, load_mask(mask)?);
    let rgb = overlay_rgb(&image, &mask, q.opacity.unwrap_or(40.0) / 100.0)?;
    Ok(png(encode_png_rgb(image.width(), image.height(), &rgb)?))
}

async fn decide(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> ApiResult<Json<ReviewItem>> {
    let item = s.store().decide(&id, body.decision)?;
    Ok(Json(item))
}

fn status_body(s: &AppState) -> StatusBody {
    let q = s.store().status();
    StatusBody {
        pending: q.pending,
        accepted: q.accepted,
        rejected: q.rejected,
        round: q.round,
        training: s.training.load(Ordering::SeqCst),
        last_error: s.last_error.lock().unwrap_or_else(|p| p.into_inner()).clone(),
    }
}

async fn status(State(s): State<AppState>) -> Json<StatusBody> {
    Json(status_body(&s))
}

async fn train(State(s): State<AppState>) -> Response {
    if s
        .training
        .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
        .is_err()
    {
        return (StatusCode::CONFLICT, Json(json!({ "error": "training already running" }))).into_response();
    }
    let job = match s.store().training_job() {
        Ok(job) => job,
        Err(e) => {
            s.training.store(false, Ordering::SeqCst);
            return ApiError(e).into_response();
        }
    };
    let round = job.round;
    let state = s.clone();
    tokio::task::spawn_blocking(move || {
        let result = job
            .run(&state.cfg)
            .and_then(|model| state.store().commit(&state.cfg, &job, &model));
        let mut last = state.last_error.lock().unwrap_or_else(|p| p.into_inner());
        match result {
            Ok(()) => *last = None,
            Err(e) => {
                log::error!("training round {round} failed: {e}");
                *last = Some(e.to_string());
            }
        }
        state.training.store(false, Ordering::SeqCst);
    });
    (StatusCode::ACCEPTED, Json(json!({ "round": round }))).into_response()
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue/next", get(queue_next))
        .route("/api/items/{id}/image", get(item_image))
        .route("/api/items/{id}/mask", get(item_mask))
        .route("/api/items/{id}/overlay", get(item_overlay))
        .route("/api/items/{id}/decision", post(decide))
        .route("/api/status", get(status))
        .route("/api/train", post(train))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Opens the review queue in the config's work dir and serves it until the
/// process is stopped.
pub async fn serve(cfg: PipelineConfig, addr: SocketAddr, static_dir: Option<PathBuf>) -> Result<()> {
    let store = ReviewStore::open(&cfg.work_dir())?;
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| PipelineError::Config(format!("cannot listen on {addr}: {e}")))?;
    log::info!("review service on http://{addr}");
    let app = router(AppState::new(store, cfg), static_dir);
    axum::serve(listener, app)
        .await
        .map_err(|e| PipelineError::Config(format!("service stopped: {e}")))
}
