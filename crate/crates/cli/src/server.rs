//! Review-queue HTTP service.
//!
//! All mutations go through the one `QueueStore` behind a mutex, so the
//! service is the queue's single writer. Reads clone out of the same lock and
//! always see a state that matches the event log.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use leaflet_core::corpus::CorpusManifest;
use leaflet_core::review::{Choice, QueueError, QueueStats, QueueStore, ReviewCandidate, ReviewItem, ReviewStatus};

pub const DEFAULT_QUEUE_LIMIT: usize = 50;

pub struct AppState {
    store: Mutex<QueueStore>,
    n_classes: usize,
    images: HashMap<String, PathBuf>,
}

impl AppState {
    pub fn new(store: QueueStore, manifest: &CorpusManifest) -> Self {
        AppState {
            store: Mutex::new(store),
            n_classes: manifest.classes.len(),
            images: manifest
                .records
                .iter()
                .map(|r| (r.image_id.clone(), manifest.image_path(r)))
                .collect(),
        }
    }

    fn store(&self) -> std::sync::MutexGuard<'_, QueueStore> {
        // a panic while holding the lock cannot leave the store half-written:
        // the log line is flushed before the in-memory state changes
        self.store.lock().unwrap_or_else(|p| p.into_inner())
    }
}

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
}

impl From<QueueError> for ApiError {
    fn from(e: QueueError) -> Self {
        let status = match &e {
            QueueError::NotFound(_) => StatusCode::NOT_FOUND,
            QueueError::AlreadyResolved(_) => StatusCode::CONFLICT,
            QueueError::InvalidResolution(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn image_url(image_id: &str) -> String {
    format!("/images/{image_id}")
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemSummary {
    pub item_id: u64,
    pub image_id: String,
    pub image_url: String,
    pub status: ReviewStatus,
    pub predicted_class: usize,
    pub top3: Vec<ReviewCandidate>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QueuePage {
    pub items: Vec<ItemSummary>,
    /// Items with the requested status, before the limit.
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ItemDetail {
    #[serde(flatten)]
    pub item: ReviewItem,
    pub image_url: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResolutionBody {
    chosen_class_id: Choice,
    reviewer: String,
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    status: Option<String>,
    limit: Option<usize>,
}

async fn list_queue(State(state): State<Arc<AppState>>, Query(params): Query<QueueParams>) -> Result<Json<QueuePage>, ApiError> {
    let status = match params.status.as_deref().unwrap_or("pending") {
        "pending" => Some(ReviewStatus::Pending),
        "resolved" => Some(ReviewStatus::Resolved),
        "all" => None,
        other => {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("status must be pending, resolved or all, got {other:?}"),
            ))
        }
    };
    let limit = params.limit.unwrap_or(DEFAULT_QUEUE_LIMIT);
    let store = state.store();
    let matching: Vec<&ReviewItem> = store
        .state()
        .items
        .values()
        .filter(|i| status.is_none_or(|s| i.status == s))
        .collect();
    Ok(Json(QueuePage {
        total: matching.len(),
        items: matching
            .into_iter()
            .take(limit)
            .map(|i| ItemSummary {
                item_id: i.item_id,
                image_id: i.image_id.clone(),
                image_url: image_url(&i.image_id),
                status: i.status,
                predicted_class: i.predicted_class,
                top3: i.top3.clone(),
            })
            .collect(),
    }))
}

fn parse_item_id(raw: &str) -> Result<u64, ApiError> {
    raw.parse()
        .map_err(|_| ApiError::new(StatusCode::NOT_FOUND, format!("no item {raw:?}")))
}

async fn get_item(State(state): State<Arc<AppState>>, UrlPath(raw): UrlPath<String>) -> Result<Json<ItemDetail>, ApiError> {
    let id = parse_item_id(&raw)?;
    let store = state.store();
    let item = store.state().get(id).ok_or(QueueError::NotFound(id))?;
    Ok(Json(ItemDetail {
        image_url: image_url(&item.image_id),
        item: item.clone(),
    }))
}

async fn resolve_item(State(state): State<Arc<AppState>>, UrlPath(raw): UrlPath<String>, body: Bytes) -> Result<Json<ItemDetail>, ApiError> {
    let id = parse_item_id(&raw)?;
    let body: ResolutionBody = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("malformed resolution body: {e}")))?;
    if let Choice::Class(c) = body.chosen_class_id {
        if c >= state.n_classes {
            return Err(ApiError::new(
                StatusCode::BAD_REQUEST,
                format!("chosen_class_id {c} is outside the class table (0..{})", state.n_classes),
            ));
        }
    }
    let timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
    let mut store = state.store();
    // 404 before 400 so an unknown item is reported as such
    store.state().get(id).ok_or(QueueError::NotFound(id))?;
    let item = store.resolve(id, body.chosen_class_id, &body.reviewer, &timestamp)?;
    tracing::info!(item_id = id, reviewer = %body.reviewer, "resolved");
    Ok(Json(ItemDetail {
        image_url: image_url(&item.image_id),
        item: item.clone(),
    }))
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<QueueStats> {
    Json(state.store().state().stats())
}

async fn image(State(state): State<Arc<AppState>>, UrlPath(image_id): UrlPath<String>) -> Result<Response, ApiError> {
    let path = state
        .images
        .get(&image_id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("no image {image_id:?} in the manifest")))?
        .clone();
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::new(StatusCode::NOT_FOUND, format!("{}: {e}", path.display())))?;
    let mime = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => "image/png",
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("bmp") => "image/bmp",
        _ => "application/octet-stream",
    };
    Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "no such route")
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/queue", get(list_queue))
        .route("/api/items/{id}", get(get_item))
        .route("/api/items/{id}/resolution", post(resolve_item))
        .route("/api/stats", get(stats))
        .route("/images/{*image_id}", get(image))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}
