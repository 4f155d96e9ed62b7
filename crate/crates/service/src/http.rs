//! JSON API over a [`Service`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use modq_core::moderation::Threshold;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::services::{ServeDir, ServeFile};

use crate::engine::Service;
use crate::error::ServiceError;
use crate::types::StatusFilter;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::ModelUnavailable => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        if status == StatusCode::INTERNAL_SERVER_ERROR {
            log::error!("{self}");
        }
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

/// Parses a JSON body; malformed bodies are validation errors (400).
fn parse<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ServiceError::Validation(format!("invalid request body: {e}")))
}

/// Runs a blocking service call off the async workers.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> ApiResult<T> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ServiceError::Validation(format!("request aborted: {e}"))))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRequest {
    text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionRequest {
    label: usize,
    moderator_id: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThresholdRequest {
    threshold: Threshold,
}

#[derive(Deserialize)]
struct QueueQuery {
    status: Option<String>,
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn classify(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ClassifyRequest = parse(&body)?;
    let item = blocking(move || svc.classify(&req.text)).await?;
    Ok(Json(item))
}

async fn queue(State(svc): State<Arc<Service>>, Query(q): Query<QueueQuery>) -> ApiResult<impl IntoResponse> {
    let filter = match q.status.as_deref() {
        None | Some("") => StatusFilter::default(),
        Some(s) => s.parse()?,
    };
    Ok(Json(svc.list_queue(filter, q.limit, q.offset.unwrap_or(0))))
}

async fn decide(
    State(svc): State<Arc<Service>>,
    Path(id): Path<u64>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: DecisionRequest = parse(&body)?;
    let item = blocking(move || svc.submit_decision(id, req.label, &req.moderator_id)).await?;
    Ok(Json(item))
}

async fn stats(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(svc.stats())
}

async fn config(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    Json(svc.config())
}

async fn set_threshold(State(svc): State<Arc<Service>>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: ThresholdRequest = parse(&body)?;
    let config = blocking(move || svc.set_threshold(req.threshold)).await?;
    Ok(Json(config))
}

async fn export(State(svc): State<Arc<Service>>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/x-ndjson")], svc.export_jsonl())
}

/// API routes, plus static files from `ui_dir` for every other path when given.
pub fn router(service: Arc<Service>, ui_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/classify", post(classify))
        .route("/api/queue", get(queue))
        .route("/api/queue/{id}/decision", post(decide))
        .route("/api/stats", get(stats))
        .route("/api/config", get(config))
        .route("/api/config/threshold", put(set_threshold))
        .route("/api/export", get(export))
        .with_state(service);
    match ui_dir {
        Some(dir) => {
            let index = dir.join("index.html");
            api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(index)))
        }
        None => api,
    }
}

/// Serves until Ctrl-C.
pub async fn serve(service: Arc<Service>, addr: SocketAddr, ui_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(service, ui_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
