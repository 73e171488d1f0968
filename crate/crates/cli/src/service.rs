//! Read-only HTTP service over a loaded index.
//!
//! `POST /retrieve` runs the same pipeline call as `graphmem retrieve`.
//! At most `max_concurrent` queries run at once; a request that cannot get a
//! slot within the queue timeout is answered with 503 and `Retry-After`.

use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use graphmem_core::config::ServiceConfig;
use graphmem_core::{Error, GraphStats, RetrievalConfig, Retriever};
use serde_json::json;
use tokio::sync::Semaphore;

use crate::app::{self, Loaded, RetrieveRequest};

pub struct AppState {
    pub retriever: Retriever,
    pub defaults: RetrievalConfig,
    pub fingerprint: String,
    pub stats: GraphStats,
    pub slots: Arc<Semaphore>,
    pub queue_timeout: Duration,
    pub request_timeout: Duration,
}

impl AppState {
    pub fn new(loaded: Loaded, service: &ServiceConfig) -> Self {
        let stats = loaded.retriever.index().stats();
        AppState {
            fingerprint: loaded.manifest.fingerprint(),
            retriever: loaded.retriever,
            defaults: loaded.defaults,
            stats,
            slots: Arc::new(Semaphore::new(service.max_concurrent.max(1))),
            queue_timeout: Duration::from_millis(service.queue_timeout_ms),
            request_timeout: Duration::from_millis(service.request_timeout_ms),
        }
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/retrieve", post(retrieve))
        .route("/healthz", get(healthz))
        .route("/stats", get(stats))
        .with_state(state)
}

fn error_body(status: StatusCode, kind: &str, message: String) -> Response {
    (status, Json(json!({ "error": kind, "message": message }))).into_response()
}

fn internal(err: impl std::fmt::Display) -> Response {
    let id = uuid::Uuid::new_v4().to_string();
    tracing::error!(error_id = %id, error = %err, "retrieve failed");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(json!({ "error": "internal", "error_id": id })),
    )
        .into_response()
}

async fn retrieve(State(state): State<Arc<AppState>>, body: Result<Json<RetrieveRequest>, JsonRejection>) -> Response {
    let Json(request) = match body {
        Ok(b) => b,
        Err(rejection) => return error_body(StatusCode::BAD_REQUEST, "bad_request", rejection.body_text()),
    };
    let permit = match tokio::time::timeout(state.queue_timeout, state.slots.clone().acquire_owned()).await {
        Ok(Ok(p)) => p,
        Ok(Err(e)) => return internal(e),
        Err(_) => {
            let mut r = error_body(StatusCode::SERVICE_UNAVAILABLE, "overloaded", "all query slots busy".into());
            r.headers_mut().insert(header::RETRY_AFTER, header::HeaderValue::from_static("1"));
            return r;
        }
    };

    let config = request.apply(&state.defaults);
    let worker = state.clone();
    let job = tokio::task::spawn_blocking(move || {
        let _permit = permit;
        app::retrieve(&worker.retriever, &request.query, &config)
    });
    match tokio::time::timeout(state.request_timeout, job).await {
        Ok(Ok(Ok(response))) => Json(response).into_response(),
        Ok(Ok(Err(e @ (Error::Validation(_) | Error::Usage(_))))) => {
            error_body(StatusCode::BAD_REQUEST, "invalid_request", e.to_string())
        }
        Ok(Ok(Err(e))) => internal(e),
        Ok(Err(join)) => internal(join),
        // the blocking task keeps its permit until it finishes
        Err(_) => error_body(StatusCode::GATEWAY_TIMEOUT, "timeout", "retrieval exceeded the request timeout".into()),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({ "status": "ok", "fingerprint": state.fingerprint })).into_response()
}

async fn stats(State(state): State<Arc<AppState>>) -> Json<GraphStats> {
    Json(state.stats)
}

/// Binds and serves until interrupted.
pub fn serve(state: AppState, bind: &str) -> anyhow::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(bind).await?;
        tracing::info!(addr = %listener.local_addr()?, fingerprint = %state.fingerprint, "serving");
        axum::serve(listener, router(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
