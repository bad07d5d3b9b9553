//! HTTP/JSON service under `/api/v1`.

use std::net::SocketAddr;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::api::{self, ErrorResponse, JobAccepted, JobResponse, SimulateRequest};
use crate::error::{ApiError, ErrorKind};
use crate::jobs::JobStore;

#[derive(Clone)]
pub struct AppState {
    pub jobs: JobStore,
    /// Worker-count hint handed to simulations.
    pub workers: usize,
}

impl AppState {
    /// Must be called inside a tokio runtime (it starts the job worker).
    pub fn new(workers: usize) -> Self {
        Self { jobs: JobStore::start(), workers: workers.max(1) }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match self.kind {
            ErrorKind::MalformedBody | ErrorKind::InvalidInput => StatusCode::BAD_REQUEST,
            ErrorKind::NumericalFailure => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(ErrorResponse::from(&self))).into_response()
    }
}

type Reply<T> = Result<Json<T>, ApiError>;

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(ErrorKind::MalformedBody, e.to_string()))
}

/// Runs CPU-bound work off the async executor.
async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(ErrorKind::Internal, e.to_string()))?
        .map(Json)
}

async fn analyze(body: Bytes) -> Reply<api::AnalyzeResponse> {
    let req: api::AnalyzeRequest = parse(&body)?;
    blocking(move || api::analyze(&req)).await
}

async fn adjust_alpha(body: Bytes) -> Reply<api::AdjustAlphaResponse> {
    let req: api::AdjustAlphaRequest = parse(&body)?;
    blocking(move || api::adjust_alpha(&req)).await
}

async fn weight_curve(body: Bytes) -> Reply<api::WeightCurveResponse> {
    let req: api::WeightCurveRequest = parse(&body)?;
    Ok(Json(api::weight_curve_points(&req)?))
}

async fn simulate(State(state): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let req: SimulateRequest = parse(&body)?;
    let plan = req.plan(state.workers)?;
    let job = state.jobs.submit(plan);
    Ok((
        StatusCode::ACCEPTED,
        Json(JobAccepted { schema_version: api::SCHEMA_VERSION.into(), job_id: job.id, status: job.status }),
    ))
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> Reply<JobResponse> {
    let job = state
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::new(ErrorKind::NotFound, format!("no job `{id}`")))?;
    Ok(Json(JobResponse { schema_version: api::SCHEMA_VERSION.into(), job }))
}

async fn scenarios() -> Json<api::ScenariosResponse> {
    Json(api::scenarios())
}

async fn health() -> Json<api::HealthResponse> {
    Json(api::health())
}

async fn not_found() -> ApiError {
    ApiError::new(ErrorKind::NotFound, "no such endpoint")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/v1/analyze", post(analyze))
        .route("/api/v1/adjust-alpha", post(adjust_alpha))
        .route("/api/v1/weight-curve", post(weight_curve))
        .route("/api/v1/simulate", post(simulate))
        .route("/api/v1/jobs/{id}", get(job))
        .route("/api/v1/scenarios", get(scenarios))
        .route("/api/v1/health", get(health))
        .fallback(not_found)
        .with_state(state)
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

/// Serves until SIGINT or SIGTERM. `on_ready` receives the bound address.
pub async fn serve(addr: SocketAddr, workers: usize, on_ready: impl FnOnce(SocketAddr)) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_ready(listener.local_addr()?);
    axum::serve(listener, router(AppState::new(workers)))
        .with_graceful_shutdown(shutdown_signal())
        .await
}
