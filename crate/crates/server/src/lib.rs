//! HTTP/JSON service for synthesis, evaluation, CVT benchmarks and
//! reconstruction jobs.
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | GET | `/health` | | [`Health`] |
//! | POST | `/v1/synth` | [`SynthRequest`] | [`SynthResponse`] |
//! | POST | `/v1/eval` | [`EvalRequest`] | `EvalReport` |
//! | POST | `/v1/cvt-bench` | [`CvtBenchRequest`] | `CvtBenchReport` |
//! | POST | `/v1/reconstruct` | [`ReconstructRequest`] | [`JobCreated`] (202) |
//! | GET | `/v1/jobs/{id}` | | [`JobStatus`] |
//!
//! Failures return an [`ApiError`] body with status 400 (input), 404 (unknown
//! job), 422 (numerical failure) or 500.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tokio::net::TcpListener;
use vortsdf_core::api::{
    reconstruct_config, run_cvt_bench, run_eval, run_reconstruct, run_synth, ApiError, CvtBenchRequest, ErrorKind,
    EvalRequest, Health, JobCreated, JobState, JobStatus, ReconstructRequest, SynthRequest, SynthResponse,
};

#[derive(Clone, Default)]
pub struct AppState {
    jobs: Arc<Mutex<Jobs>>,
}

#[derive(Default)]
struct Jobs {
    next: u64,
    status: HashMap<String, JobStatus>,
}

impl AppState {
    fn update(&self, id: &str, f: impl FnOnce(&mut JobStatus)) {
        let mut jobs = self.jobs.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(s) = jobs.status.get_mut(id) {
            f(s);
        }
    }
}

struct Failure(ApiError);

impl IntoResponse for Failure {
    fn into_response(self) -> Response {
        let code = match self.0.kind {
            ErrorKind::Input => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Numerical => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorKind::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (code, Json(self.0)).into_response()
    }
}

impl From<JsonRejection> for Failure {
    fn from(e: JsonRejection) -> Self {
        Failure(ApiError::new(ErrorKind::Input, e.body_text()))
    }
}

type Reply<T> = Result<Json<T>, Failure>;

/// Runs a blocking operation on the blocking pool.
async fn blocking<T, F>(f: F) -> Reply<T>
where
    T: Serialize + Send + 'static,
    F: FnOnce() -> vortsdf_core::Result<T> + Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(Ok(v)) => Ok(Json(v)),
        Ok(Err(e)) => Err(Failure(e.into())),
        Err(e) => Err(Failure(ApiError::new(ErrorKind::Internal, e.to_string()))),
    }
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok".into(), version: env!("CARGO_PKG_VERSION").into() })
}

async fn synth(body: Result<Json<SynthRequest>, JsonRejection>) -> Reply<SynthResponse> {
    let Json(req) = body?;
    blocking(move || run_synth(&req)).await
}

async fn eval(body: Result<Json<EvalRequest>, JsonRejection>) -> Reply<vortsdf_core::pipeline::EvalReport> {
    let Json(req) = body?;
    blocking(move || run_eval(&req)).await
}

async fn cvt_bench(body: Result<Json<CvtBenchRequest>, JsonRejection>) -> Reply<vortsdf_core::pipeline::CvtBenchReport> {
    let Json(req) = body?;
    blocking(move || run_cvt_bench(&req)).await
}

async fn reconstruct(
    State(state): State<AppState>,
    body: Result<Json<ReconstructRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<JobCreated>), Failure> {
    let Json(req) = body?;
    // Configuration errors are reported synchronously.
    reconstruct_config(&req).map_err(|e| Failure(e.into()))?;
    let id = {
        let mut jobs = state.jobs.lock().unwrap_or_else(|e| e.into_inner());
        jobs.next += 1;
        let id = format!("job-{}", jobs.next);
        let status = JobStatus { id: id.clone(), state: JobState::Running, progress: None, levels: Vec::new(), error: None };
        jobs.status.insert(id.clone(), status);
        id
    };
    let (st, job) = (state.clone(), id.clone());
    tokio::task::spawn_blocking(move || {
        let result = run_reconstruct(
            &req,
            |p| st.update(&job, |s| s.progress = Some(p)),
            |r| st.update(&job, |s| s.levels.push(r.clone())),
        );
        st.update(&job, |s| match result {
            Ok(_) => s.state = JobState::Succeeded,
            Err(e) => {
                tracing::warn!(job = %job, error = %e, "reconstruction failed");
                s.state = JobState::Failed;
                s.error = Some(e.into());
            }
        });
    });
    tracing::info!(job = %id, "reconstruction started");
    Ok((StatusCode::ACCEPTED, Json(JobCreated { id })))
}

async fn job(State(state): State<AppState>, Path(id): Path<String>) -> Reply<JobStatus> {
    let jobs = state.jobs.lock().unwrap_or_else(|e| e.into_inner());
    match jobs.status.get(&id) {
        Some(s) => Ok(Json(s.clone())),
        None => Err(Failure(ApiError::new(ErrorKind::NotFound, format!("no job '{id}'")))),
    }
}

pub fn router() -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/v1/synth", post(synth))
        .route("/v1/eval", post(eval))
        .route("/v1/cvt-bench", post(cvt_bench))
        .route("/v1/reconstruct", post(reconstruct))
        .route("/v1/jobs/{id}", get(job))
        .with_state(AppState::default())
}

/// Serves the router on `listener` until the process exits.
pub async fn serve(listener: TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router()).await
}

/// Binds `addr` (port 0 picks a free port) and serves in a background task.
pub async fn spawn(addr: SocketAddr) -> std::io::Result<(SocketAddr, tokio::task::JoinHandle<std::io::Result<()>>)> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    Ok((local, tokio::spawn(serve(listener))))
}
