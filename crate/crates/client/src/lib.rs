//! Async client for the vortsdf HTTP service.

use std::time::Duration;

use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use vortsdf_core::api::{
    ApiError, CvtBenchRequest, EvalRequest, Health, JobCreated, JobProgress, JobState, JobStatus, ReconstructRequest,
    SynthRequest, SynthResponse,
};
use vortsdf_core::pipeline::{CvtBenchReport, EvalReport};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{0}")]
    Api(ApiError),
    #[error("request failed: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("unexpected response {status}: {body}")]
    Unexpected { status: StatusCode, body: String },
}

impl ClientError {
    /// Command line exit code: the service's classification for API errors,
    /// 1 for transport failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Api(e) => e.exit_code(),
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    base: String,
    http: reqwest::Client,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8080`.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        Client { base, http: reqwest::Client::new() }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T> {
        let status = resp.status();
        let body = resp.text().await?;
        if status.is_success() {
            return serde_json::from_str(&body).map_err(|_| ClientError::Unexpected { status, body });
        }
        match serde_json::from_str::<ApiError>(&body) {
            Ok(e) => Err(ClientError::Api(e)),
            Err(_) => Err(ClientError::Unexpected { status, body }),
        }
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    async fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T> {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<Health> {
        self.get("/health").await
    }

    pub async fn synth(&self, req: &SynthRequest) -> Result<SynthResponse> {
        self.post("/v1/synth", req).await
    }

    pub async fn eval(&self, req: &EvalRequest) -> Result<EvalReport> {
        self.post("/v1/eval", req).await
    }

    pub async fn cvt_bench(&self, req: &CvtBenchRequest) -> Result<CvtBenchReport> {
        self.post("/v1/cvt-bench", req).await
    }

    /// Starts a reconstruction job and returns its id.
    pub async fn start_reconstruct(&self, req: &ReconstructRequest) -> Result<String> {
        let created: JobCreated = self.post("/v1/reconstruct", req).await?;
        Ok(created.id)
    }

    pub async fn job(&self, id: &str) -> Result<JobStatus> {
        self.get(&format!("/v1/jobs/{id}")).await
    }

    /// Polls a job until it finishes, passing each new progress record to
    /// `on_progress`. A failed job is returned as [`ClientError::Api`].
    pub async fn wait(&self, id: &str, poll: Duration, mut on_progress: impl FnMut(&JobStatus)) -> Result<JobStatus> {
        let mut last: Option<JobProgress> = None;
        loop {
            let status = self.job(id).await?;
            if status.progress != last {
                last = status.progress;
                on_progress(&status);
            }
            match status.state {
                JobState::Running => tokio::time::sleep(poll).await,
                JobState::Succeeded => return Ok(status),
                JobState::Failed => {
                    let e = status.error.unwrap_or_else(|| ApiError::new(vortsdf_core::api::ErrorKind::Internal, "job failed"));
                    return Err(ClientError::Api(e));
                }
            }
        }
    }

    /// Runs a reconstruction to completion.
    pub async fn reconstruct(&self, req: &ReconstructRequest, poll: Duration, on_progress: impl FnMut(&JobStatus)) -> Result<JobStatus> {
        let id = self.start_reconstruct(req).await?;
        self.wait(&id, poll, on_progress).await
    }
}
