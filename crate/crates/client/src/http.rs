use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::Serialize;
use supertask_service::api::*;
use supertask_service::WireMessage;

use crate::{ClientError, Exchange};

/// Typed access to the service's HTTP endpoints.
#[derive(Debug, Clone)]
pub struct HttpClient {
    base: String,
    http: reqwest::Client,
}

impl HttpClient {
    /// `base` is e.g. `http://127.0.0.1:7878`; a trailing slash is ignored.
    pub fn new(base: impl Into<String>) -> Self {
        let base = base.into().trim_end_matches('/').to_string();
        HttpClient {
            base,
            http: reqwest::Client::new(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    async fn post<Req: Serialize + ?Sized, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let resp = self
            .http
            .post(format!("{}{path}", self.base))
            .json(body)
            .send()
            .await?;
        decode(resp).await
    }

    pub async fn health(&self) -> Result<serde_json::Value, ClientError> {
        let resp = self
            .http
            .get(format!("{}/v1/health", self.base))
            .send()
            .await?;
        decode(resp).await
    }

    pub async fn message(&self, msg: &WireMessage) -> Result<Vec<WireMessage>, ClientError> {
        self.post("/v1/message", msg).await
    }

    pub async fn simulate(&self, req: &SimulateRequest) -> Result<SimulateResponse, ClientError> {
        self.post("/v1/simulate", req).await
    }

    pub async fn analyze(&self, req: &AnalyzeRequest) -> Result<AnalyzeResponse, ClientError> {
        self.post("/v1/analyze", req).await
    }

    pub async fn fit(&self, req: &FitRequest) -> Result<FitResponse, ClientError> {
        self.post("/v1/fit", req).await
    }

    pub async fn recover(&self, req: &RecoverRequest) -> Result<RecoverResponse, ClientError> {
        self.post("/v1/recover", req).await
    }

    pub async fn benchmark(
        &self,
        req: &BenchmarkRequest,
    ) -> Result<BenchmarkResponse, ClientError> {
        self.post("/v1/benchmark", req).await
    }
}

async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
    let status = resp.status();
    if status == StatusCode::OK {
        return Ok(resp.json().await?);
    }
    let body = resp.text().await?;
    match serde_json::from_str::<ApiError>(&body) {
        Ok(e) => Err(ClientError::Api(e)),
        Err(_) => Err(ClientError::Status {
            status: status.as_u16(),
            body,
        }),
    }
}

impl Exchange for HttpClient {
    async fn exchange(&mut self, msg: &WireMessage) -> Result<Vec<WireMessage>, ClientError> {
        self.message(msg).await
    }
}
