//! Thin async client for the simnet HTTP API.

use reqwest::{Method, StatusCode, Url};
use serde::de::DeserializeOwned;
use serde::Serialize;
use simnet_core::api::*;
use simnet_core::bundle::MultiDiseaseBundle;
use simnet_core::decision::{DiagnosisPolicy, EvaluationCase, EvaluationReport, Recommendation};
use simnet_core::session::LogEntry;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    /// The service answered with an error body.
    #[error("{} ({status}): {}", error.code, error.message)]
    Api { status: StatusCode, error: ApiError },
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    #[error("malformed response: {0}")]
    Decode(String),
    #[error("invalid base url: {0}")]
    BaseUrl(String),
}

impl ClientError {
    /// Stable error code when the service reported one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } => Some(&error.code),
            _ => None,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Debug, Clone)]
pub struct Client {
    http: reqwest::Client,
    base: Url,
}

impl Client {
    pub fn new(base: &str) -> Result<Self> {
        let base = Url::parse(base).map_err(|e| ClientError::BaseUrl(format!("{base}: {e}")))?;
        if base.cannot_be_a_base() {
            return Err(ClientError::BaseUrl(base.to_string()));
        }
        Ok(Client {
            http: reqwest::Client::new(),
            base,
        })
    }

    pub fn base(&self) -> &Url {
        &self.base
    }

    /// Appends `segments` to the base URL, percent-encoding each one.
    fn url(&self, segments: &[&str]) -> Url {
        let mut url = self.base.clone();
        url.path_segments_mut()
            .expect("checked in new")
            .pop_if_empty()
            .extend(segments);
        url
    }

    async fn send<T: DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T> {
        let resp = req.send().await?;
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if !status.is_success() {
            let error = serde_json::from_slice(&bytes)
                .map_err(|e| ClientError::Decode(format!("{status}: {e}: {}", String::from_utf8_lossy(&bytes))))?;
            return Err(ClientError::Api { status, error });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode(e.to_string()))
    }

    async fn call<T: DeserializeOwned>(&self, method: Method, segments: &[&str]) -> Result<T> {
        self.send(self.http.request(method, self.url(segments))).await
    }

    async fn call_json<B: Serialize, T: DeserializeOwned>(
        &self,
        method: Method,
        segments: &[&str],
        body: &B,
    ) -> Result<T> {
        self.send(self.http.request(method, self.url(segments)).json(body))
            .await
    }

    pub async fn health(&self) -> Result<Health> {
        self.call(Method::GET, &["health"]).await
    }

    /// Uploads a bundle exactly as given, so schema errors point into it.
    pub async fn create_network(&self, bundle: impl Into<Vec<u8>>) -> Result<NetworkCreated> {
        let req = self
            .http
            .post(self.url(&["networks"]))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(bundle.into());
        self.send(req).await
    }

    pub async fn graph(&self, network: &str) -> Result<GraphView> {
        self.call(Method::GET, &["networks", network, "graph"]).await
    }

    pub async fn create_session(
        &self,
        network: &str,
        policy: Option<DiagnosisPolicy>,
        log: Vec<LogEntry>,
    ) -> Result<SessionCreated> {
        let body = CreateSession { policy, log };
        self.call_json(Method::POST, &["networks", network, "sessions"], &body)
            .await
    }

    pub async fn evaluate(&self, network: &str, cases: Vec<EvaluationCase>) -> Result<EvaluationReport> {
        self.call_json(
            Method::POST,
            &["networks", network, "evaluate"],
            &EvaluateRequest { cases },
        )
        .await
    }

    pub async fn transform_multi(&self, req: &TransformRequest) -> Result<MultiDiseaseBundle> {
        self.call_json(Method::POST, &["transform-multi"], req).await
    }

    pub async fn observe(&self, session: &str, feature: &str, instance: &str) -> Result<ObservationResponse> {
        let body = ObserveRequest {
            feature: feature.to_string(),
            instance: instance.to_string(),
        };
        self.call_json(Method::POST, &["sessions", session, "observations"], &body)
            .await
    }

    pub async fn retract(&self, session: &str, feature: &str) -> Result<ObservationResponse> {
        self.call(Method::DELETE, &["sessions", session, "observations", feature])
            .await
    }

    pub async fn differential(&self, session: &str) -> Result<DifferentialView> {
        self.call(Method::GET, &["sessions", session, "differential"]).await
    }

    pub async fn log(&self, session: &str) -> Result<SessionRecord> {
        self.call(Method::GET, &["sessions", session, "log"]).await
    }

    pub async fn recommendations(&self, session: &str, limit: Option<usize>) -> Result<Vec<Recommendation>> {
        let mut url = self.url(&["sessions", session, "recommendations"]);
        if let Some(n) = limit {
            url.query_pairs_mut().append_pair("limit", &n.to_string());
        }
        self.send(self.http.get(url)).await
    }

    pub async fn justification(&self, session: &str, feature: &str) -> Result<JustificationView> {
        let mut url = self.url(&["sessions", session, "justification"]);
        url.query_pairs_mut().append_pair("feature", feature);
        self.send(self.http.get(url)).await
    }

    pub async fn diagnose(&self, session: &str) -> Result<DiagnosisView> {
        self.call(Method::POST, &["sessions", session, "diagnose"]).await
    }
}
