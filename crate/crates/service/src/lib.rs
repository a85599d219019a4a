//! HTTP/JSON front end over `simnet-core`: compile bundles, open sessions,
//! observe and retract findings, and ask for recommendations, justifications
//! and diagnoses.

pub mod error;
pub mod store;

use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use simnet_core::api::*;
use simnet_core::bundle::{load_bundle, transform_bundle, MultiDiseaseBundle};
use simnet_core::decision::{evaluate_cases, EvaluationReport, Recommendation};
use simnet_core::inference::Engine;
use simnet_core::session::{LogEntry, SessionError};
use tokio::net::TcpListener;

pub use error::ServiceError;
pub use store::Store;

pub const DEFAULT_RECOMMENDATIONS: usize = 4;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
}

impl AppState {
    /// In-memory state; nothing survives a restart.
    pub fn ephemeral(tolerance: f64) -> Self {
        AppState {
            store: Arc::new(Store::new(None, tolerance)),
        }
    }

    /// State mirrored to `dir`, restoring whatever is already there.
    pub async fn persistent(dir: PathBuf, tolerance: f64) -> Result<Self, ServiceError> {
        Ok(AppState {
            store: Arc::new(Store::open(dir, tolerance).await?),
        })
    }
}

type ApiResult<T> = Result<Json<T>, ServiceError>;

/// Parses a JSON body, reporting the path of the first offending field.
fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let err = ServiceError::new(StatusCode::BAD_REQUEST, "schema_error", e.inner().to_string());
        if path == "." {
            err
        } else {
            err.with_path(path)
        }
    })
}

async fn blocking<T, F>(f: F) -> Result<T, ServiceError>
where
    F: FnOnce() -> Result<T, ServiceError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::internal(e.to_string()))?
}

async fn health(State(s): State<AppState>) -> Json<Health> {
    let (networks, sessions) = s.store.counts();
    Json(Health {
        status: "ok".to_string(),
        networks,
        sessions,
    })
}

async fn create_network(
    State(s): State<AppState>,
    body: Bytes,
) -> Result<(StatusCode, Json<NetworkCreated>), ServiceError> {
    let bundle = load_bundle(&body)?;
    let name = bundle.metadata.name.clone();
    let entry = s.store.add_network(bundle).await?;
    let (warnings, conflicts) = match &entry.model {
        Some(m) => (m.warnings.clone(), m.conflicts.clone()),
        None => (Vec::new(), Vec::new()),
    };
    Ok((
        StatusCode::CREATED,
        Json(NetworkCreated {
            network_id: entry.id.clone(),
            name,
            verdict: entry.verdict.clone(),
            warnings,
            conflicts,
        }),
    ))
}

async fn graph(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<GraphView> {
    let entry = s.store.network(&id)?;
    Ok(Json(GraphView::of(&entry.id, entry.ready()?)))
}

async fn evaluate(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<EvaluationReport> {
    let req: EvaluateRequest = parse(&body)?;
    let entry = s.store.network(&id)?;
    let model = entry.ready()?.clone();
    blocking(move || {
        let u = model.utilities.as_ref().ok_or(SessionError::NoUtilities)?;
        let engine = Engine::new(&model.global).map_err(SessionError::from)?;
        Ok(evaluate_cases(&engine, u, &req.cases)?)
    })
    .await
    .map(Json)
}

async fn transform(State(s): State<AppState>, body: Bytes) -> ApiResult<MultiDiseaseBundle> {
    let req: TransformRequest = parse(&body)?;
    let tolerance = s.store.tolerance();
    blocking(move || Ok(transform_bundle(&req.bundle, &req.normal, &req.priors, tolerance)?))
        .await
        .map(Json)
}

async fn create_session(
    State(s): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionCreated>), ServiceError> {
    let req: CreateSession = if body.iter().all(u8::is_ascii_whitespace) {
        CreateSession::default()
    } else {
        parse(&body)?
    };
    let slot = s
        .store
        .create_session(&id, req.policy.unwrap_or_default(), &req.log)
        .await?;
    Ok((
        StatusCode::CREATED,
        Json(SessionCreated {
            session_id: slot.id.clone(),
            network_id: slot.network.id.clone(),
            differential: slot.snapshot().differential().into(),
        }),
    ))
}

async fn observe(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<ObservationResponse> {
    let req: ObserveRequest = parse(&body)?;
    let slot = s.store.session(&id)?;
    let next = s
        .store
        .apply(
            &slot,
            LogEntry::Observe {
                feature: req.feature,
                instance: req.instance,
            },
        )
        .await?;
    Ok(Json(ObservationResponse {
        differential: next.differential().into(),
        evidence: next.evidence().clone(),
    }))
}

async fn retract(
    State(s): State<AppState>,
    Path((id, feature)): Path<(String, String)>,
) -> ApiResult<ObservationResponse> {
    let slot = s.store.session(&id)?;
    let next = s.store.apply(&slot, LogEntry::Retract { feature }).await?;
    Ok(Json(ObservationResponse {
        differential: next.differential().into(),
        evidence: next.evidence().clone(),
    }))
}

async fn differential(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<DifferentialView> {
    let slot = s.store.session(&id)?;
    Ok(Json(slot.snapshot().differential().into()))
}

async fn log(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<SessionRecord> {
    let slot = s.store.session(&id)?;
    Ok(Json(s.store.record(&slot)))
}

#[derive(Deserialize)]
struct LimitQuery {
    limit: Option<usize>,
}

async fn recommendations(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<LimitQuery>,
) -> ApiResult<Vec<Recommendation>> {
    let slot = s.store.session(&id)?;
    let limit = q.limit.unwrap_or(DEFAULT_RECOMMENDATIONS);
    blocking(move || Ok(slot.snapshot().recommendations(slot.model(), limit)?))
        .await
        .map(Json)
}

#[derive(Deserialize)]
struct FeatureQuery {
    feature: Option<String>,
}

async fn justification(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FeatureQuery>,
) -> ApiResult<JustificationView> {
    let feature = q.feature.ok_or_else(|| {
        ServiceError::new(
            StatusCode::BAD_REQUEST,
            "schema_error",
            "missing query parameter `feature`",
        )
        .with_path("feature")
    })?;
    let slot = s.store.session(&id)?;
    let j = slot.snapshot().justification(slot.model(), &feature)?;
    Ok(Json(JustificationView {
        feature: j.feature,
        top_two: j.top_two,
        instances: j.instances.into_iter().map(WeightView::from).collect(),
    }))
}

async fn diagnose(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<DiagnosisView> {
    let slot = s.store.session(&id)?;
    Ok(Json(slot.snapshot().diagnose(slot.model())?.into()))
}

async fn fallback() -> ServiceError {
    ServiceError::new(StatusCode::NOT_FOUND, "not_found", "no such route")
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/networks", post(create_network))
        .route("/networks/{id}/graph", get(graph))
        .route("/networks/{id}/sessions", post(create_session))
        .route("/networks/{id}/evaluate", post(evaluate))
        .route("/transform-multi", post(transform))
        .route("/sessions/{id}/observations", post(observe))
        .route("/sessions/{id}/observations/{feature}", delete(retract))
        .route("/sessions/{id}/differential", get(differential))
        .route("/sessions/{id}/log", get(log))
        .route("/sessions/{id}/recommendations", get(recommendations))
        .route("/sessions/{id}/justification", get(justification))
        .route("/sessions/{id}/diagnose", post(diagnose))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}
