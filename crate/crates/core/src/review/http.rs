use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::desk::{DecisionInput, ReviewDesk, ReviewError, SampleSpec, TriageResolution};

pub type SharedDesk = Arc<Mutex<ReviewDesk>>;

impl IntoResponse for ReviewError {
    fn into_response(self) -> Response {
        let status = match &self {
            ReviewError::UnknownSession(_) | ReviewError::UnknownRun(_) | ReviewError::UnknownCluster(_) => {
                StatusCode::NOT_FOUND
            }
            ReviewError::OutOfOrder { .. }
            | ReviewError::SessionComplete(_)
            | ReviewError::ClusterClosed(_)
            | ReviewError::ReviewerMismatch { .. } => StatusCode::CONFLICT,
            ReviewError::Io { .. } | ReviewError::CorruptLog { .. } => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

#[derive(Debug, Deserialize)]
struct OpenRequest {
    reviewer_id: String,
    #[serde(flatten)]
    spec: SampleSpec,
}

#[derive(Debug, Deserialize)]
struct RunQuery {
    run_id: Option<String>,
}

#[derive(Debug, Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

type ApiResult = Result<Response, ReviewError>;

fn ok<T: serde::Serialize>(v: T) -> ApiResult {
    Ok(Json(v).into_response())
}

async fn open_session(State(desk): State<SharedDesk>, Json(req): Json<OpenRequest>) -> ApiResult {
    let session = desk.lock().unwrap().open_session(req.spec, &req.reviewer_id)?;
    Ok((StatusCode::CREATED, Json(session)).into_response())
}

async fn list_sessions(State(desk): State<SharedDesk>) -> ApiResult {
    let desk = desk.lock().unwrap();
    ok(desk.sessions().collect::<Vec<_>>())
}

async fn get_session(State(desk): State<SharedDesk>, Path(id): Path<String>) -> ApiResult {
    ok(desk.lock().unwrap().session(&id)?)
}

async fn next_unit(State(desk): State<SharedDesk>, Path(id): Path<String>) -> ApiResult {
    ok(desk.lock().unwrap().next_unit(&id)?)
}

async fn decide(State(desk): State<SharedDesk>, Path(id): Path<String>, Json(input): Json<DecisionInput>) -> ApiResult {
    ok(desk.lock().unwrap().submit_decision(&id, input)?)
}

async fn metrics(State(desk): State<SharedDesk>, Path(id): Path<String>) -> ApiResult {
    ok(desk.lock().unwrap().metrics(&id)?)
}

async fn codebook(State(desk): State<SharedDesk>, Query(q): Query<VersionQuery>) -> ApiResult {
    let desk = desk.lock().unwrap();
    let cb = match q.version {
        Some(v) => desk.codebook_version(v).ok_or(ReviewError::UnknownVersion(v))?,
        None => desk.codebook().ok_or(ReviewError::UnknownVersion(0))?,
    };
    Ok(([(header::CONTENT_TYPE, "application/json")], cb.to_json()).into_response())
}

async fn triage(State(desk): State<SharedDesk>, Query(q): Query<RunQuery>) -> ApiResult {
    ok(desk.lock().unwrap().triage(q.run_id.as_deref())?)
}

async fn resolve(
    State(desk): State<SharedDesk>,
    Path(cluster): Path<String>,
    Json(resolution): Json<TriageResolution>,
) -> ApiResult {
    ok(desk.lock().unwrap().resolve_triage(&cluster, resolution)?)
}

/// API routes, plus static console assets when `assets` is given.
pub fn router(desk: SharedDesk, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(open_session).get(list_sessions))
        .route("/api/session/{id}", get(get_session))
        .route("/api/session/{id}/next", get(next_unit))
        .route("/api/session/{id}/decision", post(decide))
        .route("/api/session/{id}/metrics", get(metrics))
        .route("/api/codebook", get(codebook))
        .route("/api/triage", get(triage))
        .route("/api/triage/{cluster}/resolve", post(resolve))
        .with_state(desk);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(desk: ReviewDesk, addr: SocketAddr, assets: Option<PathBuf>) -> std::io::Result<()> {
    let app = router(Arc::new(Mutex::new(desk)), assets);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("review desk listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}
