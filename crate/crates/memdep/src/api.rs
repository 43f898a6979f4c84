//! HTTP service for browsing trajectories and editing memory dependency
//! pairs. Every mutation rewrites the dataset file atomically while holding
//! the write lock, so writes are serialized and the file always validates.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get};
use axum::{Json, Router};
use memdep_core::dataset::Dataset;
use memdep_core::envgym::TaskKind;
use serde::{Deserialize, Serialize};
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use crate::io::{self, Record};
use crate::render;

pub struct AppState {
    path: PathBuf,
    data: RwLock<Dataset>,
}

impl AppState {
    pub fn open(path: PathBuf) -> Result<Arc<Self>, io::FormatError> {
        let data = io::load(&path)?;
        Ok(Arc::new(Self { path, data: RwLock::new(data) }))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub id: u64,
    pub task: TaskKind,
    pub length: usize,
    pub annotated: bool,
    pub pair_count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSubmission {
    pub p: usize,
    pub q: usize,
    /// Milliseconds since the epoch on the client; informational.
    #[serde(default)]
    pub client_timestamp: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredPair {
    pub p: usize,
    pub q: usize,
}

#[derive(Debug)]
pub enum ApiError {
    NotFound(&'static str),
    Unprocessable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, m.to_string()),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(serde_json::json!({ "error": message }))).into_response()
    }
}

type Shared = Arc<AppState>;

async fn list(State(s): State<Shared>) -> Json<Vec<Summary>> {
    let data = s.data.read().await;
    let mut out: Vec<Summary> = data
        .trajectories
        .iter()
        .map(|t| Summary { id: t.id, task: t.task, length: t.len(), annotated: t.annotated, pair_count: t.pairs.len() })
        .collect();
    out.sort_by_key(|s| s.id);
    Json(out)
}

async fn record(State(s): State<Shared>, Path(id): Path<u64>) -> Result<Json<Record>, ApiError> {
    let data = s.data.read().await;
    let t = data.get(id).ok_or(ApiError::NotFound("unknown trajectory"))?;
    Ok(Json(Record::from_trajectory(t)))
}

async fn pairs(State(s): State<Shared>, Path(id): Path<u64>) -> Result<Json<Vec<(usize, usize)>>, ApiError> {
    let data = s.data.read().await;
    let t = data.get(id).ok_or(ApiError::NotFound("unknown trajectory"))?;
    Ok(Json(t.pairs.clone()))
}

async fn frame(State(s): State<Shared>, Path((id, step)): Path<(u64, usize)>) -> Result<Response, ApiError> {
    let obs = {
        let data = s.data.read().await;
        let t = data.get(id).ok_or(ApiError::NotFound("unknown trajectory"))?;
        t.observations.get(step).cloned().ok_or(ApiError::NotFound("no such frame"))?
    };
    let png = render::frame_png(&obs);
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

/// Applies `edit` under the write lock and persists the result; the
/// in-memory copy is restored if the file cannot be written.
async fn mutate<T>(
    s: &AppState,
    id: u64,
    edit: impl FnOnce(&mut memdep_core::dataset::Trajectory) -> Result<T, ApiError>,
) -> Result<T, ApiError> {
    let mut data = s.data.write().await;
    let t = data.get_mut(id).ok_or(ApiError::NotFound("unknown trajectory"))?;
    let before = t.clone();
    let out = edit(t)?;
    let snapshot = data.clone();
    let path = s.path.clone();
    let saved = tokio::task::spawn_blocking(move || io::save(&snapshot, &path))
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    if let Err(e) = saved {
        *data.get_mut(id).expect("present above") = before;
        return Err(ApiError::Internal(e.to_string()));
    }
    Ok(out)
}

async fn add_pair(
    State(s): State<Shared>,
    Path(id): Path<u64>,
    Json(body): Json<PairSubmission>,
) -> Result<(StatusCode, Json<StoredPair>), ApiError> {
    let (p, q) = (body.p, body.q);
    let inserted = mutate(&s, id, |t| {
        if !(p < q && q < t.len()) {
            return Err(ApiError::Unprocessable(format!("pair ({p},{q}) violates 0 <= p < q < {}", t.len())));
        }
        t.annotated = true;
        t.insert_pair(p, q).map_err(|e| ApiError::Unprocessable(e.to_string()))
    })
    .await?;
    let status = if inserted { StatusCode::CREATED } else { StatusCode::OK };
    Ok((status, Json(StoredPair { p, q })))
}

async fn remove_pair(
    State(s): State<Shared>,
    Path((id, p, q)): Path<(u64, usize, usize)>,
) -> Result<StatusCode, ApiError> {
    mutate(&s, id, |t| if t.remove_pair(p, q) { Ok(()) } else { Err(ApiError::NotFound("no such pair")) }).await?;
    Ok(StatusCode::NO_CONTENT)
}

/// API routes, plus static files from `assets` at `/` when given.
pub fn router(state: Shared, assets: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/trajectories", get(list))
        .route("/api/trajectories/{id}", get(record))
        .route("/api/trajectories/{id}/frames/{t}", get(frame))
        .route("/api/trajectories/{id}/pairs", get(pairs).post(add_pair))
        .route("/api/trajectories/{id}/pairs/{p}/{q}", delete(remove_pair))
        .with_state(state);
    match assets {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(state: Shared, assets: Option<PathBuf>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state, assets)).await
}
