//! JSON-over-HTTP session API.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::cors::CorsLayer;

use dmalign_core::io::{decode_image, pgm_to_png, read_bytes};
use dmalign_core::pipeline::{EditConfig, Models, RunStatus, SessionStore};
use dmalign_core::Error;

pub struct AppState {
    pub store: SessionStore,
    pub models: Models,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn not_found(what: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("{what} not found"))
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e.root() {
            Error::EmptyCaption
            | Error::InvalidArgument(_)
            | Error::BadDimensions { .. }
            | Error::DimensionMismatch { .. }
            | Error::Image(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Error::ProviderUnavailable(_) => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Deserialize)]
pub struct CreateSession {
    pub image_b64: String,
    pub source_caption: String,
}

#[derive(Deserialize)]
pub struct PostEdit {
    pub target_caption: String,
    #[serde(default)]
    pub config: Option<EditConfig>,
}

#[derive(Serialize)]
struct ArtifactManifest {
    session_id: String,
    run_id: String,
    status: RunStatus,
    /// Kind → URL.
    artifacts: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct ArtifactQuery {
    format: Option<String>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/edits", post(post_edit))
        .route("/sessions/{id}/runs/{run_id}/artifacts", get(get_artifacts))
        .route("/sessions/{id}/runs/{run_id}/artifacts/{kind}", get(get_artifact))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

async fn healthz(State(state): State<Arc<AppState>>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "denoiser": state.models.denoiser.name(),
        "grounding": state.models.grounding.name(),
    }))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, Error> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateSession>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let bytes = STANDARD
        .decode(req.image_b64.trim())
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("image_b64: {e}")))?;
    let manifest = blocking(move || {
        let image = decode_image(&bytes)?;
        state.models.codec.check_image(image.width() as usize, image.height() as usize)?;
        state.store.create(&image, &req.source_caption)
    })
    .await?;
    Ok((StatusCode::CREATED, Json(json!({ "id": manifest.id }))))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    match state.store.get(&id)? {
        Some(m) => Ok(Json(m).into_response()),
        None => Err(ApiError::not_found("session")),
    }
}

async fn post_edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(req): Json<PostEdit>,
) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let config = req.config.unwrap_or_default();
    let record = blocking(move || state.store.post_edit(&id, &req.target_caption, &config, &state.models, false)).await?;
    match record {
        Some(r) => Ok((StatusCode::CREATED, Json(json!({ "run_id": r.run_id })))),
        None => Err(ApiError::not_found("session")),
    }
}

async fn get_artifacts(
    State(state): State<Arc<AppState>>,
    Path((id, run_id)): Path<(String, String)>,
) -> ApiResult<Json<ArtifactManifest>> {
    let m = state.store.get(&id)?.ok_or_else(|| ApiError::not_found("session"))?;
    let run = m.history.iter().find(|r| r.run_id == run_id).ok_or_else(|| ApiError::not_found("run"))?;
    let artifacts = run
        .artifacts
        .keys()
        .map(|k| (k.clone(), format!("/sessions/{id}/runs/{run_id}/artifacts/{k}")))
        .collect();
    Ok(Json(ArtifactManifest { session_id: id.clone(), run_id: run.run_id.clone(), status: run.status, artifacts }))
}

fn content_type(file: &str) -> &'static str {
    match file.rsplit('.').next() {
        Some("png") => "image/png",
        Some("json") => "application/json",
        Some("pgm") => "image/x-portable-graymap",
        _ => "application/octet-stream",
    }
}

/// Serves one artifact; `?format=png` converts PGM masks to PNG.
async fn get_artifact(
    State(state): State<Arc<AppState>>,
    Path((id, run_id, kind)): Path<(String, String, String)>,
    Query(q): Query<ArtifactQuery>,
) -> ApiResult<Response> {
    let path = state.store.artifact_path(&id, &run_id, &kind)?.ok_or_else(|| ApiError::not_found("artifact"))?;
    let name = path.to_string_lossy().into_owned();
    let bytes = read_bytes(&path)?;
    let (ctype, body) = match q.format.as_deref() {
        Some("png") if name.ends_with(".pgm") => ("image/png", pgm_to_png(&bytes)?),
        Some("png") | None => (content_type(&name), bytes),
        Some(other) => return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("unknown format {other:?}"))),
    };
    Ok(([(header::CONTENT_TYPE, ctype)], body).into_response())
}

pub async fn serve(state: Arc<AppState>, port: u16) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
