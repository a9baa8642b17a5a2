//! HTTP routes. Handlers are thin wrappers over [`AppState`] methods, which
//! the CLI calls too.

use std::sync::Arc;

use axum::extract::{FromRequestParts, Path, Query, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tower_http::services::{ServeDir, ServeFile};

use crate::error::{ApiError, ErrorCode};
use crate::state::{
    AppState, ScoresResponse, SessionSummary, StoredOutcome, TopicSummary, TrajectoryResponse,
    TranscriptResponse,
};

type Shared = State<Arc<AppState>>;
type ApiResult<T> = Result<Json<T>, ApiError>;

/// `Path` whose rejection is an [`ApiError`].
pub struct ApiPath<T>(pub T);

impl<S, T> FromRequestParts<S> for ApiPath<T>
where
    T: DeserializeOwned + Send,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Path::<T>::from_request_parts(parts, state)
            .await
            .map(|Path(v)| ApiPath(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

/// `Query` whose rejection is an [`ApiError`].
pub struct ApiQuery<T>(pub T);

impl<S, T> FromRequestParts<S> for ApiQuery<T>
where
    T: DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(v)| ApiQuery(v))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/sessions", get(list_sessions))
        .route("/sessions/{id}/scores", get(scores))
        .route("/sessions/{id}/trajectory", get(trajectory))
        .route("/sessions/{id}/transcript", get(transcript))
        .route("/sessions/{id}/images", get(images).post(generate_images))
        .route("/topics", get(topics))
        .fallback(api_not_found)
        .method_not_allowed_fallback(method_not_allowed);

    let dashboard = state.dashboard_dir();
    let index = dashboard.join("index.html");
    let app = Router::new()
        .route("/healthz", get(healthz))
        .nest("/api", api)
        .route("/media/{id}/{file}", get(media));
    let app = if index.is_file() {
        app.fallback_service(ServeDir::new(&dashboard).fallback(ServeFile::new(index)))
    } else {
        app.route("/", get(no_dashboard)).fallback(api_not_found)
    };
    app.with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_sessions(State(state): Shared) -> ApiResult<Vec<SessionSummary>> {
    state.list_sessions().map(Json)
}

async fn scores(State(state): Shared, ApiPath(id): ApiPath<String>) -> ApiResult<ScoresResponse> {
    Ok(Json(ScoresResponse::from(state.scores(&id)?.as_ref())))
}

#[derive(Debug, Deserialize)]
struct TrajectoryQuery {
    topics: Option<String>,
}

fn parse_triple(raw: Option<&str>) -> Result<[usize; 3], ApiError> {
    let Some(raw) = raw else {
        return Ok([0, 1, 2]);
    };
    let parsed: Result<Vec<usize>, _> = raw.split(',').map(|t| t.trim().parse()).collect();
    match parsed.as_deref() {
        Ok(&[a, b, c]) => Ok([a, b, c]),
        _ => Err(ApiError::bad_request(format!(
            "topics must be three comma-separated topic indices, got {raw:?}"
        ))),
    }
}

async fn trajectory(
    State(state): Shared,
    ApiPath(id): ApiPath<String>,
    ApiQuery(q): ApiQuery<TrajectoryQuery>,
) -> ApiResult<TrajectoryResponse> {
    let topics = parse_triple(q.topics.as_deref())?;
    state.trajectory(&id, topics).map(Json)
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    from: Option<String>,
    to: Option<String>,
}

fn parse_bound(name: &str, raw: Option<&str>) -> Result<Option<usize>, ApiError> {
    raw.map(|v| {
        v.trim()
            .parse()
            .map_err(|_| ApiError::bad_request(format!("{name} must be a turn index, got {v:?}")))
    })
    .transpose()
}

async fn transcript(
    State(state): Shared,
    ApiPath(id): ApiPath<String>,
    ApiQuery(q): ApiQuery<RangeQuery>,
) -> ApiResult<TranscriptResponse> {
    let from = parse_bound("from", q.from.as_deref())?;
    let to = parse_bound("to", q.to.as_deref())?;
    state.transcript(&id, from, to).map(Json)
}

async fn images(State(state): Shared, ApiPath(id): ApiPath<String>) -> ApiResult<Vec<StoredOutcome>> {
    Ok(Json(state.images(&id)?.as_ref().clone()))
}

async fn generate_images(
    State(state): Shared,
    ApiPath(id): ApiPath<String>,
) -> ApiResult<Vec<StoredOutcome>> {
    let outcomes = tokio::task::spawn_blocking(move || state.generate_images(&id))
        .await
        .map_err(|e| ApiError::invariant(format!("image job panicked: {e}")))??;
    Ok(Json(outcomes.as_ref().clone()))
}

async fn topics(State(state): Shared) -> Json<Vec<TopicSummary>> {
    Json(state.topics())
}

async fn media(
    State(state): Shared,
    ApiPath((id, file)): ApiPath<(String, String)>,
) -> Result<Response, ApiError> {
    let path = state
        .media_file(&id, &file)
        .ok_or_else(|| ApiError::not_found(format!("no image {file:?} for session {id:?}")))?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| ApiError::not_found(format!("{}: {e}", path.display())))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

async fn no_dashboard() -> Html<&'static str> {
    Html(concat!(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>topicview</title></head>",
        "<body><h1>topicview</h1><p>The dashboard bundle is not installed. ",
        "The JSON API is available under <code>/api</code>: ",
        "<code>/api/sessions</code>, <code>/api/topics</code>, ",
        "<code>/api/sessions/{id}/scores</code>, <code>/trajectory</code>, ",
        "<code>/transcript</code>, <code>/images</code>.</p></body></html>"
    ))
}

async fn api_not_found() -> ApiError {
    ApiError::not_found("no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(
        StatusCode::METHOD_NOT_ALLOWED,
        ErrorCode::BadRequest,
        "method not allowed on this endpoint",
    )
}
