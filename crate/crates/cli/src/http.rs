//! JSON over HTTP front end.

use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::Deserialize;

use crate::api::{Api, ApiError, ApiResult, CreateProject, DecisionRequest, SimulateRequest};

pub type Shared = Arc<Mutex<Api>>;

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.http_status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> ApiError {
        ApiError::new("BadRequest", r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> ApiError {
        ApiError::new("BadRequest", r.body_text())
    }
}

/// Runs `f` on a blocking thread with the API locked. Stage handlers can
/// take seconds, so they must not run on the async workers.
async fn call<T, F>(state: &Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&mut Api) -> ApiResult<T> + Send + 'static,
{
    let state = state.clone();
    tokio::task::spawn_blocking(move || {
        let mut api = state.lock().unwrap_or_else(|poisoned| poisoned.into_inner());
        f(&mut api)
    })
    .await
    .map_err(|e| ApiError::new("Internal", e.to_string()))?
}

pub fn router(api: Api) -> Router {
    router_shared(Arc::new(Mutex::new(api)))
}

pub fn router_shared(state: Shared) -> Router {
    Router::new()
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project))
        .route("/projects/{id}/bias-history", get(bias_history))
        .route("/projects/{id}/similar", get(similar))
        .route("/projects/{id}/advance", post(advance))
        .route("/projects/{id}/gate", get(gate))
        .route("/projects/{id}/gate/decision", post(decide))
        .route("/projects/{id}/older-versions", post(link))
        .route("/hog", get(hog))
        .route("/stages", get(stage_table))
        .route("/simulate/marketing", post(simulate))
        .route("/admin/purge", post(purge))
        .with_state(state)
}

async fn create_project(State(s): State<Shared>, body: Result<Json<CreateProject>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let p = call(&s, move |api| api.create_project(req)).await?;
    Ok((StatusCode::CREATED, Json(p)).into_response())
}

async fn list_projects(State(s): State<Shared>) -> ApiResult<Response> {
    Ok(Json(call(&s, |api| api.list_projects()).await?).into_response())
}

async fn get_project(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let (p, rev) = call(&s, move |api| api.get_project(&id)).await?;
    let mut resp = Json(p).into_response();
    resp.headers_mut().insert("x-revision", HeaderValue::from(rev));
    Ok(resp)
}

async fn bias_history(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    let text = call(&s, move |api| api.bias_history(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "application/json")], text).into_response())
}

#[derive(Deserialize)]
struct SimilarQuery {
    k: Option<usize>,
    min_score: Option<f64>,
}

async fn similar(
    State(s): State<Shared>,
    Path(id): Path<String>,
    q: Result<Query<SimilarQuery>, QueryRejection>,
) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(call(&s, move |api| api.similar(&id, q.k, q.min_score)).await?).into_response())
}

async fn advance(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(call(&s, move |api| api.advance(&id)).await?).into_response())
}

async fn gate(State(s): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(call(&s, move |api| api.gate(&id)).await?).into_response())
}

async fn decide(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    Ok(Json(call(&s, move |api| api.decide(&id, req)).await?).into_response())
}

#[derive(Deserialize)]
struct LinkRequest {
    old_id: String,
}

async fn link(
    State(s): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<LinkRequest>, JsonRejection>,
) -> ApiResult<Response> {
    let Json(req) = body?;
    Ok(Json(call(&s, move |api| api.link_older_version(&id, &req.old_id)).await?).into_response())
}

#[derive(Deserialize)]
struct HogQuery {
    pipeline: String,
    stage: String,
}

async fn hog(State(s): State<Shared>, q: Result<Query<HogQuery>, QueryRejection>) -> ApiResult<Response> {
    let Query(q) = q?;
    Ok(Json(call(&s, move |api| api.hog(&q.pipeline, &q.stage)).await?).into_response())
}

async fn stage_table(State(s): State<Shared>) -> ApiResult<Response> {
    Ok(Json(call(&s, |api| Ok(api.stage_table())).await?).into_response())
}

async fn simulate(State(s): State<Shared>, body: Result<Json<SimulateRequest>, JsonRejection>) -> ApiResult<Response> {
    let Json(req) = body?;
    let out = call(&s, move |api| api.simulate(req)).await?;
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

#[derive(Deserialize, Default)]
struct PurgeRequest {
    now: Option<DateTime<Utc>>,
}

async fn purge(State(s): State<Shared>, body: Option<Json<PurgeRequest>>) -> ApiResult<Response> {
    let now = body.map(|Json(b)| b).unwrap_or_default().now;
    let purged = call(&s, move |api| api.purge(now)).await?;
    Ok(Json(purged).into_response())
}

pub async fn serve(api: Api, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(api)).await
}
