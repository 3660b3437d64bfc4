//! JSON API over a fitted model. The model is loaded once and shared
//! read-only; every request computes its projection independently.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cohortflow_core::forecast::{run_projection, ScenarioRun};
use cohortflow_core::ingestion::write_model;
use cohortflow_core::{Error, ScenarioSpec, StateVector, TransitionModel};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

pub const FROM_MODEL_DATA: &str = "from_model_data";

pub struct AppState {
    model: TransitionModel,
    model_json: Vec<u8>,
}

impl AppState {
    pub fn new(model: TransitionModel) -> cohortflow_core::Result<Self> {
        let model_json = write_model(&model)?;
        Ok(Self { model, model_json })
    }

    pub fn model(&self) -> &TransitionModel {
        &self.model
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
pub enum InitialSpec {
    Counts(BTreeMap<String, f64>),
    Named(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectRequest {
    pub initial: InitialSpec,
    pub horizon: usize,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
}

#[derive(Debug, Serialize)]
struct StatesResponse<'a> {
    states: &'a [String],
    enrolled: &'a [String],
    absorbing: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    stop_out: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    departed: Option<&'a str>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, code: "bad_request", message: message.into() }
    }

    fn unprocessable(code: &'static str, message: impl Into<String>) -> Self {
        Self { status: StatusCode::UNPROCESSABLE_ENTITY, code, message: message.into() }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownState(_) => "unknown_state",
            Error::OverrideSum { .. } | Error::Scenario(_) => "invalid_scenario",
            _ if e.is_semantic() => "invalid_request",
            _ => {
                return Self { status: StatusCode::INTERNAL_SERVER_ERROR, code: "internal", message: e.to_string() }
            }
        };
        Self::unprocessable(code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "code": self.code, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/model", get(get_model))
        .route("/api/states", get(get_states))
        .route("/api/project", post(post_project))
        .route("/healthz", get(healthz))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    }
}

async fn healthz() -> Json<&'static str> {
    Json("ok")
}

async fn not_found() -> ApiError {
    ApiError { status: StatusCode::NOT_FOUND, code: "not_found", message: "no such route".into() }
}

async fn get_model(State(state): State<Arc<AppState>>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], state.model_json.clone()).into_response()
}

async fn get_states(State(state): State<Arc<AppState>>) -> Response {
    let space = &state.model.space;
    Json(StatesResponse {
        states: space.states(),
        enrolled: space.enrolled(),
        absorbing: space.absorbing(),
        stop_out: space.stop_out(),
        departed: space.departed(),
    })
    .into_response()
}

async fn post_project(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ScenarioRun>, ApiError> {
    // Parsed by hand so malformed bodies get the JSON error envelope.
    let req: ProjectRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))?;
    let run = project(&state.model, &req)?;
    Ok(Json(run))
}

/// Resolves the request's starting vector and runs the projection.
pub fn project(model: &TransitionModel, req: &ProjectRequest) -> Result<ScenarioRun, ApiError> {
    let initial = match &req.initial {
        InitialSpec::Counts(map) => StateVector::from_labels(&model.space, map)?,
        InitialSpec::Named(name) if name == FROM_MODEL_DATA => match &model.meta.latest_counts {
            Some(counts) => StateVector::from_labels(&model.space, counts)?,
            None => return Err(ApiError::unprocessable("no_model_data", "model carries no data counts")),
        },
        InitialSpec::Named(other) => {
            return Err(ApiError::bad_request(format!(
                "initial must be a map of headcounts or \"{FROM_MODEL_DATA}\", got \"{other}\""
            )))
        }
    };
    Ok(run_projection(model, &initial, req.horizon, req.scenario.as_ref())?)
}
