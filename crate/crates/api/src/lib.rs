//! Stateless HTTP front end over the design, budget, power, estimation,
//! sensitivity and sweep computations.
//!
//! Every endpoint takes the same JSON request types as the command-line tool
//! and answers with the same [`Envelope`], so both produce identical results.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Request as HttpRequest, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use calidesign::error::Error;
use calidesign::estimation::EstimateOptions;
use calidesign::fixtures;
use calidesign::requests::{
    run, BudgetRequest, DesignRequest, EstimateRequest, PowerRequest, Request, SensitivityRequest,
    SimulateRequest, SweepRequest, SCHEMA_VERSION,
};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use tower_http::cors::{AllowOrigin, CorsLayer};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Computations allowed to run at once; further requests wait.
    pub workers: usize,
    /// Origins allowed cross-origin access; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            workers: std::thread::available_parallelism().map_or(4, |n| n.get()),
            cors_origins: Vec::new(),
        }
    }
}

#[derive(Clone)]
struct AppState {
    workers: Arc<Semaphore>,
}

pub fn router(config: &ServiceConfig) -> Router {
    let state = AppState {
        workers: Arc::new(Semaphore::new(config.workers.max(1))),
    };
    let cors = if config.cors_origins.is_empty() {
        CorsLayer::permissive()
    } else {
        let origins = config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect::<Vec<_>>();
        CorsLayer::new()
            .allow_origin(AllowOrigin::list(origins))
            .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
            .allow_headers([header::CONTENT_TYPE])
    };
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/presets", get(presets))
        .route("/v1/design", post(compute::<DesignRequest>))
        .route("/v1/budget", post(compute::<BudgetRequest>))
        .route("/v1/power", post(compute::<PowerRequest>))
        .route("/v1/estimate", post(estimate))
        .route("/v1/sensitivity", post(compute::<SensitivityRequest>))
        .route("/v1/sweep", post(compute::<SweepRequest>))
        .route("/v1/simulate", post(compute::<SimulateRequest>))
        .layer(cors)
        .with_state(state)
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": VERSION, "schema_version": SCHEMA_VERSION}))
}

async fn presets() -> Json<Value> {
    Json(json!({
        "schema_version": SCHEMA_VERSION,
        "presets": fixtures::all(),
        "note": "group parameters are published pilot estimates; unit costs are reconstructed",
    }))
}

fn problem(status: StatusCode, kind: &str, message: String, extra: Value) -> Response {
    let mut body = json!({"error": kind, "message": message});
    if let (Some(body), Value::Object(extra)) = (body.as_object_mut(), extra) {
        body.extend(extra);
    }
    (status, Json(body)).into_response()
}

/// Maps a core error onto a status code. Validation problems are the
/// client's fault (400); well-formed but unsolvable problems are 422.
fn error_response(e: Error) -> Response {
    let message = e.to_string();
    match e {
        Error::InvalidInput { field, .. } => problem(
            StatusCode::BAD_REQUEST,
            "validation",
            message,
            json!({"field": field}),
        ),
        Error::Pilot { line, .. } => problem(
            StatusCode::BAD_REQUEST,
            "validation",
            message,
            json!({"field": "pilot_csv", "line": line}),
        ),
        Error::GridTooLarge { points, limit } => problem(
            StatusCode::PAYLOAD_TOO_LARGE,
            "grid_too_large",
            message,
            json!({"points": points, "limit": limit}),
        ),
        Error::InfeasibleBudget { minimal, .. } => problem(
            StatusCode::UNPROCESSABLE_ENTITY,
            "infeasible",
            message,
            json!({"minimal_budget": minimal}),
        ),
        Error::NoConvergence { trace } => problem(
            StatusCode::UNPROCESSABLE_ENTITY,
            "no_convergence",
            message,
            json!({"trace": trace}),
        ),
        _ => problem(
            StatusCode::UNPROCESSABLE_ENTITY,
            "unprocessable",
            message,
            json!({}),
        ),
    }
}

// the error is a ready response
#[allow(clippy::result_large_err)]
fn parse<R: DeserializeOwned>(body: &[u8]) -> Result<R, Response> {
    let mut de = serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let field = e.path().to_string();
        let message = e.into_inner().to_string();
        problem(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            message,
            json!({"field": field}),
        )
    })
}

async fn execute<R>(state: &AppState, request: R) -> Response
where
    R: Request + Send + 'static,
{
    let Ok(_permit) = state.workers.clone().acquire_owned().await else {
        return problem(
            StatusCode::SERVICE_UNAVAILABLE,
            "shutting_down",
            "worker pool closed".into(),
            json!({}),
        );
    };
    let outcome =
        tokio::task::spawn_blocking(move || run(&request).map(|env| serde_json::to_vec(&env)))
            .await;
    match outcome {
        Ok(Ok(Ok(body))) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Ok(Ok(Err(e))) => {
            tracing::error!("cannot serialize response: {e}");
            problem(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                e.to_string(),
                json!({}),
            )
        }
        Ok(Err(e)) => {
            tracing::debug!("request rejected: {e}");
            error_response(e)
        }
        Err(e) => {
            tracing::error!("computation panicked: {e}");
            problem(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                "computation failed".into(),
                json!({}),
            )
        }
    }
}

async fn compute<R>(State(state): State<AppState>, body: Bytes) -> Response
where
    R: Request + DeserializeOwned + Send + 'static,
{
    match parse::<R>(&body) {
        Ok(request) => execute(&state, request).await,
        Err(response) => response,
    }
}

/// Accepts the JSON request, or multipart form data with the pilot CSV in a
/// `pilot_csv` or `file` part and an optional `r_delta` part.
async fn estimate(State(state): State<AppState>, request: HttpRequest) -> Response {
    let is_multipart = request
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if !is_multipart {
        return match Bytes::from_request(request, &state).await {
            Ok(body) => compute::<EstimateRequest>(State(state), body).await,
            Err(rejection) => rejection.into_response(),
        };
    }
    let bad = |field: &str, message: String| {
        problem(
            StatusCode::BAD_REQUEST,
            "invalid_request",
            message,
            json!({"field": field}),
        )
    };
    let mut multipart = match Multipart::from_request(request, &state).await {
        Ok(m) => m,
        Err(rejection) => return bad("", rejection.body_text()),
    };
    let mut pilot_csv = None;
    let mut options = EstimateOptions::default();
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(field)) => field,
            Ok(None) => break,
            Err(e) => return bad("", e.body_text()),
        };
        let name = field.name().unwrap_or_default().to_string();
        let text = match field.text().await {
            Ok(text) => text,
            Err(e) => return bad(&name, e.body_text()),
        };
        match name.as_str() {
            "pilot_csv" | "file" => pilot_csv = Some(text),
            "r_delta" => match text.trim().parse::<f64>() {
                Ok(r) => options.r_delta = Some(r),
                Err(e) => return bad("options.r_delta", format!("not a number: {e}")),
            },
            other => return bad(other, format!("unknown form field `{other}`")),
        }
    }
    let Some(pilot_csv) = pilot_csv else {
        return bad("pilot_csv", "missing form field `pilot_csv`".into());
    };
    execute(&state, EstimateRequest { pilot_csv, options }).await
}
