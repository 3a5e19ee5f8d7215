//! HTTP virtual sensor: inlet velocity in, centre-plane fields out.
//!
//! `GET /health` answers 503 until the checkpoint has loaded. `POST /predict`
//! runs the same code path as `hotleg infer`. `GET /metadata` serves the node
//! coordinates once so prediction bodies need not repeat them.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hotleg_core::deeponet::{read_header, InferenceModel};
use hotleg_core::{Error, Result, Space, PARAM_NAMES};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::{json, Value};
use tokio::sync::Semaphore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    pub checkpoint: PathBuf,
    pub max_concurrent: usize,
    /// Space used when a request does not name one.
    pub default_space: Space,
}

/// Fields for one inlet velocity. Shared by the server and `hotleg infer`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub v_in: f64,
    pub n_points: usize,
    pub parameter_order: Vec<String>,
    #[serde(rename = "P")]
    pub p: Vec<f64>,
    #[serde(rename = "V_o")]
    pub v_o: Vec<f64>,
    pub k: Vec<f64>,
    pub space: Space,
    pub model_checksum: String,
    /// Wall time of scaling, the forward pass and unscaling.
    pub inference_time_s: f64,
}

pub fn predict(model: &InferenceModel, v_in: f64, space: Space) -> Result<Prediction> {
    let t = Instant::now();
    let fields = model.predict_one(v_in, space)?;
    let inference_time_s = t.elapsed().as_secs_f64();
    Ok(Prediction {
        v_in,
        n_points: model.n_points(),
        parameter_order: PARAM_NAMES.iter().map(|s| s.to_string()).collect(),
        p: fields.row(0).to_vec(),
        v_o: fields.row(1).to_vec(),
        k: fields.row(2).to_vec(),
        space,
        model_checksum: model.checksum().to_string(),
        inference_time_s,
    })
}

pub struct AppState {
    model: OnceLock<std::result::Result<Arc<InferenceModel>, String>>,
    permits: Semaphore,
    started: Instant,
    default_space: Space,
}

pub type SharedState = Arc<AppState>;

impl AppState {
    pub fn new(max_concurrent: usize, default_space: Space) -> SharedState {
        Arc::new(Self {
            model: OnceLock::new(),
            permits: Semaphore::new(max_concurrent.max(1)),
            started: Instant::now(),
            default_space,
        })
    }

    /// Install the loaded model, or the reason loading failed. Later calls are
    /// ignored: the model is immutable once set.
    pub fn install(&self, model: std::result::Result<InferenceModel, String>) {
        let _ = self.model.set(model.map(Arc::new));
    }

    fn ready(&self) -> Option<&Arc<InferenceModel>> {
        self.model.get().and_then(|m| m.as_ref().ok())
    }
}

fn reject(status: StatusCode, reason: &str, detail: impl Into<String>) -> Response {
    (status, Json(json!({"error": {"reason": reason, "detail": detail.into()}}))).into_response()
}

async fn health(State(st): State<SharedState>) -> Response {
    let uptime_s = st.started.elapsed().as_secs_f64();
    match st.model.get() {
        None => (StatusCode::SERVICE_UNAVAILABLE, Json(json!({"status": "loading", "uptime_s": uptime_s}))).into_response(),
        Some(Err(e)) => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({"status": "failed", "error": e, "uptime_s": uptime_s})),
        )
            .into_response(),
        Some(Ok(m)) => Json(json!({
            "status": "ok",
            "model_checksum": m.checksum(),
            "n_points": m.n_points(),
            "uptime_s": uptime_s,
        }))
        .into_response(),
    }
}

async fn metadata(State(st): State<SharedState>) -> Response {
    let Some(m) = st.ready() else {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "loading", "model is not loaded yet");
    };
    let coords: Vec<[f64; 3]> = m.coords().rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect();
    Json(json!({
        "config": m.config(),
        "param_count": m.param_count(),
        "parameter_order": PARAM_NAMES,
        "n_points": m.n_points(),
        "grid": m.grid(),
        "coords": coords,
        "model_checksum": m.checksum(),
        "default_space": st.default_space,
        "provenance": m.binding().provenance,
    }))
    .into_response()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictBody<'a> {
    #[serde(borrow)]
    v_in: &'a RawValue,
    #[serde(default)]
    space: Option<Space>,
}

/// 400 for bodies that are not `{"v_in": <number>, "space"?: ...}`, 422 for
/// numbers that are not a usable velocity.
fn parse_request(body: &[u8]) -> std::result::Result<(f64, Option<Space>), Response> {
    let req: PredictBody = serde_json::from_slice(body)
        .map_err(|e| reject(StatusCode::BAD_REQUEST, "malformed_body", e.to_string()))?;
    let raw = req.v_in.get().trim();
    let numeric = raw.starts_with(|c: char| c == '-' || c.is_ascii_digit());
    if !numeric {
        return Err(reject(StatusCode::BAD_REQUEST, "v_in_not_a_number", format!("v_in must be a JSON number, got {raw}")));
    }
    let v: f64 = raw
        .parse()
        .map_err(|_| reject(StatusCode::BAD_REQUEST, "v_in_not_a_number", format!("cannot read {raw} as a number")))?;
    if !v.is_finite() {
        return Err(reject(StatusCode::UNPROCESSABLE_ENTITY, "v_in_not_finite", format!("v_in {raw} is not finite")));
    }
    if v <= 0.0 {
        return Err(reject(StatusCode::UNPROCESSABLE_ENTITY, "v_in_not_positive", format!("v_in must be > 0, got {v}")));
    }
    Ok((v, req.space))
}

async fn predict_handler(State(st): State<SharedState>, body: Bytes) -> Response {
    let (v_in, space) = match parse_request(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let Some(model) = st.ready().cloned() else {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "loading", "model is not loaded yet");
    };
    let Ok(_permit) = st.permits.try_acquire() else {
        return reject(StatusCode::SERVICE_UNAVAILABLE, "overloaded", "too many concurrent requests");
    };
    let space = space.unwrap_or(st.default_space);
    match tokio::task::spawn_blocking(move || predict(&model, v_in, space)).await {
        Ok(Ok(p)) => Json(p).into_response(),
        Ok(Err(e)) => reject(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), e.to_string()),
        Err(e) => reject(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

pub fn router(state: SharedState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/metadata", get(metadata))
        .route("/predict", post(predict_handler))
        .with_state(state)
}

/// Check the checkpoint header, bind, then load the weights in the
/// background while `/health` reports 503. Runs until ctrl-c.
pub async fn serve(cfg: ServeConfig) -> Result<()> {
    read_header(&cfg.checkpoint)?;
    let listener = tokio::net::TcpListener::bind(cfg.bind)
        .await
        .map_err(|e| Error::InvalidArgument(format!("cannot bind {}: {e}", cfg.bind)))?;
    let state = AppState::new(cfg.max_concurrent, cfg.default_space);
    let loader = state.clone();
    let path = cfg.checkpoint.clone();
    tokio::task::spawn_blocking(move || {
        let t = Instant::now();
        let loaded = InferenceModel::from_checkpoint(&path).map_err(|e| e.to_string());
        match &loaded {
            Ok(m) => log::info!("model {} loaded in {:.2}s", m.checksum(), t.elapsed().as_secs_f64()),
            Err(e) => log::error!("model failed to load: {e}"),
        }
        loader.install(loaded);
    });
    log::info!("listening on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or_default());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::InvalidState(format!("server error: {e}")))
}

/// Parse a prediction body the way a client would see it; used by tests.
pub fn prediction_from_json(v: &Value) -> Result<Prediction> {
    Ok(serde_json::from_value(v.clone())?)
}
