//! HTTP session API. Bodies are JSON, images travel as base64 PNG.
//!
//! Model work runs on the blocking pool so the async workers stay free.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::Deserialize;
use serde_json::{json, Value};
use slotaug::augment::Instruction;
use slotaug::image::Image;
use slotaug::inference::{ManipulationRequest, SessionManager, SessionView};

use crate::png::{decode_png, encode_png};

type Shared = Arc<SessionManager>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    reason: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, reason: &'static str, message: impl Into<String>) -> Self {
        Self { status, reason, message: message.into() }
    }

    fn unprocessable(reason: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, reason, message)
    }
}

impl From<slotaug::Error> for ApiError {
    fn from(e: slotaug::Error) -> Self {
        use slotaug::Error as E;
        let msg = e.to_string();
        match e {
            E::UnknownSession(_) => Self::new(StatusCode::NOT_FOUND, "unknown_session", msg),
            E::InvalidTarget(_) => Self::unprocessable("invalid_target", msg),
            E::InvalidInstruction(_) => Self::unprocessable("invalid_instruction", msg),
            E::Empty(_) => Self::unprocessable("empty_history", msg),
            E::Shape(_) | E::DegenerateSlot(_) => Self::unprocessable("invalid_request", msg),
            _ => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", msg),
        }
    }
}

impl From<crate::error::CliError> for ApiError {
    fn from(e: crate::error::CliError) -> Self {
        Self::unprocessable("invalid_request", e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "reason": self.reason, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .unwrap_or_else(|e| Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())))
}

fn parse_body(body: &[u8]) -> ApiResult<Value> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::unprocessable("invalid_request", format!("body is not JSON: {e}")))
}

fn png_response(img: &Image) -> ApiResult<Response> {
    let bytes = encode_png(img)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

fn view_json(v: &SessionView) -> ApiResult<Json<Value>> {
    let png = encode_png(&v.render)?;
    Ok(Json(json!({
        "slot_index": v.slot_index,
        "render": STANDARD.encode(png),
        "positions": v.positions,
    })))
}

/// Decode a base64 PNG and fit it to the model's input side.
fn decode_image(b64: &str, size: usize) -> ApiResult<Image> {
    let bytes = STANDARD
        .decode(b64.trim())
        .map_err(|e| ApiError::unprocessable("invalid_request", format!("image is not base64: {e}")))?;
    let img = decode_png(&bytes)?;
    Ok(if img.width() == size && img.height() == size { img } else { img.resize(size, size) })
}

async fn open(State(m): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let v = parse_body(&body)?;
    let b64 = v
        .get("image")
        .and_then(Value::as_str)
        .ok_or_else(|| ApiError::unprocessable("invalid_request", "missing string field \"image\""))?
        .to_string();
    blocking(move || {
        let img = decode_image(&b64, m.model().config().image_size)?;
        let id = m.open(&img)?;
        let positions = m.with(&id, |s| s.positions())?;
        Ok((StatusCode::CREATED, Json(json!({ "id": id, "slot_positions": positions }))).into_response())
    })
    .await
}

async fn render(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Response> {
    blocking(move || png_response(&m.with(&id, |s| Ok(s.render()))?)).await
}

async fn attention(State(m): State<Shared>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Response> {
    blocking(move || png_response(&m.with(&id, |s| s.alpha_image(k))?)).await
}

#[derive(Deserialize)]
struct Point {
    x: f64,
    y: f64,
}

/// Split the body so a bad target and a bad instruction get distinct reasons.
fn parse_manipulation(v: &Value) -> ApiResult<ManipulationRequest> {
    let target =
        v.get("target").ok_or_else(|| ApiError::unprocessable("invalid_target", "missing field \"target\""))?;
    let p: Point = serde_json::from_value(target.clone())
        .map_err(|e| ApiError::unprocessable("invalid_target", format!("target must be {{x, y}}: {e}")))?;
    let inst = v
        .get("instruction")
        .ok_or_else(|| ApiError::unprocessable("invalid_instruction", "missing field \"instruction\""))?;
    let instruction: Instruction = serde_json::from_value(inst.clone())
        .map_err(|e| ApiError::unprocessable("invalid_instruction", e.to_string()))?;
    Ok(ManipulationRequest { target: [p.x, p.y], instruction })
}

async fn manipulate(State(m): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    // Unknown sessions are reported before body problems.
    m.get(&id)?;
    let req = parse_manipulation(&parse_body(&body)?)?;
    blocking(move || view_json(&m.with(&id, |s| s.apply(&req))?)).await
}

async fn undo(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || view_json(&m.with(&id, |s| s.undo())?)).await
}

async fn revert(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    blocking(move || view_json(&m.with(&id, |s| s.revert())?)).await
}

async fn close(State(m): State<Shared>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    m.close(&id)?;
    Ok(StatusCode::NO_CONTENT)
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/session", post(open))
        .route("/session/{id}", axum::routing::delete(close))
        .route("/session/{id}/render", get(render))
        .route("/session/{id}/attention/{k}", get(attention))
        .route("/session/{id}/manipulate", post(manipulate))
        .route("/session/{id}/undo", post(undo))
        .route("/session/{id}/revert", post(revert))
        .with_state(manager)
}
