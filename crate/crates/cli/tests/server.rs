use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde_json::{json, Value};
use slotaug::image::Image;
use slotaug::inference::{InferenceConfig, SessionManager};
use slotaug::model::{Model, ModelConfig};
use slotaug_cli::png::{decode_png, encode_png};
use slotaug_cli::server::router;
use tower::ServiceExt;

fn app() -> (Router, Arc<SessionManager>) {
    let model = Model::new(ModelConfig::micro(), 7).unwrap();
    let m = Arc::new(SessionManager::new(Arc::new(model), InferenceConfig::default()));
    (router(m.clone()), m)
}

fn test_image() -> Image {
    let mut img = Image::filled(16, 16, [0.1, 0.1, 0.1]);
    for y in 3..8 {
        for x in 4..9 {
            img.set_pixel(x, y, [0.9, 0.2, 0.2]);
        }
    }
    img
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req.header("content-type", "application/json").body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

fn as_json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

async fn open(app: &Router) -> String {
    let b64 = STANDARD.encode(encode_png(&test_image()).unwrap());
    let (st, body) = call(app, Method::POST, "/session", Some(json!({ "image": b64 }))).await;
    assert_eq!(st, StatusCode::CREATED);
    let v = as_json(&body);
    assert_eq!(v["slot_positions"].as_array().unwrap().len(), 3);
    v["id"].as_str().unwrap().to_string()
}

fn move_right() -> Value {
    json!({ "target": { "x": 0.4, "y": 0.3 }, "instruction": { "scale": 1.0, "dx": 0.2, "dy": 0.0, "dhue": 0.0, "sat": 1.0, "light": 1.0 } })
}

#[tokio::test]
async fn session_lifecycle() {
    let (app, m) = app();
    let id = open(&app).await;

    let (st, png) = call(&app, Method::GET, &format!("/session/{id}/render"), None).await;
    assert_eq!(st, StatusCode::OK);
    let before = decode_png(&png).unwrap();
    assert_eq!((before.width(), before.height()), (16, 16));

    let (st, png) = call(&app, Method::GET, &format!("/session/{id}/attention/2"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(decode_png(&png).is_ok());

    let (st, body) = call(&app, Method::POST, &format!("/session/{id}/manipulate"), Some(move_right())).await;
    assert_eq!(st, StatusCode::OK, "{}", String::from_utf8_lossy(&body));
    let v = as_json(&body);
    assert!(v["slot_index"].as_u64().unwrap() < 3);
    assert_eq!(v["positions"].as_array().unwrap().len(), 3);
    assert!(decode_png(&STANDARD.decode(v["render"].as_str().unwrap()).unwrap()).is_ok());

    let (st, body) = call(&app, Method::POST, &format!("/session/{id}/undo"), None).await;
    assert_eq!(st, StatusCode::OK);
    let undone = decode_png(&STANDARD.decode(as_json(&body)["render"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(undone, before);

    call(&app, Method::POST, &format!("/session/{id}/manipulate"), Some(move_right())).await;
    let (st, body) = call(&app, Method::POST, &format!("/session/{id}/revert"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(as_json(&body)["slot_index"].is_u64());

    let (st, _) = call(&app, Method::DELETE, &format!("/session/{id}"), None).await;
    assert_eq!(st, StatusCode::NO_CONTENT);
    assert!(m.is_empty());
    let (st, body) = call(&app, Method::GET, &format!("/session/{id}/render"), None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(as_json(&body)["reason"], "unknown_session");
}

#[tokio::test]
async fn errors_carry_a_reason() {
    let (app, _) = app();
    let id = open(&app).await;
    let url = format!("/session/{id}/manipulate");

    let mut bad = move_right();
    bad["target"] = json!({ "x": 1.5, "y": 0.3 });
    let (st, body) = call(&app, Method::POST, &url, Some(bad)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&body)["reason"], "invalid_target");

    let mut bad = move_right();
    bad["instruction"]["scale"] = json!(-1.0);
    let (st, body) = call(&app, Method::POST, &url, Some(bad)).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&body)["reason"], "invalid_instruction");

    let mut bad = move_right();
    bad["instruction"] = json!({ "scale": 1.0 });
    let (_, body) = call(&app, Method::POST, &url, Some(bad)).await;
    assert_eq!(as_json(&body)["reason"], "invalid_instruction");

    let (st, body) = call(&app, Method::POST, &format!("/session/{id}/undo"), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&body)["reason"], "empty_history");
    let (_, body) = call(&app, Method::POST, &format!("/session/{id}/revert"), None).await;
    assert_eq!(as_json(&body)["reason"], "empty_history");

    let (st, body) = call(&app, Method::GET, &format!("/session/{id}/attention/9"), None).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&body)["reason"], "invalid_target");

    let (st, body) = call(&app, Method::POST, "/session", Some(json!({ "image": "!!" }))).await;
    assert_eq!(st, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(as_json(&body)["reason"], "invalid_request");

    let (st, _) = call(&app, Method::POST, "/session/nope/manipulate", Some(move_right())).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
