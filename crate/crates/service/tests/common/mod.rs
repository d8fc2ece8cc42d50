#![allow(dead_code)]

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use gsp_core::{ExperimentConfig, Timestamp};
use gsp_render::{BuiltinRenderer, MemoryStore, StimulusCache};
use gsp_service::Clock;
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const T0: i64 = 1_700_000_000_000;

/// Nine single-response chains of two iterations.
pub fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        n_chains: 9,
        n_iterations: 2,
        participants_per_iteration: 1,
        n_random: 3,
        novel_sentences: vec!["Rice is often served in round bowls.".into()],
        rating_target: 2,
        ..ExperimentConfig::default()
    }
}

pub fn cache() -> Arc<StimulusCache> {
    Arc::new(StimulusCache::new(Arc::new(BuiltinRenderer::default()), Arc::new(MemoryStore::new())))
}

/// A clock the test moves by hand.
pub fn manual_clock() -> (Clock, Arc<AtomicI64>) {
    let t = Arc::new(AtomicI64::new(T0));
    let c = t.clone();
    (Arc::new(move || Timestamp(c.load(Ordering::SeqCst))), t)
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(serde_json::to_vec(&v).unwrap())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::GET, uri, None).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

pub async fn post_json(app: &Router, uri: &str, body: Value) -> (StatusCode, Value) {
    let (s, b) = call(app, Method::POST, uri, Some(body)).await;
    (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
}

pub async fn session(app: &Router) -> String {
    let (s, v) = get_json(app, "/api/session").await;
    assert_eq!(s, StatusCode::OK);
    v["participant_token"].as_str().unwrap().to_string()
}
