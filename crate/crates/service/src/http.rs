//! Routes for the browser console and the admin dashboard.
//!
//! | method | path | body / query | reply |
//! |---|---|---|---|
//! | GET | `/api/session` | `?prescreened=true` | `{participant_token}` |
//! | GET | `/api/trial` | `?participant=` | trial with 32 stimulus URLs, or 204 |
//! | POST | `/api/response` | `{trial_id, slider_index}` | `{status}` |
//! | GET | `/api/stimulus/{id}.wav` | | `audio/wav` |
//! | GET | `/api/rating-trial` | `?participant=` | `{rating_id, stimulus_url, probed_emotion, scale}`, or 204 |
//! | POST | `/api/rating` | `{rating_id, rating}` | the stored record |
//! | GET | `/api/admin/chains` | | per-chain progress |
//! | GET | `/api/admin/status` | | phase and counters |
//! | POST | `/api/admin/terminate` | | status after terminating |
//! | GET | `/api/admin/export` | | the event log, one JSON record per line |
//!
//! Errors come back as `{"error": kind, "message": text}` with a matching
//! status code.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gsp_core::{ParticipantId, RatingId, TrialId};
use serde::Deserialize;
use serde_json::json;

use crate::error::{Result, ServiceError};
use crate::service::Service;

type Shared = State<Arc<Service>>;

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/api/session", get(session))
        .route("/api/trial", get(trial))
        .route("/api/response", post(response))
        .route("/api/stimulus/{file}", get(stimulus))
        .route("/api/rating-trial", get(rating_trial))
        .route("/api/rating", post(rating))
        .route("/api/admin/chains", get(chains))
        .route("/api/admin/status", get(status))
        .route("/api/admin/terminate", post(terminate))
        .route("/api/admin/export", get(export))
        .with_state(service)
}

/// Commands take a blocking lock and may render or fsync, so they run on
/// the blocking pool.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> Result<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Halted(format!("worker failed: {e}")))?
}

#[derive(Deserialize)]
struct SessionQuery {
    #[serde(default)]
    prescreened: bool,
}

async fn session(State(svc): Shared, Query(q): Query<SessionQuery>) -> Result<Json<serde_json::Value>> {
    let token = blocking(move || svc.new_session(q.prescreened)).await?;
    Ok(Json(json!({ "participant_token": token })))
}

#[derive(Deserialize)]
struct ParticipantQuery {
    participant: String,
}

fn or_no_content<T: serde::Serialize>(v: Option<T>) -> Response {
    match v {
        Some(v) => Json(v).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn trial(State(svc): Shared, Query(q): Query<ParticipantQuery>) -> Result<Response> {
    let who = ParticipantId::new(q.participant);
    Ok(or_no_content(blocking(move || svc.next_trial(&who)).await?))
}

#[derive(Deserialize)]
struct ResponseBody {
    trial_id: TrialId,
    slider_index: usize,
}

async fn response(State(svc): Shared, Json(body): Json<ResponseBody>) -> Result<Json<serde_json::Value>> {
    blocking(move || svc.submit_response(body.trial_id, body.slider_index)).await?;
    Ok(Json(json!({ "status": "recorded" })))
}

async fn stimulus(State(svc): Shared, Path(file): Path<String>) -> Response {
    let wav = file.strip_suffix(".wav").and_then(|id| svc.stimulus(id));
    match wav {
        Some(bytes) => (
            [
                (header::CONTENT_TYPE, "audio/wav"),
                // content-addressed, so the bytes behind a URL never change
                (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
            ],
            bytes.to_vec(),
        )
            .into_response(),
        None => (StatusCode::NOT_FOUND, Json(json!({ "error": "unknown-stimulus", "message": file }))).into_response(),
    }
}

async fn rating_trial(State(svc): Shared, Query(q): Query<ParticipantQuery>) -> Result<Response> {
    let who = ParticipantId::new(q.participant);
    Ok(or_no_content(blocking(move || svc.next_rating(&who)).await?))
}

#[derive(Deserialize)]
struct RatingBody {
    rating_id: RatingId,
    rating: i64,
}

async fn rating(State(svc): Shared, Json(body): Json<RatingBody>) -> Result<Response> {
    let record = blocking(move || svc.submit_rating(body.rating_id, body.rating)).await?;
    Ok(Json(record).into_response())
}

async fn chains(State(svc): Shared) -> Response {
    Json(svc.chains().as_slice()).into_response()
}

async fn status(State(svc): Shared) -> Result<Response> {
    Ok(Json(blocking(move || svc.status()).await?).into_response())
}

async fn terminate(State(svc): Shared) -> Result<Response> {
    Ok(Json(blocking(move || svc.terminate()).await?).into_response())
}

async fn export(State(svc): Shared) -> Result<Response> {
    let text = blocking(move || svc.export()).await?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text).into_response())
}

/// Serve until `shutdown` resolves or every validation rating is in,
/// checking the deadline every `tick`.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    tick: Duration,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let done = Arc::new(tokio::sync::Notify::new());
    let ticker = {
        let (svc, done) = (service.clone(), done.clone());
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(tick);
            loop {
                interval.tick().await;
                let svc = svc.clone();
                match blocking(move || svc.tick()).await {
                    Ok(s) if s.validation_complete => {
                        tracing::info!(ratings = s.ratings, "validation complete, shutting down");
                        done.notify_one();
                        return;
                    }
                    Ok(_) => {}
                    Err(e) => tracing::error!(error = %e, "deadline check failed"),
                }
            }
        })
    };
    let stop = async move {
        tokio::select! {
            _ = shutdown => {}
            _ = done.notified() => {}
        }
    };
    let out = axum::serve(listener, router(service)).with_graceful_shutdown(stop).await;
    ticker.abort();
    out
}
