//! The clue finder as a standalone HTTP service.

use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use storybot_core::clue::{ClueEntry, ClueFinder};

use crate::error::{ApiError, ApiJson};

#[derive(Deserialize)]
struct MatchRequest {
    sentence: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResponse {
    pub id: String,
    pub score: f64,
    pub reply_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_url: Option<String>,
}

/// `POST /match` answers 200 with the best entry or 204 when nothing clears
/// the threshold. `PUT /corpus` swaps in a new list of entries.
pub fn clue_router(finder: Arc<ClueFinder>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/match", post(find))
        .route("/corpus", put(reload))
        .with_state(finder)
}

async fn healthz(State(finder): State<Arc<ClueFinder>>) -> Json<serde_json::Value> {
    Json(json!({"status": "ok", "entries": finder.corpus().len()}))
}

async fn find(
    State(finder): State<Arc<ClueFinder>>,
    ApiJson(req): ApiJson<MatchRequest>,
) -> Result<Response, ApiError> {
    let found = tokio::task::spawn_blocking(move || finder.find(&req.sentence))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(match found {
        Some(m) => Json(MatchResponse {
            id: m.entry.id,
            score: m.score,
            reply_text: m.entry.reply_text,
            image_url: m.entry.image_url,
        })
        .into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    })
}

async fn reload(
    State(finder): State<Arc<ClueFinder>>,
    ApiJson(entries): ApiJson<Vec<ClueEntry>>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let count = entries.len();
    tokio::task::spawn_blocking(move || finder.reload(entries))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(json!({"entries": count})))
}
