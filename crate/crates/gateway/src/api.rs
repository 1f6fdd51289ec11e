//! The JSON HTTP API and the NDJSON event stream.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::extract::{Path, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures_util::stream;
use serde::{Deserialize, Serialize};
use serde_json::json;
use storybot_core::dialogue::PipelineTrace;
use storybot_core::events::{AdminCommand, InboundPayload, OutboundPost};
use storybot_core::scheduler::{CurrentView, ReleaseEvent};
use storybot_core::time::Timestamp;
use storybot_core::voting::Tally;
use storybot_core::{ChannelId, UserId};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::watch;

use crate::engine::{ClockError, EngineHandle};
use crate::error::{ApiError, ApiJson};

#[derive(Clone)]
pub struct AppState {
    engine: EngineHandle,
    moderator_key: Option<Arc<str>>,
    chat_channel: ChannelId,
    users: Arc<Mutex<HashMap<String, UserId>>>,
    joined: Arc<AtomicU64>,
    closing: Arc<watch::Sender<bool>>,
}

impl AppState {
    pub fn new(engine: EngineHandle, moderator_key: Option<String>) -> Self {
        AppState {
            engine,
            moderator_key: moderator_key.map(Into::into),
            chat_channel: ChannelId::from("chat"),
            users: Arc::default(),
            joined: Arc::default(),
            closing: Arc::new(watch::channel(false).0),
        }
    }

    /// Ends every open `/events` stream. Graceful shutdown waits for open
    /// responses, so call this once shutdown has been requested.
    pub fn close_streams(&self) {
        self.closing.send_replace(true);
    }

    pub fn engine(&self) -> &EngineHandle {
        &self.engine
    }

    fn bearer(headers: &HeaderMap) -> Option<&str> {
        headers
            .get(header::AUTHORIZATION)?
            .to_str()
            .ok()?
            .strip_prefix("Bearer ")
            .map(str::trim)
    }

    fn user(&self, headers: &HeaderMap) -> Result<UserId, ApiError> {
        let token = Self::bearer(headers).ok_or_else(ApiError::unauthorized)?;
        self.users
            .lock()
            .expect("user table lock poisoned")
            .get(token)
            .cloned()
            .ok_or_else(ApiError::unauthorized)
    }

    fn moderator(&self, headers: &HeaderMap) -> Result<UserId, ApiError> {
        match (&self.moderator_key, Self::bearer(headers)) {
            (Some(key), Some(given)) if **key == *given => Ok(UserId::from("moderator")),
            (None, _) => Err(ApiError::new(
                StatusCode::FORBIDDEN,
                "moderation-disabled",
                "no moderator key is configured",
            )),
            _ => Err(ApiError::unauthorized()),
        }
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/join", post(join))
        .route("/story/feed", get(feed))
        .route("/story/current", get(current))
        .route("/story/vote", post(vote))
        .route("/chat", post(chat))
        .route("/trace/{id}", get(trace))
        .route("/events", get(events))
        .route("/admin/close-day", post(close_day))
        .route("/admin/reopen", post(reopen))
        .route("/admin/clock", post(set_clock))
        .route("/admin/canonize", post(canonize))
        .with_state(state)
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({"status": "ok"}))
}

#[derive(Deserialize)]
struct JoinRequest {
    display_name: String,
}

#[derive(Serialize, Deserialize)]
pub struct JoinResponse {
    pub token: String,
    pub user_id: UserId,
}

async fn join(
    State(state): State<AppState>,
    ApiJson(req): ApiJson<JoinRequest>,
) -> Result<Json<JoinResponse>, ApiError> {
    let name: String = req
        .display_name
        .trim()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '-'
            }
        })
        .collect();
    if name.trim_matches('-').is_empty() {
        return Err(ApiError::bad_request(
            "empty-name",
            "display_name must contain a letter or digit",
        ));
    }
    let n = state.joined.fetch_add(1, Ordering::SeqCst) + 1;
    let user_id = UserId::new(format!("{}-{n}", name.trim_matches('-')));
    let token = uuid::Uuid::new_v4().simple().to_string();
    state
        .users
        .lock()
        .expect("user table lock poisoned")
        .insert(token.clone(), user_id.clone());
    Ok(Json(JoinResponse { token, user_id }))
}

async fn feed(State(state): State<AppState>) -> Result<Json<Vec<OutboundPost>>, ApiError> {
    Ok(Json(state.engine.call(|ctx| ctx.engine().feed()).await?))
}

async fn current(State(state): State<AppState>) -> Result<Json<CurrentView>, ApiError> {
    state.engine.tick().await??;
    Ok(Json(state.engine.call(|ctx| ctx.engine().current()).await?))
}

#[derive(Deserialize)]
struct VoteRequest {
    choice_index: u32,
    #[serde(default)]
    day_index: Option<u32>,
}

#[derive(Serialize, Deserialize)]
pub struct VoteResponse {
    pub day_index: u32,
    pub tally: Tally,
}

async fn vote(
    State(state): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<VoteRequest>,
) -> Result<Json<VoteResponse>, ApiError> {
    let user = state.user(&headers)?;
    let payload = InboundPayload::Vote {
        choice_index: req.choice_index,
        day_index: req.day_index,
    };
    let channel = state
        .engine
        .call(|ctx| ctx.engine().settings().story_channel.clone())
        .await?;
    let applied = state.engine.apply(channel, user, payload).await??;
    let post = applied
        .posts
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::internal("vote produced no tally"))?;
    Ok(Json(VoteResponse {
        day_index: post.day_index.unwrap_or_default(),
        tally: post.tally.unwrap_or_default(),
    }))
}

#[derive(Deserialize)]
struct ChatRequest {
    text: String,
    #[serde(default)]
    channel: Option<ChannelId>,
}

#[derive(Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: OutboundPost,
    pub trace_id: u64,
}

async fn chat(
    State(state): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<ChatRequest>,
) -> Result<Json<ChatResponse>, ApiError> {
    let user = state.user(&headers)?;
    let channel = req.channel.unwrap_or_else(|| state.chat_channel.clone());
    let applied = state
        .engine
        .apply(channel, user, InboundPayload::Chat(req.text))
        .await??;
    let reply = applied
        .posts
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::internal("chat produced no reply"))?;
    let trace_id = applied
        .trace_id
        .ok_or_else(|| ApiError::internal("chat produced no trace"))?;
    Ok(Json(ChatResponse { reply, trace_id }))
}

async fn trace(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<u64>,
) -> Result<Json<PipelineTrace>, ApiError> {
    state.moderator(&headers)?;
    state
        .engine
        .call(move |ctx| ctx.engine().trace(id).cloned())
        .await?
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown-trace", format!("no trace {id}")))
}

/// Newline-delimited JSON, one [`crate::StreamEvent`] per line. A client
/// that falls behind the buffer is disconnected.
async fn events(State(state): State<AppState>) -> Response {
    let rx = state.engine.subscribe();
    let closing = state.closing.subscribe();
    let body = stream::unfold((rx, closing), |(mut rx, mut closing)| async move {
        if *closing.borrow_and_update() {
            return None;
        }
        let received = tokio::select! {
            r = rx.recv() => r,
            _ = closing.changed() => return None,
        };
        match received {
            Ok(event) => {
                let mut line = serde_json::to_vec(&event).expect("stream events serialize");
                line.push(b'\n');
                Some((Ok::<_, std::io::Error>(line), (rx, closing)))
            }
            Err(RecvError::Lagged(missed)) => {
                tracing::warn!("dropping slow stream subscriber after {missed} missed events");
                None
            }
            Err(RecvError::Closed) => None,
        }
    });
    (
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        Body::from_stream(body),
    )
        .into_response()
}

#[derive(Serialize, Deserialize)]
pub struct CloseDayResponse {
    pub release: ReleaseEvent,
    pub post: OutboundPost,
}

async fn close_day(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<CloseDayResponse>, ApiError> {
    let user = state.moderator(&headers)?;
    let applied = state
        .engine
        .apply("admin".into(), user, InboundPayload::Admin(AdminCommand::CloseDay))
        .await??;
    let release = applied
        .release
        .ok_or_else(|| ApiError::internal("close produced no release"))?;
    let post = applied
        .posts
        .into_iter()
        .next()
        .ok_or_else(|| ApiError::internal("close produced no post"))?;
    Ok(Json(CloseDayResponse { release, post }))
}

async fn reopen(State(state): State<AppState>, headers: HeaderMap) -> Result<Json<CurrentView>, ApiError> {
    let user = state.moderator(&headers)?;
    state
        .engine
        .apply("admin".into(), user, InboundPayload::Admin(AdminCommand::Reopen))
        .await??;
    Ok(Json(state.engine.call(|ctx| ctx.engine().current()).await?))
}

#[derive(Deserialize)]
struct ClockRequest {
    virtual_now: Timestamp,
}

async fn set_clock(
    State(state): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<ClockRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let user = state.moderator(&headers)?;
    match state.engine.set_clock(req.virtual_now, user).await? {
        Ok(now) => Ok(Json(json!({"virtual_now": now}))),
        Err(ClockError::Regression { now }) => Err(ApiError::new(
            StatusCode::CONFLICT,
            "clock-regression",
            format!("virtual clock is already at {now}"),
        )),
        Err(ClockError::Engine(e)) => Err(e.into()),
    }
}

#[derive(Deserialize)]
struct CanonizeRequest {
    fact: String,
}

async fn canonize(
    State(state): State<AppState>,
    headers: HeaderMap,
    ApiJson(req): ApiJson<CanonizeRequest>,
) -> Result<Json<OutboundPost>, ApiError> {
    let user = state.moderator(&headers)?;
    let applied = state
        .engine
        .apply(
            "admin".into(),
            user,
            InboundPayload::Admin(AdminCommand::Canonize { fact: req.fact }),
        )
        .await??;
    applied
        .posts
        .into_iter()
        .next()
        .map(Json)
        .ok_or_else(|| ApiError::internal("canonize produced no post"))
}
