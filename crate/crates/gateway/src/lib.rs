//! HTTP front end for the storybot engine: the JSON API, the NDJSON event
//! stream and the standalone clue service.

mod adapter;
mod api;
mod clue_service;
mod engine;
mod error;

use std::future::Future;
use std::time::Duration;

use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

pub use adapter::PlatformAdapter;
pub use api::{router, AppState, ChatResponse, CloseDayResponse, JoinResponse, VoteResponse};
pub use clue_service::{clue_router, MatchResponse};
pub use engine::{ClockError, EngineClock, EngineCtx, EngineHandle, EngineStopped, StreamEvent};
pub use error::{ApiError, ErrorBody};

/// How often the ticker checks for a due day when no requests arrive.
pub const DEFAULT_TICK: Duration = Duration::from_millis(250);

/// Periodically closes days whose deadline has passed, so releases happen
/// even when nobody is talking. Stops once the engine does.
pub fn spawn_ticker(handle: EngineHandle, every: Duration) -> JoinHandle<()> {
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(every);
        interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            interval.tick().await;
            match handle.tick().await {
                Ok(Ok(_)) => {}
                Ok(Err(e)) => tracing::error!("scheduled release failed: {e}"),
                Err(_) => break,
            }
        }
    })
}

/// Serves `app` until `shutdown` resolves and in-flight requests drain.
pub async fn serve(
    listener: TcpListener,
    app: Router,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}

/// Resolves on ctrl-c or, on unix, SIGTERM.
pub async fn shutdown_signal() {
    let ctrl_c = async {
        if tokio::signal::ctrl_c().await.is_err() {
            std::future::pending::<()>().await;
        }
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    tracing::info!("shutdown requested");
}
