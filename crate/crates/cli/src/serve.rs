use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use storybot_core::clue::{ClueCorpus, ClueFinder, TrigramEmbedder};
use storybot_core::config::EngineConfig;
use storybot_core::dialogue::DialoguePipeline;
use storybot_core::log::{Durability, EventLog, LogHeader};
use storybot_core::scheduler::{Engine, EngineError};
use storybot_core::time::{Clock, SystemClock, VirtualClock};
use storybot_gateway::{
    clue_router, router, shutdown_signal, spawn_ticker, AppState, EngineClock, EngineHandle, DEFAULT_TICK,
};
use tokio::net::TcpListener;

use crate::{load_package, Failure, Outcome};

const DEFAULT_PORT: u16 = 8080;
const STREAM_BUFFER: usize = 1024;

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start the async runtime")
        .map_err(Failure::usage)
}

async fn bind(host: &str, port: u16) -> Result<TcpListener, Failure> {
    TcpListener::bind((host, port))
        .await
        .with_context(|| format!("cannot listen on {host}:{port}"))
        .map_err(Failure::usage)
}

pub(crate) fn serve(package: &Path, config_path: &Path, port: Option<u16>, host: &str) -> Outcome {
    let config = EngineConfig::load(config_path).map_err(Failure::usage)?;
    let pkg = Arc::new(load_package(package)?);
    let pipeline = DialoguePipeline::new(
        config.pipeline_settings().map_err(Failure::usage)?,
        config.clue_finder().map_err(Failure::usage)?,
        config.provider.build().map_err(Failure::usage)?,
    )
    .map_err(Failure::usage)?;
    let port = port.or(config.port).unwrap_or(DEFAULT_PORT);
    let log_path = config.log_path.clone().unwrap_or_else(|| PathBuf::from("storybot.log"));

    let rt = runtime()?;
    // Bind before creating the log so a busy port leaves nothing behind.
    let listener = rt.block_on(bind(host, port))?;

    let log = EventLog::create(&log_path, LogHeader::new(pkg.character.name()), Durability::Sync)
        .with_context(|| format!("cannot create {}", log_path.display()))
        .map_err(Failure::usage)?;
    let clock = if config.simulation {
        EngineClock::Virtual(VirtualClock::new(SystemClock.now()))
    } else {
        EngineClock::System(Arc::new(SystemClock))
    };
    let now = match &clock {
        EngineClock::Virtual(c) => c.now(),
        EngineClock::System(c) => c.now(),
    };
    let (engine, _) = Engine::start(pkg, pipeline, config.engine_settings(), log, now).map_err(|e| match e {
        EngineError::InvalidPackage(ref defects) => {
            for d in defects {
                eprintln!("{d}");
            }
            Failure::rejected(e)
        }
        other => Failure::usage(other),
    })?;

    let (handle, engine_thread) = EngineHandle::spawn(engine, clock, STREAM_BUFFER);
    let state = AppState::new(handle.clone(), config.moderator_key.clone());
    let app = router(state.clone());
    let served = rt.block_on(async move {
        let ticker = spawn_ticker(handle, DEFAULT_TICK);
        tracing::info!("listening on {}, log at {}", listener.local_addr()?, log_path.display());
        let result = storybot_gateway::serve(listener, app, async move {
            shutdown_signal().await;
            state.close_streams();
        })
        .await;
        ticker.abort();
        let _ = ticker.await;
        result
    });
    drop(rt);

    // The engine thread syncs the log once the last handle is gone.
    let engine = engine_thread
        .join()
        .map_err(|_| Failure::usage(anyhow::anyhow!("engine thread panicked")))?;
    tracing::info!("stopped with {} log entries", engine.log().len());
    served.context("server failed").map_err(Failure::usage)?;
    Ok(ExitCode::SUCCESS)
}

pub(crate) fn clue_serve(corpus_path: &Path, host: &str, port: u16, threshold: f64) -> Outcome {
    let text = std::fs::read_to_string(corpus_path)
        .with_context(|| format!("cannot read {}", corpus_path.display()))
        .map_err(Failure::usage)?;
    let corpus = ClueCorpus::from_json(&text, Arc::new(TrigramEmbedder)).map_err(Failure::usage)?;
    let finder = Arc::new(ClueFinder::new(corpus, threshold).map_err(Failure::usage)?);
    let rt = runtime()?;
    rt.block_on(async move {
        let listener = bind(host, port).await?;
        tracing::info!("clue service on {}", listener.local_addr().map_err(Failure::usage)?);
        storybot_gateway::serve(listener, clue_router(finder), shutdown_signal())
            .await
            .map_err(Failure::usage)
    })?;
    Ok(ExitCode::SUCCESS)
}
