//! Runs an [`Engine`] on its own thread and hands out a cloneable handle.
//!
//! Every request becomes a job executed on that thread, one at a time, so
//! the engine keeps a single writer no matter how many connections are
//! open. Jobs stamp their events with the engine clock on the engine thread,
//! which keeps log timestamps ordered the same way the jobs ran.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use storybot_core::events::{AdminCommand, InboundEvent, InboundPayload, OutboundPost};
use storybot_core::scheduler::{Applied, Engine, EngineError, ReleaseEvent};
use storybot_core::time::{Clock, Timestamp, VirtualClock};
use storybot_core::{ChannelId, UserId};
use tokio::sync::{broadcast, mpsc, oneshot};

/// One line of the `/events` stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamEvent {
    /// Position in the engine's emission order, starting at 0.
    pub seq: u64,
    #[serde(flatten)]
    pub post: OutboundPost,
}

/// Where the engine gets its time from.
#[derive(Clone)]
pub enum EngineClock {
    System(Arc<dyn Clock>),
    /// Only moves when an admin sets it.
    Virtual(VirtualClock),
}

impl EngineClock {
    fn now(&self) -> Timestamp {
        match self {
            EngineClock::System(c) => c.now(),
            EngineClock::Virtual(c) => c.now(),
        }
    }
}

pub struct EngineCtx {
    engine: Engine,
    clock: EngineClock,
    events: broadcast::Sender<StreamEvent>,
    seq: Arc<AtomicU64>,
}

impl EngineCtx {
    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Engine time, never behind the last logged event.
    fn stamp(&self) -> Timestamp {
        let now = self.clock.now();
        self.engine.log().last_ts().map_or(now, |last| now.max(last))
    }

    fn publish(&self, posts: impl IntoIterator<Item = OutboundPost>) {
        for post in posts {
            let seq = self.seq.fetch_add(1, Ordering::SeqCst);
            // No subscribers is fine; the post is already in the log.
            let _ = self.events.send(StreamEvent { seq, post });
        }
    }

    /// Closes the open day if its deadline has passed.
    fn catch_up(&mut self) -> Result<Vec<ReleaseEvent>, EngineError> {
        let now = self.stamp();
        let released = self.engine.run_due(now)?;
        let mut releases = Vec::with_capacity(released.len());
        for (release, post) in released {
            self.publish([post]);
            releases.push(release);
        }
        Ok(releases)
    }

    fn apply(&mut self, channel: ChannelId, user: UserId, payload: InboundPayload) -> Result<Applied, EngineError> {
        self.catch_up()?;
        let event = InboundEvent {
            channel,
            user_id: user,
            timestamp: self.stamp(),
            payload,
        };
        let applied = self.engine.apply(event)?;
        self.publish(applied.posts.iter().cloned());
        Ok(applied)
    }
}

type Job = Box<dyn FnOnce(&mut EngineCtx) + Send>;

/// Cheap, cloneable access to the engine thread.
#[derive(Clone)]
pub struct EngineHandle {
    jobs: mpsc::Sender<Job>,
    events: broadcast::Sender<StreamEvent>,
    simulation: bool,
}

#[derive(Debug)]
pub struct EngineStopped;

impl std::fmt::Display for EngineStopped {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("engine has stopped")
    }
}

impl EngineHandle {
    /// Moves `engine` onto a new thread. The thread exits, syncing the log,
    /// once every handle is dropped.
    pub fn spawn(engine: Engine, clock: EngineClock, stream_buffer: usize) -> (EngineHandle, JoinHandle<Engine>) {
        let (jobs, mut rx) = mpsc::channel::<Job>(1024);
        let (events, _) = broadcast::channel(stream_buffer.max(1));
        let simulation = engine.settings().simulation;
        let mut ctx = EngineCtx {
            engine,
            clock,
            events: events.clone(),
            seq: Arc::new(AtomicU64::new(0)),
        };
        let thread = std::thread::Builder::new()
            .name("storybot-engine".into())
            .spawn(move || {
                while let Some(job) = rx.blocking_recv() {
                    job(&mut ctx);
                }
                if let Err(e) = ctx.engine.log_mut().sync() {
                    tracing::error!("final log sync failed: {e}");
                }
                ctx.engine
            })
            .expect("engine thread spawns");
        (
            EngineHandle {
                jobs,
                events,
                simulation,
            },
            thread,
        )
    }

    pub fn is_simulation(&self) -> bool {
        self.simulation
    }

    pub fn subscribe(&self) -> broadcast::Receiver<StreamEvent> {
        self.events.subscribe()
    }

    /// Runs `f` on the engine thread and returns its result.
    pub async fn call<R, F>(&self, f: F) -> Result<R, EngineStopped>
    where
        R: Send + 'static,
        F: FnOnce(&mut EngineCtx) -> R + Send + 'static,
    {
        let (tx, rx) = oneshot::channel();
        let job: Job = Box::new(move |ctx| {
            let _ = tx.send(f(ctx));
        });
        self.jobs.send(job).await.map_err(|_| EngineStopped)?;
        rx.await.map_err(|_| EngineStopped)
    }

    pub async fn apply(
        &self,
        channel: ChannelId,
        user: UserId,
        payload: InboundPayload,
    ) -> Result<Result<Applied, EngineError>, EngineStopped> {
        self.call(move |ctx| ctx.apply(channel, user, payload)).await
    }

    /// Closes the day if it is due.
    pub async fn tick(&self) -> Result<Result<Vec<ReleaseEvent>, EngineError>, EngineStopped> {
        self.call(|ctx| ctx.catch_up()).await
    }

    /// Moves the virtual clock forward, records the command and closes any
    /// day that became due.
    pub async fn set_clock(&self, to: Timestamp, user: UserId) -> Result<Result<Timestamp, ClockError>, EngineStopped> {
        self.call(move |ctx| {
            let EngineClock::Virtual(clock) = &ctx.clock else {
                return Err(ClockError::Engine(EngineError::NotSimulation));
            };
            if !ctx.engine.settings().simulation {
                return Err(ClockError::Engine(EngineError::NotSimulation));
            }
            if !clock.set(to) {
                return Err(ClockError::Regression { now: clock.now() });
            }
            let payload = InboundPayload::Admin(AdminCommand::SetClock { virtual_now: to });
            ctx.apply("admin".into(), user, payload).map_err(ClockError::Engine)?;
            Ok(to)
        })
        .await
    }

    pub async fn sync_log(&self) -> Result<Result<(), EngineError>, EngineStopped> {
        self.call(|ctx| ctx.engine.log_mut().sync().map_err(EngineError::from))
            .await
    }
}

#[derive(Debug)]
pub enum ClockError {
    Regression { now: Timestamp },
    Engine(EngineError),
}
