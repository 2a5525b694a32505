//! One task per session owns the engine; everything else talks to it through
//! an ordered command queue.

use awac_core::hpm::IsaScore;
use awac_core::session::{
    ClickOutcome, LogRecord, SessionEngine, SessionError, SessionSnapshot, SurveyKind,
};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::Instant;

/// Maps wall time to session milliseconds. `scale` > 1 runs faster than
/// real time.
#[derive(Debug, Clone, Copy)]
pub struct SessionClock {
    origin: Instant,
    scale: f64,
}

impl SessionClock {
    pub fn new(scale: f64) -> Self {
        Self {
            origin: Instant::now(),
            scale,
        }
    }

    pub fn now_ms(&self) -> u64 {
        (self.origin.elapsed().as_secs_f64() * 1000.0 * self.scale) as u64
    }

    pub fn instant_for(&self, ms: u64) -> Instant {
        self.origin + Duration::from_secs_f64(ms as f64 / 1000.0 / self.scale)
    }
}

type Reply<T> = oneshot::Sender<Result<T, SessionError>>;

enum Command {
    Start(Reply<SessionSnapshot>),
    Snapshot(oneshot::Sender<SessionSnapshot>),
    Log(oneshot::Sender<Vec<LogRecord>>),
    Click {
        operator: usize,
        view: usize,
        object_id: Option<u64>,
        reply: Reply<ClickOutcome>,
    },
    Isa {
        operator: usize,
        score: IsaScore,
        reply: Reply<()>,
    },
    Approval {
        operator: usize,
        accept: bool,
        reply: Reply<()>,
    },
    Survey {
        operator: Option<usize>,
        kind: SurveyKind,
        payload: serde_json::Value,
        reply: Reply<()>,
    },
    Prediction {
        operator: usize,
        s_obj: f64,
        reply: Reply<()>,
    },
    Shutdown(oneshot::Sender<()>),
}

#[derive(Debug, thiserror::Error)]
pub enum ActorError {
    #[error("session task has stopped")]
    Gone,
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone)]
pub struct SessionHandle {
    pub id: String,
    pub n_operators: usize,
    pub log_path: PathBuf,
    tx: mpsc::Sender<Command>,
    events: broadcast::Sender<LogRecord>,
}

impl SessionHandle {
    pub fn subscribe(&self) -> broadcast::Receiver<LogRecord> {
        self.events.subscribe()
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T, ActorError> {
        let (tx, rx) = oneshot::channel();
        self.tx.send(make(tx)).await.map_err(|_| ActorError::Gone)?;
        rx.await.map_err(|_| ActorError::Gone)
    }

    pub async fn start(&self) -> Result<SessionSnapshot, ActorError> {
        Ok(self.ask(Command::Start).await??)
    }

    pub async fn snapshot(&self) -> Result<SessionSnapshot, ActorError> {
        self.ask(Command::Snapshot).await
    }

    pub async fn log(&self) -> Result<Vec<LogRecord>, ActorError> {
        self.ask(Command::Log).await
    }

    pub async fn click(&self, operator: usize, view: usize, object_id: Option<u64>) -> Result<ClickOutcome, ActorError> {
        Ok(self
            .ask(|reply| Command::Click {
                operator,
                view,
                object_id,
                reply,
            })
            .await??)
    }

    pub async fn isa(&self, operator: usize, score: IsaScore) -> Result<(), ActorError> {
        Ok(self.ask(|reply| Command::Isa { operator, score, reply }).await??)
    }

    pub async fn approval(&self, operator: usize, accept: bool) -> Result<(), ActorError> {
        Ok(self
            .ask(|reply| Command::Approval {
                operator,
                accept,
                reply,
            })
            .await??)
    }

    pub async fn survey(
        &self,
        operator: Option<usize>,
        kind: SurveyKind,
        payload: serde_json::Value,
    ) -> Result<(), ActorError> {
        Ok(self
            .ask(|reply| Command::Survey {
                operator,
                kind,
                payload,
                reply,
            })
            .await??)
    }

    pub async fn prediction(&self, operator: usize, s_obj: f64) -> Result<(), ActorError> {
        Ok(self
            .ask(|reply| Command::Prediction {
                operator,
                s_obj,
                reply,
            })
            .await??)
    }

    /// Flushes the log and stops the session task.
    pub async fn shutdown(&self) {
        let _ = self.ask(Command::Shutdown).await;
    }
}

struct LogSink {
    out: BufWriter<File>,
}

impl LogSink {
    fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(file),
        })
    }

    fn append(&mut self, records: &[LogRecord]) -> std::io::Result<()> {
        for r in records {
            serde_json::to_writer(&mut self.out, r)?;
            self.out.write_all(b"\n")?;
        }
        self.out.flush()
    }
}

pub fn spawn_session(engine: SessionEngine, log_path: PathBuf, clock: SessionClock) -> std::io::Result<SessionHandle> {
    let sink = LogSink::open(&log_path)?;
    let (tx, rx) = mpsc::channel(256);
    let (events, _) = broadcast::channel(4096);
    let handle = SessionHandle {
        id: engine.id().to_string(),
        n_operators: engine.config().n_operators,
        log_path,
        tx,
        events: events.clone(),
    };
    tokio::spawn(run(engine, sink, rx, events, clock));
    Ok(handle)
}

async fn run(
    mut engine: SessionEngine,
    mut sink: LogSink,
    mut rx: mpsc::Receiver<Command>,
    events: broadcast::Sender<LogRecord>,
    clock: SessionClock,
) {
    let mut publish = |engine: &mut SessionEngine| {
        let fresh = engine.take_new_records().to_vec();
        if let Err(e) = sink.append(&fresh) {
            tracing::error!(session = engine.id(), "writing log: {e}");
        }
        for r in fresh {
            let _ = events.send(r);
        }
    };
    publish(&mut engine);
    loop {
        let now = |engine: &SessionEngine| clock.now_ms().max(engine.last_event_t());
        let wake = engine.next_deadline().map(|d| clock.instant_for(d));
        tokio::select! {
            cmd = rx.recv() => {
                let Some(cmd) = cmd else { break };
                let t = now(&engine);
                match cmd {
                    Command::Start(reply) => {
                        let r = engine.start(t).map(|_| engine.snapshot());
                        let _ = reply.send(r);
                    }
                    Command::Snapshot(reply) => {
                        let _ = engine.advance(t);
                        let _ = reply.send(engine.snapshot());
                    }
                    Command::Log(reply) => {
                        let _ = engine.advance(t);
                        publish(&mut engine);
                        let _ = reply.send(engine.log().to_vec());
                    }
                    Command::Click { operator, view, object_id, reply } => {
                        let _ = reply.send(engine.handle_click(operator, view, object_id, t));
                    }
                    Command::Isa { operator, score, reply } => {
                        let _ = reply.send(engine.submit_isa(operator, score, t));
                    }
                    Command::Approval { operator, accept, reply } => {
                        let _ = reply.send(engine.submit_approval(operator, accept, t));
                    }
                    Command::Survey { operator, kind, payload, reply } => {
                        let _ = reply.send(engine.submit_survey(operator, kind, payload, t));
                    }
                    Command::Prediction { operator, s_obj, reply } => {
                        let _ = reply.send(engine.set_objective_workload(operator, s_obj));
                    }
                    Command::Shutdown(reply) => {
                        publish(&mut engine);
                        let _ = reply.send(());
                        break;
                    }
                }
            }
            _ = tokio::time::sleep_until(wake.unwrap_or_else(Instant::now)), if wake.is_some() => {
                let t = now(&engine);
                let _ = engine.advance(t);
            }
        }
        publish(&mut engine);
    }
    publish(&mut engine);
}
