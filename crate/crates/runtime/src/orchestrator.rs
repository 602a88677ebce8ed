//! Runtime sessions per canvas.
//!
//! Every canvas gets a main session on its first execution. Environments get
//! sessions forked from main by snapshotting main's namespace (queued behind
//! main's pending work) and restoring it into a fresh worker. Each session
//! owns one worker process and runs jobs strictly in FIFO order; distinct
//! sessions run in parallel.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use canvas_core::events::{EventBody, ExecutionStatus};
use canvas_core::model::{Mime, ModelError, OutputItem, ProducedBy, Route};
use canvas_core::protocol::{ExecutePayload, RestorePayload, SnapshotPayload};
use canvas_core::{CanvasId, CellId, EnvId, SessionId};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;

use crate::live::LiveCanvas;
use crate::worker::{WorkerCommand, WorkerError, WorkerProcess, HANDSHAKE_TIMEOUT};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("environment terminated (session {0})")]
    Terminated(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("could not start session: {0}")]
    Spawn(#[source] WorkerError),
    #[error("fork failed: {0}")]
    Fork(#[source] WorkerError),
    #[error("sessions can only be forked from the main session, not {0}")]
    ForkSource(SessionId),
    #[error("worker failed: {0}")]
    Worker(#[source] WorkerError),
}

#[derive(Debug, Error)]
pub enum ExecuteCellError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cell {0} is not executable")]
    NotExecutable(CellId),
    #[error("cell {0} already has a queued execution")]
    AlreadyQueued(CellId),
    #[error(transparent)]
    Session(#[from] SessionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Starting,
    Idle,
    Busy,
    Dead,
}

/// Point-in-time view of a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionHandle {
    pub session_id: SessionId,
    pub canvas_id: CanvasId,
    pub parent_session_id: Option<SessionId>,
    pub env_id: Option<EnvId>,
    /// Count the next execution will receive.
    pub exec_counter: u32,
    pub state: SessionState,
    pub queued: usize,
    pub pid: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub status: ExecutionStatus,
    pub bundle: Vec<OutputItem>,
    pub execution_count: u32,
    pub duration_ms: u64,
    pub session_id: SessionId,
}

impl ExecutionResult {
    /// The `text/plain` item, i.e. the repr of the final expression.
    pub fn text(&self) -> Option<&str> {
        self.bundle
            .iter()
            .find(|i| i.mime == Mime::TextPlain)
            .map(|i| i.data.as_str())
    }

    pub fn stdout(&self) -> String {
        self.bundle
            .iter()
            .filter(|i| i.mime == Mime::Stdout)
            .map(|i| i.data.as_str())
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct OrchestratorConfig {
    pub worker: WorkerCommand,
    pub handshake_timeout: Duration,
    pub shutdown_grace: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            worker: WorkerCommand::python(),
            handshake_timeout: HANDSHAKE_TIMEOUT,
            shutdown_grace: Duration::from_secs(5),
        }
    }
}

/// Orders the captured streams, rich items, result repr and error into one
/// bundle. Rich items with invalid payloads are replaced by a stderr note.
pub fn bundle_from_payload(payload: &ExecutePayload) -> Vec<OutputItem> {
    let mut bundle = Vec::new();
    if !payload.stdout.is_empty() {
        bundle.push(OutputItem::new(Mime::Stdout, payload.stdout.clone()));
    }
    if !payload.stderr.is_empty() {
        bundle.push(OutputItem::new(Mime::Stderr, payload.stderr.clone()));
    }
    for item in &payload.rich {
        match item.validate() {
            Ok(()) => bundle.push(item.clone()),
            Err(e) => bundle.push(OutputItem::new(Mime::Stderr, format!("dropped output: {e}\n"))),
        }
    }
    if let Some(repr) = &payload.result_repr {
        bundle.push(OutputItem::new(Mime::TextPlain, repr.clone()));
    }
    if let Some(err) = &payload.error {
        let text = if err.traceback.is_empty() {
            format!("{}: {}\n", err.etype, err.message)
        } else {
            err.traceback.clone()
        };
        bundle.push(OutputItem::new(Mime::Stderr, text));
    }
    bundle
}

enum JobKind {
    Execute(String),
    Snapshot,
}

enum JobOutput {
    Executed {
        ok: bool,
        payload: ExecutePayload,
        count: u32,
        duration: Duration,
    },
    Snapshot(SnapshotPayload),
}

struct Job {
    kind: JobKind,
    reply: oneshot::Sender<Result<JobOutput, SessionError>>,
}

struct Shared {
    state: Mutex<SessionState>,
    next_count: AtomicU32,
    queued: AtomicUsize,
}

struct Session {
    id: SessionId,
    canvas_id: CanvasId,
    parent: Option<SessionId>,
    env_id: Mutex<Option<EnvId>>,
    pid: Option<u32>,
    shared: Arc<Shared>,
    jobs: mpsc::UnboundedSender<Job>,
    terminate: watch::Sender<bool>,
    task: tokio::sync::Mutex<Option<JoinHandle<()>>>,
}

impl Session {
    fn handle(&self) -> SessionHandle {
        SessionHandle {
            session_id: self.id.clone(),
            canvas_id: self.canvas_id.clone(),
            parent_session_id: self.parent.clone(),
            env_id: self.env_id.lock().unwrap().clone(),
            exec_counter: self.shared.next_count.load(Ordering::SeqCst),
            state: *self.shared.state.lock().unwrap(),
            queued: self.shared.queued.load(Ordering::SeqCst),
            pid: self.pid,
        }
    }

    fn is_dead(&self) -> bool {
        *self.shared.state.lock().unwrap() == SessionState::Dead
    }

    async fn submit(&self, kind: JobKind) -> Result<JobOutput, SessionError> {
        if self.is_dead() {
            return Err(SessionError::Terminated(self.id.clone()));
        }
        let (reply, rx) = oneshot::channel();
        self.shared.queued.fetch_add(1, Ordering::SeqCst);
        if self.jobs.send(Job { kind, reply }).is_err() {
            self.shared.queued.fetch_sub(1, Ordering::SeqCst);
            return Err(SessionError::Terminated(self.id.clone()));
        }
        rx.await.unwrap_or_else(|_| Err(SessionError::Terminated(self.id.clone())))
    }
}

async fn run_job(worker: &mut WorkerProcess, kind: &JobKind, shared: &Shared) -> Result<JobOutput, WorkerError> {
    match kind {
        JobKind::Execute(code) => {
            let count = shared.next_count.fetch_add(1, Ordering::SeqCst);
            let started = Instant::now();
            let (ok, payload) = worker.connection().execute(code).await?;
            Ok(JobOutput::Executed {
                ok,
                payload,
                count,
                duration: started.elapsed(),
            })
        }
        JobKind::Snapshot => Ok(JobOutput::Snapshot(worker.connection().snapshot().await?)),
    }
}

async fn session_loop(
    id: SessionId,
    mut worker: WorkerProcess,
    mut jobs: mpsc::UnboundedReceiver<Job>,
    mut terminate: watch::Receiver<bool>,
    shared: Arc<Shared>,
    grace: Duration,
) {
    let mut healthy = true;
    loop {
        let job = tokio::select! {
            biased;
            _ = terminate.wait_for(|t| *t) => break,
            job = jobs.recv() => match job {
                Some(job) => job,
                None => break,
            },
        };
        shared.queued.fetch_sub(1, Ordering::SeqCst);
        *shared.state.lock().unwrap() = SessionState::Busy;
        let outcome = tokio::select! {
            biased;
            _ = terminate.wait_for(|t| *t) => None,
            r = run_job(&mut worker, &job.kind, &shared) => Some(r),
        };
        match outcome {
            None => {
                let _ = job.reply.send(Err(SessionError::Terminated(id.clone())));
                healthy = false;
                break;
            }
            Some(Err(e)) => {
                tracing::warn!(session = %id, "worker failed: {e}");
                let _ = job.reply.send(Err(SessionError::Worker(e)));
                healthy = false;
                break;
            }
            Some(Ok(out)) => {
                *shared.state.lock().unwrap() = SessionState::Idle;
                let _ = job.reply.send(Ok(out));
            }
        }
    }
    *shared.state.lock().unwrap() = SessionState::Dead;
    jobs.close();
    while let Ok(job) = jobs.try_recv() {
        shared.queued.fetch_sub(1, Ordering::SeqCst);
        let _ = job.reply.send(Err(SessionError::Terminated(id.clone())));
    }
    if healthy {
        worker.shutdown(grace).await;
    } else {
        worker.kill().await;
    }
}

struct Inner {
    config: OrchestratorConfig,
    sessions: Mutex<HashMap<SessionId, Arc<Session>>>,
    mains: Mutex<HashMap<CanvasId, SessionId>>,
    fork_counters: Mutex<HashMap<CanvasId, u64>>,
    main_guard: tokio::sync::Mutex<()>,
}

/// Owns every session of every canvas. Cheap to clone.
#[derive(Clone)]
pub struct Orchestrator {
    inner: Arc<Inner>,
}

impl Default for Orchestrator {
    fn default() -> Self {
        Self::new(OrchestratorConfig::default())
    }
}

impl Orchestrator {
    pub fn new(config: OrchestratorConfig) -> Self {
        Self {
            inner: Arc::new(Inner {
                config,
                sessions: Mutex::new(HashMap::new()),
                mains: Mutex::new(HashMap::new()),
                fork_counters: Mutex::new(HashMap::new()),
                main_guard: tokio::sync::Mutex::new(()),
            }),
        }
    }

    fn get(&self, id: &SessionId) -> Result<Arc<Session>, SessionError> {
        self.inner
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.clone()))
    }

    pub fn session(&self, id: &SessionId) -> Option<SessionHandle> {
        self.get(id).ok().map(|s| s.handle())
    }

    pub fn sessions_of(&self, canvas: &CanvasId) -> Vec<SessionHandle> {
        let mut out: Vec<SessionHandle> = self
            .inner
            .sessions
            .lock()
            .unwrap()
            .values()
            .filter(|s| &s.canvas_id == canvas)
            .map(|s| s.handle())
            .collect();
        out.sort_by(|a, b| a.session_id.cmp(&b.session_id));
        out
    }

    pub fn main_session_id(&self, canvas: &CanvasId) -> Option<SessionId> {
        self.inner.mains.lock().unwrap().get(canvas).cloned()
    }

    fn start_session(
        &self,
        id: SessionId,
        canvas_id: CanvasId,
        parent: Option<SessionId>,
        worker: WorkerProcess,
    ) -> Arc<Session> {
        let shared = Arc::new(Shared {
            state: Mutex::new(SessionState::Idle),
            next_count: AtomicU32::new(1),
            queued: AtomicUsize::new(0),
        });
        let (jobs_tx, jobs_rx) = mpsc::unbounded_channel();
        let (term_tx, term_rx) = watch::channel(false);
        let pid = worker.pid();
        let task = tokio::spawn(session_loop(
            id.clone(),
            worker,
            jobs_rx,
            term_rx,
            Arc::clone(&shared),
            self.inner.config.shutdown_grace,
        ));
        let session = Arc::new(Session {
            id: id.clone(),
            canvas_id,
            parent,
            env_id: Mutex::new(None),
            pid,
            shared,
            jobs: jobs_tx,
            terminate: term_tx,
            task: tokio::sync::Mutex::new(Some(task)),
        });
        self.inner
            .sessions
            .lock()
            .unwrap()
            .insert(id, Arc::clone(&session));
        session
    }

    async fn spawn_worker(&self) -> Result<WorkerProcess, WorkerError> {
        WorkerProcess::spawn(&self.inner.config.worker, self.inner.config.handshake_timeout).await
    }

    /// Returns the canvas's main session, starting it on first use.
    pub async fn ensure_main_session(&self, canvas_id: &CanvasId) -> Result<SessionHandle, SessionError> {
        if let Some(id) = self.main_session_id(canvas_id) {
            if let Ok(s) = self.get(&id) {
                return Ok(s.handle());
            }
        }
        let _guard = self.inner.main_guard.lock().await;
        if let Some(id) = self.main_session_id(canvas_id) {
            if let Ok(s) = self.get(&id) {
                return Ok(s.handle());
            }
        }
        let worker = self.spawn_worker().await.map_err(SessionError::Spawn)?;
        let id = SessionId::new(format!("{canvas_id}/main"));
        let session = self.start_session(id.clone(), canvas_id.clone(), None, worker);
        self.inner.mains.lock().unwrap().insert(canvas_id.clone(), id);
        Ok(session.handle())
    }

    /// Forks a new session from the canvas's main session. Returns the child
    /// and the names that could not be carried over.
    pub async fn fork_session(&self, canvas_id: &CanvasId) -> Result<(SessionHandle, Vec<String>), SessionError> {
        let main = self.ensure_main_session(canvas_id).await?;
        let main_session = self.get(&main.session_id)?;
        let snapshot = match main_session.submit(JobKind::Snapshot).await? {
            JobOutput::Snapshot(s) => s,
            JobOutput::Executed { .. } => unreachable!("snapshot job yields a snapshot"),
        };

        let mut worker = self.spawn_worker().await.map_err(SessionError::Fork)?;
        let restored: RestorePayload = match worker.connection().restore(&snapshot.blob).await {
            Ok(r) => r,
            Err(e) => {
                worker.kill().await;
                return Err(SessionError::Fork(e));
            }
        };

        let n = {
            let mut counters = self.inner.fork_counters.lock().unwrap();
            let n = counters.entry(canvas_id.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let id = SessionId::new(format!("{canvas_id}/fork-{n}"));
        let session = self.start_session(id, canvas_id.clone(), Some(main.session_id), worker);

        let mut warnings = snapshot.skipped;
        warnings.extend(restored.skipped);
        warnings.sort();
        warnings.dedup();
        Ok((session.handle(), warnings))
    }

    /// Forking is only supported from main; any other source is rejected.
    pub async fn fork_from(
        &self,
        canvas_id: &CanvasId,
        source: &SessionId,
    ) -> Result<(SessionHandle, Vec<String>), SessionError> {
        let main = self.ensure_main_session(canvas_id).await?;
        if &main.session_id != source {
            return Err(SessionError::ForkSource(source.clone()));
        }
        self.fork_session(canvas_id).await
    }

    /// Records which environment region owns a forked session.
    pub fn bind_environment(&self, session: &SessionId, env: &EnvId) {
        if let Ok(s) = self.get(session) {
            *s.env_id.lock().unwrap() = Some(env.clone());
        }
    }

    /// Session currently serving `env`, if it was created by this
    /// orchestrator for that environment.
    fn bound_session(&self, canvas: &CanvasId, env: &EnvId, session: &SessionId) -> Option<Arc<Session>> {
        let s = self.get(session).ok()?;
        let bound = s.env_id.lock().unwrap().clone();
        (&s.canvas_id == canvas && bound.as_ref() == Some(env)).then_some(s)
    }

    /// Queues code on a session and waits for its turn and result.
    pub async fn execute(&self, session_id: &SessionId, code: &str) -> Result<ExecutionResult, SessionError> {
        let session = self.get(session_id)?;
        match session.submit(JobKind::Execute(code.to_owned())).await? {
            JobOutput::Executed {
                ok,
                payload,
                count,
                duration,
            } => Ok(ExecutionResult {
                status: if ok && payload.error.is_none() {
                    ExecutionStatus::Ok
                } else {
                    ExecutionStatus::Error
                },
                bundle: bundle_from_payload(&payload),
                execution_count: count,
                duration_ms: duration.as_millis() as u64,
                session_id: session_id.clone(),
            }),
            JobOutput::Snapshot(_) => unreachable!("execute job yields an execution"),
        }
    }

    /// Serialized namespace of a session, taken between executions.
    pub async fn snapshot(&self, session_id: &SessionId) -> Result<SnapshotPayload, SessionError> {
        match self.get(session_id)?.submit(JobKind::Snapshot).await? {
            JobOutput::Snapshot(s) => Ok(s),
            JobOutput::Executed { .. } => unreachable!("snapshot job yields a snapshot"),
        }
    }

    /// Stops a session: pending and queued jobs fail with "environment
    /// terminated", the worker gets a shutdown request and is killed if it
    /// does not exit in time. Idempotent.
    pub async fn terminate_session(&self, session_id: &SessionId) {
        let Ok(session) = self.get(session_id) else {
            return;
        };
        let _ = session.terminate.send(true);
        let task = session.task.lock().await.take();
        if let Some(task) = task {
            let _ = task.await;
        }
    }

    /// Terminates and forgets every session of one canvas.
    pub async fn shutdown_canvas(&self, canvas_id: &CanvasId) {
        let ids: Vec<SessionId> = self
            .inner
            .sessions
            .lock()
            .unwrap()
            .values()
            .filter(|s| &s.canvas_id == canvas_id)
            .map(|s| s.id.clone())
            .collect();
        let stops: Vec<_> = ids
            .iter()
            .map(|id| {
                let this = self.clone();
                let id = id.clone();
                tokio::spawn(async move { this.terminate_session(&id).await })
            })
            .collect();
        for stop in stops {
            let _ = stop.await;
        }
        let mut sessions = self.inner.sessions.lock().unwrap();
        for id in &ids {
            sessions.remove(id);
        }
        self.inner.mains.lock().unwrap().remove(canvas_id);
    }

    pub async fn shutdown_all(&self) {
        let canvases: Vec<CanvasId> = {
            let sessions = self.inner.sessions.lock().unwrap();
            let mut ids: Vec<CanvasId> = sessions.values().map(|s| s.canvas_id.clone()).collect();
            ids.sort();
            ids.dedup();
            ids
        };
        for c in canvases {
            self.shutdown_canvas(&c).await;
        }
    }

    /// Session that should run `env`'s cells, forking lazily when the
    /// environment has no live binding in this process (e.g. loaded from disk).
    async fn environment_session(&self, live: &LiveCanvas, env_id: &EnvId) -> Result<SessionId, ExecuteCellError> {
        let recorded = live.lock().await.environment(env_id)?.session_id.clone();
        if let Some(s) = self.bound_session(live.id(), env_id, &recorded) {
            return Ok(s.id.clone());
        }
        let (child, warnings) = self.fork_session(live.id()).await?;
        let mut doc = live.lock().await;
        let Some(env) = doc.environments.get_mut(env_id) else {
            drop(doc);
            self.terminate_session(&child.session_id).await;
            return Err(ModelError::UnknownEnvironment(env_id.clone()).into());
        };
        env.session_id = child.session_id.clone();
        let environment = env.clone();
        self.bind_environment(&child.session_id, env_id);
        live.emit(EventBody::EnvUpdated { environment });
        if !warnings.is_empty() {
            live.emit(EventBody::SessionWarning {
                message: format!("environment {env_id}: some variables could not be forked"),
                names: warnings,
            });
        }
        Ok(child.session_id)
    }

    /// Executes a cell on the session its position routes to (decided now,
    /// at dispatch) and writes the result back into the canvas.
    pub async fn execute_cell(&self, live: &Arc<LiveCanvas>, cell_id: &CellId) -> Result<ExecutionResult, ExecuteCellError> {
        let (code, route) = {
            let doc = live.lock().await;
            let cell = doc.cell(cell_id)?;
            if !cell.is_executable() {
                return Err(ExecuteCellError::NotExecutable(cell_id.clone()));
            }
            (cell.source.clone(), doc.resolve_environment(cell_id)?)
        };
        let _pending = live
            .begin_execution(cell_id)
            .ok_or_else(|| ExecuteCellError::AlreadyQueued(cell_id.clone()))?;

        let session_id = match route {
            Route::Main => self.ensure_main_session(live.id()).await?.session_id,
            Route::Environment(env) => self.environment_session(live, &env).await?,
        };
        live.emit(EventBody::ExecutionStarted {
            cell_id: cell_id.clone(),
            session_id: session_id.clone(),
        });
        let result = self.execute(&session_id, &code).await?;

        let mut doc = live.lock().await;
        if doc.cells.contains_key(cell_id) {
            let cell = doc.set_execution_count(cell_id, result.execution_count)?;
            let output = doc.attach_or_update_output(
                cell_id,
                result.bundle.clone(),
                ProducedBy {
                    session_id: session_id.clone(),
                    execution_count: result.execution_count,
                },
            )?;
            live.emit(EventBody::CellUpdated { cell });
            live.emit(EventBody::OutputUpdated { output });
        }
        live.emit(EventBody::ExecutionFinished {
            cell_id: cell_id.clone(),
            session_id,
            status: result.status,
            execution_count: result.execution_count,
        });
        Ok(result)
    }
}
