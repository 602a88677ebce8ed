//! Execution runtime for canvases: worker processes, live documents and
//! per-session job queues.

pub mod live;
pub mod orchestrator;
pub mod worker;

pub use live::LiveCanvas;
pub use orchestrator::{
    ExecuteCellError, ExecutionResult, Orchestrator, OrchestratorConfig, SessionError, SessionHandle, SessionState,
};
pub use worker::{WorkerCommand, WorkerError, WorkerProcess};
