//! HTTP service for computational canvases: REST mutations, synchronous
//! execution, a server-sent event stream per canvas, workspace persistence
//! and a scripted agent.

pub mod agent;
pub mod error;
pub mod routes;
pub mod service;
pub mod workspace;

use std::future::Future;
use std::net::SocketAddr;

use thiserror::Error;
use tokio::net::TcpListener;

pub use agent::{free_region, run_task, AgentReport, AgentStatus, AgentTask, StepSummary};
pub use error::{ApiError, ErrorBody};
pub use routes::router;
pub use service::{AppState, ServerConfig};
pub use workspace::{CanvasSummary, Workspace};

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("workspace {0} is not a directory")]
    Workspace(String),
    #[error("server failed: {0}")]
    Io(#[from] std::io::Error),
}

pub async fn bind(addr: SocketAddr) -> Result<TcpListener, ServeError> {
    TcpListener::bind(addr)
        .await
        .map_err(|source| ServeError::Bind { addr, source })
}

/// Serves until `shutdown` resolves, then saves every open canvas and stops
/// all worker processes.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServeError> {
    if !state.config().workspace.is_dir() {
        return Err(ServeError::Workspace(state.config().workspace.display().to_string()));
    }
    let app = router(state.clone());
    let signal = {
        let state = state.clone();
        async move {
            shutdown.await;
            state.begin_close();
        }
    };
    let result = axum::serve(listener, app).with_graceful_shutdown(signal).await;
    state.shutdown().await;
    result.map_err(ServeError::Io)
}
