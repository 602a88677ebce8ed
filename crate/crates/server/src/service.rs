//! Canvas operations shared by the HTTP handlers and the agent harness.
//! Every mutation happens under the canvas lock and publishes its events
//! before the lock is released.

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use canvas_core::codec::{export_ipynb, import_ipynb, IpynbExport};
use canvas_core::events::EventBody;
use canvas_core::model::EnvironmentMove;
use canvas_core::{
    Canvas, CanvasId, Cell, CellId, Delta, EnvId, Environment, OutputCell, OutputId, Point, Rect,
};
use canvas_runtime::{ExecutionResult, LiveCanvas, Orchestrator, OrchestratorConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ApiError;
use crate::workspace::{Binding, CanvasSummary, Workspace, AUTOSAVE_DEBOUNCE};

pub const EXECUTE_TIMEOUT: Duration = Duration::from_secs(120);
pub const DEFAULT_ENV_COLOR: &str = "#4f8cc980";

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub workspace: PathBuf,
    pub execute_timeout: Duration,
    pub autosave_debounce: Duration,
    pub orchestrator: OrchestratorConfig,
}

impl ServerConfig {
    pub fn new(workspace: impl Into<PathBuf>) -> Self {
        Self {
            workspace: workspace.into(),
            execute_timeout: EXECUTE_TIMEOUT,
            autosave_debounce: AUTOSAVE_DEBOUNCE,
            orchestrator: OrchestratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewCanvas {
    #[serde(default)]
    pub id: Option<CanvasId>,
    #[serde(default)]
    pub title: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewCell {
    pub source: String,
    pub frame: Rect,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CellPatch {
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub frame: Option<Rect>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NewEnvironment {
    pub region: Rect,
    #[serde(default)]
    pub color: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreatedEnvironment {
    pub environment: Environment,
    /// Variables that could not be carried into the fork.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DeletedCell {
    pub cell: Cell,
    pub removed_output: Option<OutputId>,
}

struct Inner {
    config: ServerConfig,
    workspace: Workspace,
    orchestrator: Orchestrator,
    agents: Mutex<HashSet<CanvasId>>,
    closing: tokio::sync::watch::Sender<bool>,
}

/// Shared service state. Cheap to clone.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

/// Held while an agent task runs on a canvas.
pub struct AgentSlot {
    state: AppState,
    canvas: CanvasId,
}

impl Drop for AgentSlot {
    fn drop(&mut self) {
        self.state.inner.agents.lock().unwrap().remove(&self.canvas);
    }
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        let workspace = Workspace::with_debounce(config.workspace.clone(), config.autosave_debounce);
        let orchestrator = Orchestrator::new(config.orchestrator.clone());
        Self {
            inner: Arc::new(Inner {
                config,
                workspace,
                orchestrator,
                agents: Mutex::new(HashSet::new()),
                closing: tokio::sync::watch::channel(false).0,
            }),
        }
    }

    pub fn workspace(&self) -> &Workspace {
        &self.inner.workspace
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.inner.orchestrator
    }

    pub fn config(&self) -> &ServerConfig {
        &self.inner.config
    }

    pub async fn live(&self, canvas: &CanvasId) -> Result<Arc<LiveCanvas>, ApiError> {
        self.inner.workspace.live(canvas).await
    }

    pub async fn binding(&self, canvas: &CanvasId) -> Result<Arc<Binding>, ApiError> {
        self.inner.workspace.get(canvas).await
    }

    pub async fn list_canvases(&self) -> Result<Vec<CanvasSummary>, ApiError> {
        self.inner.workspace.list().await
    }

    pub async fn create_canvas(&self, req: NewCanvas) -> Result<Canvas, ApiError> {
        let id = match req.id {
            Some(id) => id,
            None => self.inner.workspace.fresh_id().await,
        };
        let title = req.title.unwrap_or_else(|| id.to_string());
        let binding = self.inner.workspace.create(Canvas::new(id, title)).await?;
        Ok(binding.live.snapshot().await)
    }

    pub async fn canvas(&self, canvas: &CanvasId) -> Result<Canvas, ApiError> {
        Ok(self.live(canvas).await?.snapshot().await)
    }

    pub async fn delete_canvas(&self, canvas: &CanvasId) -> Result<(), ApiError> {
        self.inner.workspace.delete(canvas).await?;
        self.inner.orchestrator.shutdown_canvas(canvas).await;
        Ok(())
    }

    /// Replaces a canvas from file bytes. Sessions of the old document are
    /// discarded; environments fork again on their next execution.
    pub async fn replace_canvas(&self, canvas: &CanvasId, bytes: &[u8]) -> Result<Canvas, ApiError> {
        let parsed = canvas_core::codec::parse_2dntb(bytes)?;
        let (binding, replaced) = self.inner.workspace.replace(canvas, parsed).await?;
        if replaced {
            self.inner.orchestrator.shutdown_canvas(canvas).await;
        }
        Ok(binding.live.snapshot().await)
    }

    pub async fn export_ipynb(&self, canvas: &CanvasId) -> Result<IpynbExport, ApiError> {
        Ok(export_ipynb(&self.canvas(canvas).await?))
    }

    /// Imports a notebook as a new canvas. The id comes from the request,
    /// then from the notebook's own metadata if free, then is generated.
    pub async fn import_ipynb(&self, notebook: &Value, id: Option<CanvasId>) -> Result<Canvas, ApiError> {
        let mut canvas = import_ipynb(notebook)?;
        let embedded = canvas.id.clone();
        canvas.id = match id {
            Some(id) => id,
            None if notebook.pointer("/metadata/canvas/id").is_some()
                && crate::workspace::validate_id(embedded.as_str()).is_ok()
                && !self.inner.workspace.exists(&embedded).await =>
            {
                embedded
            }
            None => self.inner.workspace.fresh_id().await,
        };
        let binding = self.inner.workspace.create(canvas).await?;
        Ok(binding.live.snapshot().await)
    }

    pub async fn create_cell(&self, canvas: &CanvasId, req: NewCell) -> Result<Cell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let cell = doc.create_cell(req.source, req.frame)?;
                Ok::<_, ApiError>((cell.clone(), vec![EventBody::CellCreated { cell }]))
            })
            .await
    }

    pub async fn update_cell(&self, canvas: &CanvasId, cell: &CellId, patch: CellPatch) -> Result<Cell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let mut current = doc.cell(cell)?.clone();
                let mut events = Vec::new();
                if let Some(source) = patch.source {
                    current = doc.set_cell_source(cell, source)?;
                    events.push(EventBody::CellUpdated { cell: current.clone() });
                }
                if let Some(frame) = patch.frame {
                    current = doc.set_cell_frame(cell, frame)?;
                    events.push(EventBody::CellMoved { cell: current.clone() });
                }
                Ok::<_, ApiError>((current, events))
            })
            .await
    }

    pub async fn delete_cell(&self, canvas: &CanvasId, cell: &CellId) -> Result<DeletedCell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let deleted = doc.delete_cell(cell)?;
                let event = EventBody::CellDeleted {
                    cell_id: deleted.cell.id.clone(),
                    removed_output: deleted.removed_output.clone(),
                };
                Ok::<_, ApiError>((
                    DeletedCell {
                        cell: deleted.cell,
                        removed_output: deleted.removed_output,
                    },
                    vec![event],
                ))
            })
            .await
    }

    /// Runs a cell and waits for its result. The execution itself runs
    /// detached, so on timeout it still completes and writes back later.
    pub async fn execute_cell(&self, canvas: &CanvasId, cell: &CellId) -> Result<ExecutionResult, ApiError> {
        let live = self.live(canvas).await?;
        live.lock().await.cell(cell)?;
        let orchestrator = self.inner.orchestrator.clone();
        let cell_id = cell.clone();
        let job = tokio::spawn(async move { orchestrator.execute_cell(&live, &cell_id).await });
        let timeout = self.inner.config.execute_timeout;
        match tokio::time::timeout(timeout, job).await {
            Ok(Ok(result)) => Ok(result?),
            Ok(Err(join)) => Err(ApiError::internal("internal", join.to_string())),
            Err(_) => Err(ApiError::new(
                axum::http::StatusCode::GATEWAY_TIMEOUT,
                "execution-timeout",
                format!("cell {cell} did not finish within {}s; it keeps running", timeout.as_secs()),
            )),
        }
    }

    /// Forks a session from main and creates the environment bound to it.
    pub async fn create_environment(
        &self,
        canvas: &CanvasId,
        req: NewEnvironment,
    ) -> Result<CreatedEnvironment, ApiError> {
        let live = self.live(canvas).await?;
        let color = req.color.unwrap_or_else(|| DEFAULT_ENV_COLOR.to_owned());
        canvas_core::model::validate_color(&color)?;
        let orchestrator = &self.inner.orchestrator;
        let (session, warnings) = orchestrator.fork_session(canvas).await?;
        let created = live
            .apply(|doc| {
                let environment = doc.create_environment(req.region, color, session.session_id.clone())?;
                let mut events = vec![EventBody::EnvCreated {
                    environment: environment.clone(),
                }];
                if !warnings.is_empty() {
                    events.push(EventBody::SessionWarning {
                        message: format!("environment {}: some variables could not be forked", environment.id),
                        names: warnings.clone(),
                    });
                }
                Ok::<_, ApiError>((environment, events))
            })
            .await;
        match created {
            Ok(environment) => {
                orchestrator.bind_environment(&session.session_id, &environment.id);
                Ok(CreatedEnvironment { environment, warnings })
            }
            Err(e) => {
                orchestrator.terminate_session(&session.session_id).await;
                Err(e)
            }
        }
    }

    pub async fn move_environment(&self, canvas: &CanvasId, env: &EnvId, delta: Delta) -> Result<EnvironmentMove, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let moved = doc.move_environment(env, delta)?;
                let event = EventBody::EnvMoved {
                    environment: moved.environment.clone(),
                    cells: moved.cells.clone(),
                    outputs: moved.outputs.clone(),
                };
                Ok::<_, ApiError>((moved, vec![event]))
            })
            .await
    }

    /// Removes the region and terminates its session. Cells stay put and
    /// route to main from now on.
    pub async fn delete_environment(&self, canvas: &CanvasId, env: &EnvId) -> Result<Environment, ApiError> {
        let removed = self
            .live(canvas)
            .await?
            .apply(|doc| {
                let environment = doc.delete_environment(env)?;
                Ok::<_, ApiError>((environment, vec![EventBody::EnvDeleted { env_id: env.clone() }]))
            })
            .await?;
        let orchestrator = &self.inner.orchestrator;
        if orchestrator
            .session(&removed.session_id)
            .is_some_and(|s| &s.canvas_id == canvas)
        {
            orchestrator.terminate_session(&removed.session_id).await;
        }
        Ok(removed)
    }

    pub async fn detach_output(&self, canvas: &CanvasId, output: &OutputId) -> Result<OutputCell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let output = doc.detach_output(output)?;
                Ok::<_, ApiError>((output.clone(), vec![EventBody::OutputDetached { output }]))
            })
            .await
    }

    pub async fn move_output(&self, canvas: &CanvasId, output: &OutputId, to: Point) -> Result<OutputCell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let output = doc.move_output(output, to)?;
                Ok::<_, ApiError>((output.clone(), vec![EventBody::OutputUpdated { output }]))
            })
            .await
    }

    pub async fn delete_output(&self, canvas: &CanvasId, output: &OutputId) -> Result<OutputCell, ApiError> {
        self.live(canvas)
            .await?
            .apply(|doc| {
                let removed = doc.delete_output(output)?;
                Ok::<_, ApiError>((
                    removed,
                    vec![EventBody::OutputDeleted {
                        output_id: output.clone(),
                    }],
                ))
            })
            .await
    }

    /// Reserves the canvas for one agent task; `None` if one is running.
    pub fn claim_agent(&self, canvas: &CanvasId) -> Option<AgentSlot> {
        let mut running = self.inner.agents.lock().unwrap();
        if !running.insert(canvas.clone()) {
            return None;
        }
        Some(AgentSlot {
            state: self.clone(),
            canvas: canvas.clone(),
        })
    }

    /// Signals long-lived responses (event streams) to finish.
    pub fn begin_close(&self) {
        self.inner.closing.send_replace(true);
    }

    /// Resolves once [`AppState::begin_close`] has been called.
    pub async fn closed(&self) {
        let mut rx = self.inner.closing.subscribe();
        let _ = rx.wait_for(|closing| *closing).await;
    }

    /// Saves every open canvas and stops all sessions.
    pub async fn shutdown(&self) {
        self.inner.workspace.flush_all().await;
        self.inner.orchestrator.shutdown_all().await;
    }
}
