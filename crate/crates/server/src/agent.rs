//! A scripted agent: given a list of code steps it claims free space on the
//! canvas, forks a dedicated environment there, and runs one cell per step
//! inside it. It only uses the same operations the HTTP API exposes.

use canvas_core::events::ExecutionStatus;
use canvas_core::model::Mime;
use canvas_core::{Canvas, CanvasId, CellId, EnvId, Rect};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::ApiError;
use crate::service::{AppState, NewCell, NewEnvironment};

pub const AGENT_CELL_WIDTH: f64 = 480.0;
pub const AGENT_CELL_HEIGHT: f64 = 80.0;
pub const AGENT_CELL_GAP: f64 = 56.0;
pub const AGENT_PADDING: f64 = 32.0;
pub const PLACEMENT_MARGIN: f64 = 64.0;
pub const AGENT_ENV_COLOR: &str = "#BF80FF40";

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTask {
    pub name: String,
    pub steps: Vec<String>,
    #[serde(default = "default_true")]
    pub stop_on_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentStatus {
    Completed,
    /// 1-based index of the failing step.
    FailedAtStep(usize),
}

impl Serialize for AgentStatus {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AgentStatus::Completed => s.serialize_str("completed"),
            AgentStatus::FailedAtStep(k) => s.serialize_str(&format!("failed-at-step-{k}")),
        }
    }
}

impl<'de> Deserialize<'de> for AgentStatus {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "completed" {
            return Ok(AgentStatus::Completed);
        }
        s.strip_prefix("failed-at-step-")
            .and_then(|k| k.parse().ok())
            .map(AgentStatus::FailedAtStep)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown agent status {s:?}")))
    }
}

/// What one step produced. Timing is left out so that reports of identical
/// runs compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSummary {
    pub cell_id: CellId,
    pub status: ExecutionStatus,
    pub execution_count: u32,
    pub result_repr: Option<String>,
    pub stdout: String,
    pub stderr: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub task: String,
    pub env_id: EnvId,
    pub region: Rect,
    pub cell_ids: Vec<CellId>,
    pub steps: Vec<StepSummary>,
    pub status: AgentStatus,
    pub warnings: Vec<String>,
}

/// Region size for `n` stacked steps, padding included.
pub fn region_size(steps: usize) -> (f64, f64) {
    let n = steps as f64;
    let width = AGENT_CELL_WIDTH + 2.0 * AGENT_PADDING;
    let height = n * AGENT_CELL_HEIGHT + (n - 1.0).max(0.0) * AGENT_CELL_GAP + 2.0 * AGENT_PADDING;
    (width, height)
}

/// Frame of step `i` inside `region`.
pub fn step_frame(region: &Rect, i: usize) -> Rect {
    Rect::new(
        region.left() + AGENT_PADDING,
        region.top() + AGENT_PADDING + i as f64 * (AGENT_CELL_HEIGHT + AGENT_CELL_GAP),
        AGENT_CELL_WIDTH,
        AGENT_CELL_HEIGHT,
    )
    .expect("agent cell sizes are positive")
}

/// A `width`×`height` rect clear of every existing rect: right of the
/// content's bounding box by a margin, aligned with its top. An empty
/// canvas yields the origin.
pub fn free_region(canvas: &Canvas, width: f64, height: f64) -> Result<Rect, ApiError> {
    let rect = match canvas.content_bounds() {
        None => Rect::new(0.0, 0.0, width, height),
        Some((_, top, right, _)) => Rect::new(right + PLACEMENT_MARGIN, top, width, height),
    };
    rect.map_err(|e| ApiError::invalid(e.to_string()))
}

/// Where the agent puts its environment. An empty canvas counts as content
/// at the origin, so the region keeps the usual margin from it.
pub fn agent_region(canvas: &Canvas, steps: usize) -> Result<Rect, ApiError> {
    let (width, height) = region_size(steps);
    if canvas.content_bounds().is_none() {
        return Rect::new(PLACEMENT_MARGIN, 0.0, width, height).map_err(|e| ApiError::invalid(e.to_string()));
    }
    free_region(canvas, width, height)
}

/// Runs a task to completion. Fails with 409 if another task is running on
/// the same canvas.
pub async fn run_task(state: &AppState, canvas: &CanvasId, task: AgentTask) -> Result<AgentReport, ApiError> {
    if task.steps.is_empty() {
        return Err(ApiError::invalid("an agent task needs at least one step"));
    }
    let live = state.live(canvas).await?;
    let _slot = state
        .claim_agent(canvas)
        .ok_or_else(|| ApiError::conflict("agent-busy", format!("an agent task is already running on {canvas}")))?;

    let region = agent_region(&live.snapshot().await, task.steps.len())?;
    let created = state
        .create_environment(
            canvas,
            NewEnvironment {
                region,
                color: Some(AGENT_ENV_COLOR.to_owned()),
            },
        )
        .await?;
    let env_id = created.environment.id.clone();

    let mut cell_ids = Vec::new();
    let mut steps = Vec::new();
    let mut status = AgentStatus::Completed;
    for (i, code) in task.steps.iter().enumerate() {
        let cell = state
            .create_cell(
                canvas,
                NewCell {
                    source: code.clone(),
                    frame: step_frame(&region, i),
                },
            )
            .await?;
        cell_ids.push(cell.id.clone());
        let result = state.execute_cell(canvas, &cell.id).await?;
        let stderr = result
            .bundle
            .iter()
            .filter(|item| item.mime == Mime::Stderr)
            .map(|item| item.data.as_str())
            .collect();
        steps.push(StepSummary {
            cell_id: cell.id,
            status: result.status,
            execution_count: result.execution_count,
            result_repr: result.text().map(str::to_owned),
            stdout: result.stdout(),
            stderr,
        });
        if result.status == ExecutionStatus::Error {
            if matches!(status, AgentStatus::Completed) {
                status = AgentStatus::FailedAtStep(i + 1);
            }
            if task.stop_on_error {
                break;
            }
        }
    }

    Ok(AgentReport {
        task: task.name,
        env_id,
        region,
        cell_ids,
        steps,
        status,
        warnings: created.warnings,
    })
}
