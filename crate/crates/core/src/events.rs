//! Canvas change notifications. Every document mutation is described by one
//! event carrying the full post-mutation entities, so replaying a stream onto
//! an empty canvas reproduces the document.

use serde::{Deserialize, Serialize};

use crate::ids::{CellId, EnvId, OutputId, SessionId};
use crate::model::{Canvas, Cell, Environment, OutputCell};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "kebab-case")]
pub enum EventBody {
    CellCreated {
        cell: Cell,
    },
    CellMoved {
        cell: Cell,
    },
    CellUpdated {
        cell: Cell,
    },
    CellDeleted {
        cell_id: CellId,
        removed_output: Option<OutputId>,
    },
    OutputUpdated {
        output: OutputCell,
    },
    OutputDetached {
        output: OutputCell,
    },
    OutputDeleted {
        output_id: OutputId,
    },
    EnvCreated {
        environment: Environment,
    },
    EnvMoved {
        environment: Environment,
        cells: Vec<Cell>,
        outputs: Vec<OutputCell>,
    },
    EnvDeleted {
        env_id: EnvId,
    },
    /// An environment was rebound to a new session.
    EnvUpdated {
        environment: Environment,
    },
    ExecutionStarted {
        cell_id: CellId,
        session_id: SessionId,
    },
    ExecutionFinished {
        cell_id: CellId,
        session_id: SessionId,
        status: ExecutionStatus,
        execution_count: u32,
    },
    SessionWarning {
        message: String,
        #[serde(default)]
        names: Vec<String>,
    },
    /// The whole document was swapped out (file replaced or reloaded).
    CanvasReplaced {
        canvas: Canvas,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CanvasEvent {
    pub seq: u64,
    #[serde(flatten)]
    pub body: EventBody,
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::CellCreated { .. } => "cell-created",
            EventBody::CellMoved { .. } => "cell-moved",
            EventBody::CellUpdated { .. } => "cell-updated",
            EventBody::CellDeleted { .. } => "cell-deleted",
            EventBody::OutputUpdated { .. } => "output-updated",
            EventBody::OutputDetached { .. } => "output-detached",
            EventBody::OutputDeleted { .. } => "output-deleted",
            EventBody::EnvCreated { .. } => "env-created",
            EventBody::EnvMoved { .. } => "env-moved",
            EventBody::EnvDeleted { .. } => "env-deleted",
            EventBody::EnvUpdated { .. } => "env-updated",
            EventBody::ExecutionStarted { .. } => "execution-started",
            EventBody::ExecutionFinished { .. } => "execution-finished",
            EventBody::SessionWarning { .. } => "session-warning",
            EventBody::CanvasReplaced { .. } => "canvas-replaced",
        }
    }

    /// Applies the document effect of this event to a mirror copy.
    /// Runtime-only events are ignored.
    pub fn apply(&self, mirror: &mut Canvas) {
        match self {
            EventBody::CellCreated { cell } => {
                mirror.next_seq = mirror.next_seq.max(cell.created_seq + 1);
                mirror.cells.insert(cell.id.clone(), cell.clone());
            }
            EventBody::CellMoved { cell } | EventBody::CellUpdated { cell } => {
                mirror.cells.insert(cell.id.clone(), cell.clone());
            }
            EventBody::CellDeleted {
                cell_id,
                removed_output,
            } => {
                mirror.cells.remove(cell_id);
                if let Some(oid) = removed_output {
                    mirror.outputs.remove(oid);
                }
            }
            EventBody::OutputUpdated { output } | EventBody::OutputDetached { output } => {
                if let Some(n) = output
                    .id
                    .as_str()
                    .strip_prefix("out-")
                    .and_then(|n| n.parse::<u64>().ok())
                {
                    mirror.next_output_id = mirror.next_output_id.max(n + 1);
                }
                mirror.outputs.insert(output.id.clone(), output.clone());
            }
            EventBody::OutputDeleted { output_id } => {
                mirror.outputs.remove(output_id);
            }
            EventBody::EnvCreated { environment } => {
                mirror.next_seq = mirror.next_seq.max(environment.created_seq + 1);
                mirror
                    .environments
                    .insert(environment.id.clone(), environment.clone());
            }
            EventBody::EnvMoved {
                environment,
                cells,
                outputs,
            } => {
                mirror
                    .environments
                    .insert(environment.id.clone(), environment.clone());
                for c in cells {
                    mirror.cells.insert(c.id.clone(), c.clone());
                }
                for o in outputs {
                    mirror.outputs.insert(o.id.clone(), o.clone());
                }
            }
            EventBody::EnvDeleted { env_id } => {
                mirror.environments.remove(env_id);
            }
            EventBody::EnvUpdated { environment } => {
                mirror
                    .environments
                    .insert(environment.id.clone(), environment.clone());
            }
            EventBody::CanvasReplaced { canvas } => *mirror = canvas.clone(),
            EventBody::ExecutionStarted { .. }
            | EventBody::ExecutionFinished { .. }
            | EventBody::SessionWarning { .. } => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::ids::CanvasId;

    #[test]
    fn wire_shape() {
        let ev = CanvasEvent {
            seq: 4,
            body: EventBody::EnvDeleted {
                env_id: EnvId::from("env-1"),
            },
        };
        let json = serde_json::to_value(&ev).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"seq": 4, "kind": "env-deleted", "payload": {"env_id": "env-1"}})
        );
        let back: CanvasEvent = serde_json::from_value(json).unwrap();
        assert_eq!(back, ev);
        assert_eq!(ev.body.kind(), "env-deleted");
    }

    #[test]
    fn replay_rebuilds_document() {
        let mut doc = Canvas::new(CanvasId::from("c"), "t");
        let mut log = Vec::new();
        let cell = doc.create_cell("x", Rect::new(0.0, 0.0, 10.0, 10.0).unwrap()).unwrap();
        log.push(EventBody::CellCreated { cell: cell.clone() });
        let deleted = doc.delete_cell(&cell.id).unwrap();
        log.push(EventBody::CellDeleted {
            cell_id: cell.id,
            removed_output: deleted.removed_output,
        });

        let mut mirror = Canvas::new(CanvasId::from("c"), "t");
        for e in &log {
            e.apply(&mut mirror);
        }
        assert_eq!(mirror, doc);
    }
}
