//! The in-memory canvas document: cells, output cells and environment
//! regions on an unbounded plane.
//!
//! Everything here is synchronous and execution-agnostic. Callers that share
//! a canvas between threads serialize mutations themselves.

use std::collections::BTreeMap;

use base64::Engine;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bounding_box, Delta, GeometryError, Point, Rect};
use crate::ids::{CanvasId, CellId, EnvId, OutputId, SessionId};

pub const FORMAT_VERSION: &str = "1.0";

/// Vertical distance between a cell's bottom edge and a freshly placed output.
pub const OUTPUT_GAP: f64 = 16.0;
pub const OUTPUT_DEFAULT_HEIGHT: f64 = 120.0;

/// Metadata key marking markdown/raw cells brought in from a notebook.
pub const NON_CODE_KEY: &str = "non-code";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unknown cell {0}")]
    UnknownCell(CellId),
    #[error("unknown output {0}")]
    UnknownOutput(OutputId),
    #[error("unknown environment {0}")]
    UnknownEnvironment(EnvId),
    #[error("output {0} is already detached")]
    AlreadyDetached(OutputId),
    #[error("invalid color {0:?}: expected #RGB, #RRGGBB or #RRGGBBAA")]
    InvalidColor(String),
    #[error("invalid {mime} payload: {reason}")]
    InvalidPayload { mime: Mime, reason: String },
}

impl ModelError {
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            ModelError::UnknownCell(_) | ModelError::UnknownOutput(_) | ModelError::UnknownEnvironment(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Mime {
    #[serde(rename = "stream/stdout")]
    Stdout,
    #[serde(rename = "stream/stderr")]
    Stderr,
    #[serde(rename = "text/plain")]
    TextPlain,
    #[serde(rename = "image/png")]
    ImagePng,
    #[serde(rename = "application/json")]
    Json,
}

impl Mime {
    pub fn as_str(self) -> &'static str {
        match self {
            Mime::Stdout => "stream/stdout",
            Mime::Stderr => "stream/stderr",
            Mime::TextPlain => "text/plain",
            Mime::ImagePng => "image/png",
            Mime::Json => "application/json",
        }
    }
}

impl std::fmt::Display for Mime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputItem {
    pub mime: Mime,
    pub data: String,
}

impl OutputItem {
    pub fn new(mime: Mime, data: impl Into<String>) -> Self {
        Self {
            mime,
            data: data.into(),
        }
    }

    /// PNG payloads must be base64, JSON payloads must parse.
    pub fn validate(&self) -> Result<(), ModelError> {
        match self.mime {
            Mime::ImagePng => base64::engine::general_purpose::STANDARD
                .decode(self.data.as_bytes())
                .map(|_| ())
                .map_err(|e| ModelError::InvalidPayload {
                    mime: self.mime,
                    reason: e.to_string(),
                }),
            Mime::Json => serde_json::from_str::<serde_json::Value>(&self.data)
                .map(|_| ())
                .map_err(|e| ModelError::InvalidPayload {
                    mime: self.mime,
                    reason: e.to_string(),
                }),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub id: CellId,
    pub source: String,
    pub frame: Rect,
    pub created_seq: u64,
    pub execution_count: Option<u32>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl Cell {
    /// Markdown and raw cells imported from notebooks never execute.
    pub fn is_executable(&self) -> bool {
        !self.metadata.contains_key(NON_CODE_KEY)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedBy {
    pub session_id: SessionId,
    pub execution_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputCell {
    pub id: OutputId,
    pub origin_cell_id: CellId,
    pub frame: Rect,
    pub bundle: Vec<OutputItem>,
    pub detached: bool,
    pub produced_by: ProducedBy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub id: EnvId,
    pub region: Rect,
    pub color: String,
    pub created_seq: u64,
    pub session_id: SessionId,
}

/// Where a cell's next execution goes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "env_id")]
pub enum Route {
    Main,
    Environment(EnvId),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub id: CanvasId,
    pub title: String,
    pub cells: BTreeMap<CellId, Cell>,
    pub outputs: BTreeMap<OutputId, OutputCell>,
    pub environments: BTreeMap<EnvId, Environment>,
    pub next_seq: u64,
    /// Counter behind generated output ids; never reused.
    #[serde(default)]
    pub next_output_id: u64,
    pub format_version: String,
}

/// Everything a `move_environment` call relocated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentMove {
    pub environment: Environment,
    pub cells: Vec<Cell>,
    pub outputs: Vec<OutputCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletedCell {
    pub cell: Cell,
    pub removed_output: Option<OutputId>,
}

/// A broken document invariant, reported by [`Canvas::violations`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Violation {
    #[error("{kind} {key} is stored under a different id ({id})")]
    KeyMismatch { kind: &'static str, key: String, id: String },
    #[error("created_seq {seq} is used more than once")]
    DuplicateSeq { seq: u64 },
    #[error("created_seq {seq} is not below next_seq {next_seq}")]
    SeqNotBelowNext { seq: u64, next_seq: u64 },
    #[error("cell {cell} has {count} attached outputs")]
    MultipleAttached { cell: CellId, count: usize },
    #[error("attached output {output} references missing cell {cell}")]
    AttachedOrphan { output: OutputId, cell: CellId },
    #[error("cell {cell} has execution_count 0")]
    ZeroExecutionCount { cell: CellId },
    #[error("output {output}: {reason}")]
    BadPayload { output: OutputId, reason: String },
    #[error("environment {env}: {reason}")]
    BadColor { env: EnvId, reason: String },
}

pub fn validate_color(color: &str) -> Result<(), ModelError> {
    let ok = color
        .strip_prefix('#')
        .is_some_and(|hex| matches!(hex.len(), 3 | 6 | 8) && hex.chars().all(|c| c.is_ascii_hexdigit()));
    if ok {
        Ok(())
    } else {
        Err(ModelError::InvalidColor(color.to_owned()))
    }
}

impl Canvas {
    pub fn new(id: CanvasId, title: impl Into<String>) -> Self {
        Self {
            id,
            title: title.into(),
            cells: BTreeMap::new(),
            outputs: BTreeMap::new(),
            environments: BTreeMap::new(),
            next_seq: 0,
            next_output_id: 0,
            format_version: FORMAT_VERSION.to_owned(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.outputs.is_empty() && self.environments.is_empty()
    }

    fn take_seq(&mut self) -> u64 {
        let seq = self.next_seq;
        self.next_seq += 1;
        seq
    }

    fn fresh_output_id(&mut self) -> OutputId {
        loop {
            let id = OutputId(format!("out-{}", self.next_output_id));
            self.next_output_id += 1;
            if !self.outputs.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn cell(&self, id: &CellId) -> Result<&Cell, ModelError> {
        self.cells.get(id).ok_or_else(|| ModelError::UnknownCell(id.clone()))
    }

    fn cell_mut(&mut self, id: &CellId) -> Result<&mut Cell, ModelError> {
        self.cells.get_mut(id).ok_or_else(|| ModelError::UnknownCell(id.clone()))
    }

    pub fn output(&self, id: &OutputId) -> Result<&OutputCell, ModelError> {
        self.outputs.get(id).ok_or_else(|| ModelError::UnknownOutput(id.clone()))
    }

    pub fn environment(&self, id: &EnvId) -> Result<&Environment, ModelError> {
        self.environments
            .get(id)
            .ok_or_else(|| ModelError::UnknownEnvironment(id.clone()))
    }

    /// The live (non-detached) output of a cell, if any.
    pub fn attached_output(&self, cell_id: &CellId) -> Option<&OutputCell> {
        self.outputs
            .values()
            .find(|o| !o.detached && &o.origin_cell_id == cell_id)
    }

    pub fn create_cell(&mut self, source: impl Into<String>, frame: Rect) -> Result<Cell, ModelError> {
        // Rect constructors already reject bad frames; re-check values built by hand.
        let frame = Rect::from_origin(Point::new(frame.origin.x, frame.origin.y)?, frame.width, frame.height)?;
        let seq = self.take_seq();
        let mut id = CellId(format!("cell-{seq}"));
        while self.cells.contains_key(&id) {
            id = CellId(format!("{id}-x"));
        }
        let cell = Cell {
            id: id.clone(),
            source: source.into(),
            frame,
            created_seq: seq,
            execution_count: None,
            metadata: BTreeMap::new(),
        };
        self.cells.insert(id, cell.clone());
        Ok(cell)
    }

    pub fn set_cell_source(&mut self, id: &CellId, source: impl Into<String>) -> Result<Cell, ModelError> {
        let cell = self.cell_mut(id)?;
        cell.source = source.into();
        Ok(cell.clone())
    }

    /// Replaces origin and size; the attached output stays where it is.
    pub fn set_cell_frame(&mut self, id: &CellId, frame: Rect) -> Result<Cell, ModelError> {
        let frame = Rect::from_origin(Point::new(frame.origin.x, frame.origin.y)?, frame.width, frame.height)?;
        let cell = self.cell_mut(id)?;
        cell.frame = frame;
        Ok(cell.clone())
    }

    pub fn move_cell(&mut self, id: &CellId, to: Point) -> Result<Cell, ModelError> {
        let to = Point::new(to.x, to.y)?;
        let cell = self.cell_mut(id)?;
        cell.frame.origin = to;
        Ok(cell.clone())
    }

    pub fn set_execution_count(&mut self, id: &CellId, count: u32) -> Result<Cell, ModelError> {
        let cell = self.cell_mut(id)?;
        cell.execution_count = Some(count);
        Ok(cell.clone())
    }

    /// Environment containing `p`; the most recently created one wins on overlap.
    pub fn route_point(&self, p: Point) -> Route {
        self.environments
            .values()
            .filter(|env| env.region.contains(p))
            .max_by_key(|env| env.created_seq)
            .map_or(Route::Main, |env| Route::Environment(env.id.clone()))
    }

    pub fn resolve_environment(&self, cell_id: &CellId) -> Result<Route, ModelError> {
        Ok(self.route_point(self.cell(cell_id)?.frame.center()))
    }

    /// Records a new environment region bound to an already forked session.
    /// Existing cells inside the region are left alone.
    pub fn create_environment(
        &mut self,
        region: Rect,
        color: impl Into<String>,
        session_id: SessionId,
    ) -> Result<Environment, ModelError> {
        let region = Rect::from_origin(Point::new(region.origin.x, region.origin.y)?, region.width, region.height)?;
        let color = color.into();
        validate_color(&color)?;
        let seq = self.take_seq();
        let mut id = EnvId(format!("env-{seq}"));
        while self.environments.contains_key(&id) {
            id = EnvId(format!("{id}-x"));
        }
        let env = Environment {
            id: id.clone(),
            region,
            color,
            created_seq: seq,
            session_id,
        };
        self.environments.insert(id, env.clone());
        Ok(env)
    }

    /// Shifts the region and every cell and output whose center lay inside it
    /// before the move.
    pub fn move_environment(&mut self, id: &EnvId, delta: Delta) -> Result<EnvironmentMove, ModelError> {
        let region = self.environment(id)?.region;
        let new_region = region.translated(delta)?;

        let cell_ids: Vec<CellId> = self
            .cells
            .values()
            .filter(|c| region.contains(c.frame.center()))
            .map(|c| c.id.clone())
            .collect();
        let output_ids: Vec<OutputId> = self
            .outputs
            .values()
            .filter(|o| region.contains(o.frame.center()))
            .map(|o| o.id.clone())
            .collect();

        // Compute every new frame first so a non-finite result leaves the canvas untouched.
        let cell_frames = cell_ids
            .iter()
            .map(|cid| self.cells[cid].frame.translated(delta))
            .collect::<Result<Vec<_>, _>>()?;
        let output_frames = output_ids
            .iter()
            .map(|oid| self.outputs[oid].frame.translated(delta))
            .collect::<Result<Vec<_>, _>>()?;

        let env = self.environments.get_mut(id).expect("checked above");
        env.region = new_region;
        let environment = env.clone();

        let mut cells = Vec::with_capacity(cell_ids.len());
        for (cid, frame) in cell_ids.iter().zip(cell_frames) {
            let cell = self.cells.get_mut(cid).expect("collected above");
            cell.frame = frame;
            cells.push(cell.clone());
        }
        let mut outputs = Vec::with_capacity(output_ids.len());
        for (oid, frame) in output_ids.iter().zip(output_frames) {
            let out = self.outputs.get_mut(oid).expect("collected above");
            out.frame = frame;
            outputs.push(out.clone());
        }
        Ok(EnvironmentMove {
            environment,
            cells,
            outputs,
        })
    }

    /// Writes an execution result back. The attached output is updated in
    /// place (id and frame kept); otherwise a new one is placed below the cell.
    pub fn attach_or_update_output(
        &mut self,
        cell_id: &CellId,
        bundle: Vec<OutputItem>,
        produced_by: ProducedBy,
    ) -> Result<OutputCell, ModelError> {
        for item in &bundle {
            item.validate()?;
        }
        let cell_frame = self.cell(cell_id)?.frame;
        let existing = self.attached_output(cell_id).map(|o| o.id.clone());
        if let Some(oid) = existing {
            let out = self.outputs.get_mut(&oid).expect("just found");
            out.bundle = bundle;
            out.produced_by = produced_by;
            return Ok(out.clone());
        }
        let frame = Rect::new(
            cell_frame.left(),
            cell_frame.bottom() + OUTPUT_GAP,
            cell_frame.width,
            OUTPUT_DEFAULT_HEIGHT,
        )?;
        let id = self.fresh_output_id();
        let out = OutputCell {
            id: id.clone(),
            origin_cell_id: cell_id.clone(),
            frame,
            bundle,
            detached: false,
            produced_by,
        };
        self.outputs.insert(id, out.clone());
        Ok(out)
    }

    /// Freezes an output; the origin cell's next execution gets a fresh one.
    pub fn detach_output(&mut self, id: &OutputId) -> Result<OutputCell, ModelError> {
        let out = self
            .outputs
            .get_mut(id)
            .ok_or_else(|| ModelError::UnknownOutput(id.clone()))?;
        if out.detached {
            return Err(ModelError::AlreadyDetached(id.clone()));
        }
        out.detached = true;
        Ok(out.clone())
    }

    pub fn move_output(&mut self, id: &OutputId, to: Point) -> Result<OutputCell, ModelError> {
        let to = Point::new(to.x, to.y)?;
        let out = self
            .outputs
            .get_mut(id)
            .ok_or_else(|| ModelError::UnknownOutput(id.clone()))?;
        out.frame.origin = to;
        Ok(out.clone())
    }

    /// Removes the cell and its attached output. Detached outputs survive.
    pub fn delete_cell(&mut self, id: &CellId) -> Result<DeletedCell, ModelError> {
        let cell = self
            .cells
            .remove(id)
            .ok_or_else(|| ModelError::UnknownCell(id.clone()))?;
        let attached = self
            .outputs
            .values()
            .find(|o| !o.detached && &o.origin_cell_id == id)
            .map(|o| o.id.clone());
        if let Some(oid) = &attached {
            self.outputs.remove(oid);
        }
        Ok(DeletedCell {
            cell,
            removed_output: attached,
        })
    }

    pub fn delete_output(&mut self, id: &OutputId) -> Result<OutputCell, ModelError> {
        self.outputs
            .remove(id)
            .ok_or_else(|| ModelError::UnknownOutput(id.clone()))
    }

    /// Removes only the region; contained cells stay where they are.
    pub fn delete_environment(&mut self, id: &EnvId) -> Result<Environment, ModelError> {
        self.environments
            .remove(id)
            .ok_or_else(|| ModelError::UnknownEnvironment(id.clone()))
    }

    /// Frames of every cell, output and environment region.
    pub fn all_rects(&self) -> impl Iterator<Item = &Rect> {
        self.cells
            .values()
            .map(|c| &c.frame)
            .chain(self.outputs.values().map(|o| &o.frame))
            .chain(self.environments.values().map(|e| &e.region))
    }

    pub fn content_bounds(&self) -> Option<(f64, f64, f64, f64)> {
        bounding_box(self.all_rects())
    }

    /// Cells in creation order.
    pub fn cells_in_creation_order(&self) -> Vec<&Cell> {
        let mut cells: Vec<&Cell> = self.cells.values().collect();
        cells.sort_by_key(|c| c.created_seq);
        cells
    }

    /// Every broken invariant; empty means the document is consistent.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seqs = BTreeMap::<u64, usize>::new();

        for (key, cell) in &self.cells {
            if key != &cell.id {
                out.push(Violation::KeyMismatch {
                    kind: "cell",
                    key: key.to_string(),
                    id: cell.id.to_string(),
                });
            }
            *seqs.entry(cell.created_seq).or_default() += 1;
            if cell.execution_count == Some(0) {
                out.push(Violation::ZeroExecutionCount { cell: cell.id.clone() });
            }
        }
        for (key, env) in &self.environments {
            if key != &env.id {
                out.push(Violation::KeyMismatch {
                    kind: "environment",
                    key: key.to_string(),
                    id: env.id.to_string(),
                });
            }
            *seqs.entry(env.created_seq).or_default() += 1;
            if let Err(e) = validate_color(&env.color) {
                out.push(Violation::BadColor {
                    env: env.id.clone(),
                    reason: e.to_string(),
                });
            }
        }
        for (&seq, &count) in &seqs {
            if count > 1 {
                out.push(Violation::DuplicateSeq { seq });
            }
            if seq >= self.next_seq {
                out.push(Violation::SeqNotBelowNext {
                    seq,
                    next_seq: self.next_seq,
                });
            }
        }

        let mut attached = BTreeMap::<&CellId, usize>::new();
        for (key, o) in &self.outputs {
            if key != &o.id {
                out.push(Violation::KeyMismatch {
                    kind: "output",
                    key: key.to_string(),
                    id: o.id.to_string(),
                });
            }
            if !o.detached {
                *attached.entry(&o.origin_cell_id).or_default() += 1;
                if !self.cells.contains_key(&o.origin_cell_id) {
                    out.push(Violation::AttachedOrphan {
                        output: o.id.clone(),
                        cell: o.origin_cell_id.clone(),
                    });
                }
            }
            for item in &o.bundle {
                if let Err(e) = item.validate() {
                    out.push(Violation::BadPayload {
                        output: o.id.clone(),
                        reason: e.to_string(),
                    });
                }
            }
        }
        for (cell, count) in attached {
            if count > 1 {
                out.push(Violation::MultipleAttached {
                    cell: cell.clone(),
                    count,
                });
            }
        }
        out
    }
}
