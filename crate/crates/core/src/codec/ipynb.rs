//! Conversion between canvases and nbformat 4.5 notebooks.
//!
//! Export emits code cells in creation order. Everything a notebook cannot
//! express natively (frames, sequence numbers, output records, environments)
//! travels in `metadata.canvas`, which lets a canvas survive the round trip
//! exactly. Notebooks without that metadata get a single-column layout.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{validate_nbformat, FormatError};
use crate::geometry::Rect;
use crate::ids::{CanvasId, CellId, OutputId, SessionId};
use crate::model::{
    Canvas, Cell, Environment, Mime, OutputCell, OutputItem, ProducedBy, FORMAT_VERSION, NON_CODE_KEY,
};

pub const PLAIN_CELL_WIDTH: f64 = 480.0;
pub const PLAIN_CELL_HEIGHT: f64 = 80.0;
pub const PLAIN_GAP: f64 = 56.0;

/// Session recorded on outputs that came from a plain notebook.
pub const IMPORTED_SESSION: &str = "imported";

const META_KEY: &str = "canvas";

#[derive(Debug, Clone, PartialEq)]
pub struct IpynbExport {
    pub notebook: Value,
    /// Content that could not be represented, e.g. detached outputs whose
    /// origin cell no longer exists.
    pub warnings: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NotebookMeta {
    id: CanvasId,
    title: String,
    format_version: String,
    next_seq: u64,
    next_output_id: u64,
    environments: Vec<Environment>,
}

#[derive(Serialize, Deserialize)]
struct CellMeta {
    id: CellId,
    frame: Rect,
    created_seq: u64,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
    #[serde(default)]
    outputs: Vec<OutputMeta>,
}

#[derive(Serialize, Deserialize)]
struct OutputMeta {
    id: OutputId,
    frame: Rect,
    detached: bool,
    produced_by: ProducedBy,
    mimes: Vec<Mime>,
}

fn notebook_cell_id(cell: &Cell) -> String {
    let id = cell.id.as_str();
    let valid = !id.is_empty()
        && id.len() <= 64
        && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if valid {
        id.to_owned()
    } else {
        format!("cell-{}", cell.created_seq)
    }
}

fn json_output(item: &OutputItem) -> Value {
    let parsed: Value = serde_json::from_str(&item.data).unwrap_or(Value::String(item.data.clone()));
    let compact = serde_json::to_string(&parsed).unwrap_or_default();
    let metadata = if compact == item.data {
        json!({})
    } else {
        json!({ META_KEY: { "raw": item.data } })
    };
    json!({
        "output_type": "display_data",
        "data": { "application/json": parsed },
        "metadata": metadata,
    })
}

fn display_data(mime: &str, data: &str) -> Value {
    json!({
        "output_type": "display_data",
        "data": { mime: data },
        "metadata": {},
    })
}

fn attached_item(item: &OutputItem, execution_count: Option<u32>) -> Value {
    match item.mime {
        Mime::Stdout => json!({"output_type": "stream", "name": "stdout", "text": item.data}),
        Mime::Stderr => json!({"output_type": "stream", "name": "stderr", "text": item.data}),
        Mime::TextPlain => json!({
            "output_type": "execute_result",
            "execution_count": execution_count,
            "data": { "text/plain": item.data },
            "metadata": {},
        }),
        Mime::ImagePng => display_data("image/png", &item.data),
        Mime::Json => json_output(item),
    }
}

fn detached_item(item: &OutputItem) -> Value {
    match item.mime {
        Mime::Stdout | Mime::Stderr | Mime::TextPlain => display_data("text/plain", &item.data),
        Mime::ImagePng => display_data("image/png", &item.data),
        Mime::Json => json_output(item),
    }
}

fn output_meta(out: &OutputCell) -> OutputMeta {
    OutputMeta {
        id: out.id.clone(),
        frame: out.frame,
        detached: out.detached,
        produced_by: out.produced_by.clone(),
        mimes: out.bundle.iter().map(|i| i.mime).collect(),
    }
}

pub fn export_ipynb(canvas: &Canvas) -> IpynbExport {
    let mut warnings = Vec::new();
    let mut cells = Vec::new();

    for cell in canvas.cells_in_creation_order() {
        let mut outputs = Vec::new();
        let mut metas = Vec::new();

        let attached = canvas.attached_output(&cell.id);
        // detached outputs follow the live one, ordered by id
        let detached = canvas
            .outputs
            .values()
            .filter(|o| o.detached && o.origin_cell_id == cell.id);

        let non_code = cell.metadata.get(NON_CODE_KEY);
        if non_code.is_some() {
            for o in attached.into_iter().chain(detached) {
                warnings.push(format!(
                    "output {} of non-code cell {} dropped",
                    o.id, cell.id
                ));
            }
        } else {
            if let Some(out) = attached {
                outputs.extend(out.bundle.iter().map(|i| attached_item(i, cell.execution_count)));
                metas.push(output_meta(out));
            }
            for out in detached {
                outputs.extend(out.bundle.iter().map(detached_item));
                metas.push(output_meta(out));
            }
        }

        let meta = CellMeta {
            id: cell.id.clone(),
            frame: cell.frame,
            created_seq: cell.created_seq,
            metadata: cell.metadata.clone(),
            outputs: metas,
        };
        let metadata = json!({ META_KEY: meta });
        let nb_cell = match non_code.map(String::as_str) {
            Some(kind) => json!({
                "cell_type": if kind == "raw" { "raw" } else { "markdown" },
                "id": notebook_cell_id(cell),
                "metadata": metadata,
                "source": cell.source,
            }),
            None => json!({
                "cell_type": "code",
                "id": notebook_cell_id(cell),
                "metadata": metadata,
                "source": cell.source,
                "execution_count": cell.execution_count,
                "outputs": outputs,
            }),
        };
        cells.push(nb_cell);
    }

    for out in canvas.outputs.values() {
        if out.detached && !canvas.cells.contains_key(&out.origin_cell_id) {
            warnings.push(format!(
                "detached output {} dropped: origin cell {} no longer exists",
                out.id, out.origin_cell_id
            ));
        }
    }

    let mut environments: Vec<Environment> = canvas.environments.values().cloned().collect();
    environments.sort_by_key(|e| e.created_seq);
    let canvas_meta = NotebookMeta {
        id: canvas.id.clone(),
        title: canvas.title.clone(),
        format_version: canvas.format_version.clone(),
        next_seq: canvas.next_seq,
        next_output_id: canvas.next_output_id,
        environments,
    };

    let notebook = json!({
        "nbformat": 4,
        "nbformat_minor": 5,
        "metadata": {
            "kernelspec": {"name": "python3", "display_name": "Python 3", "language": "python"},
            "language_info": {"name": "python"},
            META_KEY: canvas_meta,
        },
        "cells": cells,
    });
    IpynbExport { notebook, warnings }
}

fn multiline(value: Option<&Value>) -> String {
    match value {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Array(parts)) => parts.iter().filter_map(Value::as_str).collect(),
        _ => String::new(),
    }
}

fn schema_err(msg: impl Into<String>) -> FormatError {
    FormatError::Schema(msg.into())
}

/// Rebuilds an item of a known mime from its notebook output.
fn item_from_output(output: &Value, mime: Mime) -> Result<OutputItem, FormatError> {
    let kind = output.get("output_type").and_then(Value::as_str).unwrap_or_default();
    if kind == "stream" {
        return Ok(OutputItem::new(mime, multiline(output.get("text"))));
    }
    let data = output
        .get("data")
        .and_then(Value::as_object)
        .ok_or_else(|| schema_err(format!("{kind} output has no data")))?;
    let item = match mime {
        Mime::Stdout | Mime::Stderr | Mime::TextPlain => {
            OutputItem::new(mime, multiline(data.get("text/plain")))
        }
        Mime::ImagePng => OutputItem::new(mime, multiline(data.get("image/png")).trim().to_owned()),
        Mime::Json => {
            let raw = output
                .pointer("/metadata/canvas/raw")
                .and_then(Value::as_str)
                .map(str::to_owned);
            let value = data.get("application/json").cloned().unwrap_or(Value::Null);
            OutputItem::new(mime, raw.unwrap_or_else(|| value.to_string()))
        }
    };
    Ok(item)
}

/// Best-effort mapping of an arbitrary notebook output to one item.
fn item_from_plain_output(output: &Value) -> Option<OutputItem> {
    match output.get("output_type").and_then(Value::as_str)? {
        "stream" => {
            let mime = if output.get("name").and_then(Value::as_str) == Some("stderr") {
                Mime::Stderr
            } else {
                Mime::Stdout
            };
            Some(OutputItem::new(mime, multiline(output.get("text"))))
        }
        "execute_result" | "display_data" => {
            let data = output.get("data")?.as_object()?;
            if data.contains_key("image/png") {
                item_from_output(output, Mime::ImagePng).ok()
            } else if data.contains_key("application/json") {
                item_from_output(output, Mime::Json).ok()
            } else if data.contains_key("text/plain") {
                item_from_output(output, Mime::TextPlain).ok()
            } else {
                None
            }
        }
        "error" => {
            let ename = output.get("ename").and_then(Value::as_str).unwrap_or("Error");
            let evalue = output.get("evalue").and_then(Value::as_str).unwrap_or("");
            let traceback: Vec<&str> = output
                .get("traceback")
                .and_then(Value::as_array)
                .map(|t| t.iter().filter_map(Value::as_str).collect())
                .unwrap_or_default();
            let mut text = traceback.join("\n");
            if text.is_empty() {
                text = format!("{ename}: {evalue}");
            }
            Some(OutputItem::new(Mime::Stderr, text))
        }
        _ => None,
    }
}

fn plain_frame(index: usize) -> Rect {
    Rect::new(
        0.0,
        index as f64 * (PLAIN_CELL_HEIGHT + PLAIN_GAP),
        PLAIN_CELL_WIDTH,
        PLAIN_CELL_HEIGHT,
    )
    .expect("constant layout is valid")
}

pub fn parse_ipynb(bytes: &[u8]) -> Result<Canvas, FormatError> {
    let doc: Value = serde_json::from_slice(bytes)?;
    import_ipynb(&doc)
}

pub fn import_ipynb(doc: &Value) -> Result<Canvas, FormatError> {
    match doc.get("nbformat") {
        Some(Value::Number(n)) if n.as_u64() == Some(4) => {}
        Some(other) => return Err(FormatError::UnsupportedNbformat(other.to_string())),
        None => return Err(schema_err("missing nbformat")),
    }
    validate_nbformat(doc).map_err(|errs| FormatError::Schema(errs.join("; ")))?;

    let nb_meta: Option<NotebookMeta> = match doc.pointer("/metadata/canvas") {
        Some(v) => Some(
            serde_json::from_value(v.clone())
                .map_err(|e| schema_err(format!("notebook canvas metadata: {e}")))?,
        ),
        None => None,
    };

    let mut canvas = match &nb_meta {
        Some(m) => {
            let mut c = Canvas::new(m.id.clone(), m.title.clone());
            c.format_version = m.format_version.clone();
            c
        }
        None => Canvas::new(CanvasId::from("untitled"), "Untitled"),
    };

    let cells = doc
        .get("cells")
        .and_then(Value::as_array)
        .ok_or_else(|| schema_err("missing cells"))?;

    let mut pending_plain = Vec::new();
    for (index, nb_cell) in cells.iter().enumerate() {
        let cell_type = nb_cell.get("cell_type").and_then(Value::as_str).unwrap_or("code");
        let source = multiline(nb_cell.get("source"));
        let execution_count = nb_cell
            .get("execution_count")
            .and_then(Value::as_u64)
            .filter(|&n| n > 0)
            .map(|n| n as u32);
        let outputs: &[Value] = nb_cell
            .get("outputs")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or_default();

        let meta: Option<CellMeta> = match nb_cell.pointer("/metadata/canvas") {
            Some(v) if nb_meta.is_some() => Some(
                serde_json::from_value(v.clone())
                    .map_err(|e| schema_err(format!("cell {index} canvas metadata: {e}")))?,
            ),
            _ => None,
        };

        let Some(meta) = meta else {
            pending_plain.push((index, cell_type.to_owned(), source, execution_count, outputs));
            continue;
        };

        let cell = Cell {
            id: meta.id.clone(),
            source,
            frame: meta.frame,
            created_seq: meta.created_seq,
            execution_count,
            metadata: meta.metadata,
        };
        let mut rest = outputs;
        for om in meta.outputs {
            if rest.len() < om.mimes.len() {
                return Err(schema_err(format!(
                    "cell {index}: canvas metadata lists more outputs than the notebook has"
                )));
            }
            let (mine, tail) = rest.split_at(om.mimes.len());
            rest = tail;
            let bundle = mine
                .iter()
                .zip(&om.mimes)
                .map(|(o, &mime)| item_from_output(o, mime))
                .collect::<Result<Vec<_>, _>>()?;
            canvas.outputs.insert(
                om.id.clone(),
                OutputCell {
                    id: om.id,
                    origin_cell_id: meta.id.clone(),
                    frame: om.frame,
                    bundle,
                    detached: om.detached,
                    produced_by: om.produced_by,
                },
            );
        }
        canvas.next_seq = canvas.next_seq.max(cell.created_seq + 1);
        canvas.cells.insert(cell.id.clone(), cell);
    }

    if let Some(m) = nb_meta {
        canvas.next_seq = canvas.next_seq.max(m.next_seq);
        canvas.next_output_id = canvas.next_output_id.max(m.next_output_id);
        for env in m.environments {
            canvas.next_seq = canvas.next_seq.max(env.created_seq + 1);
            canvas.environments.insert(env.id.clone(), env);
        }
    }

    // Cells without canvas metadata: column layout, sequence continues after
    // everything restored above.
    for (index, cell_type, source, execution_count, outputs) in pending_plain {
        let cell = canvas
            .create_cell(source, plain_frame(index))
            .map_err(|e| schema_err(e.to_string()))?;
        let id = cell.id.clone();
        let entry = canvas.cells.get_mut(&id).expect("just created");
        if cell_type == "code" {
            entry.execution_count = execution_count;
            let bundle: Vec<OutputItem> = outputs.iter().filter_map(item_from_plain_output).collect();
            if !bundle.is_empty() {
                let produced_by = ProducedBy {
                    session_id: SessionId::from(IMPORTED_SESSION),
                    execution_count: execution_count.unwrap_or(0),
                };
                canvas
                    .attach_or_update_output(&id, bundle, produced_by)
                    .map_err(|e| schema_err(e.to_string()))?;
            }
        } else {
            entry.metadata.insert(NON_CODE_KEY.to_owned(), cell_type);
        }
    }

    if canvas.format_version.is_empty() {
        canvas.format_version = FORMAT_VERSION.to_owned();
    }
    let violations = canvas.violations();
    if !violations.is_empty() {
        return Err(FormatError::Invariant(violations));
    }
    Ok(canvas)
}
