//! Random canvases built by replaying random operation scripts through the
//! model, so every generated document is reachable through the public API.

use base64::Engine;
use canvas_core::model::{Mime, OutputItem, ProducedBy, NON_CODE_KEY};
use canvas_core::{Canvas, CanvasId, Delta, Point, Rect, SessionId};
use proptest::prelude::*;

#[derive(Debug, Clone, Copy)]
pub struct CanvasOptions {
    /// Allow detached outputs whose origin cell was deleted.
    pub allow_orphans: bool,
    /// Allow markdown-style cells.
    pub allow_non_code: bool,
    pub max_ops: usize,
}

impl Default for CanvasOptions {
    fn default() -> Self {
        Self {
            allow_orphans: true,
            allow_non_code: true,
            max_ops: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    CreateCell { frame: Rect, source: String, non_code: bool },
    CreateEnv { region: Rect, color: String, session: String },
    Execute { pick: usize, bundle: Vec<OutputItem>, count: u32, session: String },
    Detach { pick: usize },
    MoveCell { pick: usize, to: Point },
    MoveOutput { pick: usize, to: Point },
    MoveEnv { pick: usize, delta: Delta },
    DeleteCell { pick: usize },
    DeleteOutput { pick: usize },
    DeleteEnv { pick: usize },
}

pub fn coord() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-5000i32..5000).prop_map(f64::from),
        -5000.0f64..5000.0,
    ]
}

pub fn size() -> impl Strategy<Value = f64> {
    prop_oneof![(1u32..800).prop_map(f64::from), 0.5f64..800.0]
}

pub fn rect() -> impl Strategy<Value = Rect> {
    (coord(), coord(), size(), size()).prop_map(|(x, y, w, h)| Rect::new(x, y, w, h).unwrap())
}

pub fn point() -> impl Strategy<Value = Point> {
    (coord(), coord()).prop_map(|(x, y)| Point::new(x, y).unwrap())
}

fn json_text() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        any::<i32>().prop_map(serde_json::Value::from),
        "[a-z]{0,6}".prop_map(serde_json::Value::from),
        any::<bool>().prop_map(serde_json::Value::from),
        Just(serde_json::Value::Null),
    ];
    let value = leaf.prop_recursive(2, 8, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(serde_json::Value::from),
            prop::collection::btree_map("[a-z]{1,4}", inner, 0..4)
                .prop_map(|m| serde_json::Value::Object(m.into_iter().collect())),
        ]
    });
    (value, any::<bool>()).prop_map(|(v, pretty)| {
        if pretty {
            serde_json::to_string_pretty(&v).unwrap()
        } else {
            serde_json::to_string(&v).unwrap()
        }
    })
}

pub fn output_item() -> impl Strategy<Value = OutputItem> {
    prop_oneof![
        any::<String>().prop_map(|s| OutputItem::new(Mime::Stdout, s)),
        any::<String>().prop_map(|s| OutputItem::new(Mime::Stderr, s)),
        any::<String>().prop_map(|s| OutputItem::new(Mime::TextPlain, s)),
        prop::collection::vec(any::<u8>(), 0..64).prop_map(|bytes| OutputItem::new(
            Mime::ImagePng,
            base64::engine::general_purpose::STANDARD.encode(bytes)
        )),
        json_text().prop_map(|s| OutputItem::new(Mime::Json, s)),
    ]
}

fn color() -> impl Strategy<Value = String> {
    prop_oneof![
        "#[0-9a-f]{6}",
        "#[0-9A-F]{3}",
        Just("#BF80FF".to_owned()),
    ]
}

pub fn op(options: CanvasOptions) -> impl Strategy<Value = Op> {
    let allow_non_code = options.allow_non_code;
    prop_oneof![
        4 => (rect(), any::<String>(), any::<bool>()).prop_map(move |(frame, source, nc)| Op::CreateCell {
            frame,
            source,
            non_code: nc && allow_non_code,
        }),
        2 => (rect(), color(), "[a-z0-9:-]{1,12}")
            .prop_map(|(region, color, session)| Op::CreateEnv { region, color, session }),
        4 => (any::<usize>(), prop::collection::vec(output_item(), 0..4), 1u32..1000, "[a-z0-9:-]{1,12}")
            .prop_map(|(pick, bundle, count, session)| Op::Execute { pick, bundle, count, session }),
        1 => any::<usize>().prop_map(|pick| Op::Detach { pick }),
        1 => (any::<usize>(), point()).prop_map(|(pick, to)| Op::MoveCell { pick, to }),
        1 => (any::<usize>(), point()).prop_map(|(pick, to)| Op::MoveOutput { pick, to }),
        1 => (any::<usize>(), coord(), coord())
            .prop_map(|(pick, dx, dy)| Op::MoveEnv { pick, delta: Delta::new(dx, dy) }),
        1 => any::<usize>().prop_map(|pick| Op::DeleteCell { pick }),
        1 => any::<usize>().prop_map(|pick| Op::DeleteOutput { pick }),
        1 => any::<usize>().prop_map(|pick| Op::DeleteEnv { pick }),
    ]
}

fn nth_key<K: Clone, V>(map: &std::collections::BTreeMap<K, V>, pick: usize) -> Option<K> {
    if map.is_empty() {
        None
    } else {
        map.keys().nth(pick % map.len()).cloned()
    }
}

/// Applies one scripted op; ops that do not apply are skipped.
pub fn apply(canvas: &mut Canvas, op: &Op, options: CanvasOptions) {
    match op {
        Op::CreateCell { frame, source, non_code } => {
            let cell = canvas.create_cell(source.clone(), *frame).unwrap();
            if *non_code {
                canvas
                    .cells
                    .get_mut(&cell.id)
                    .unwrap()
                    .metadata
                    .insert(NON_CODE_KEY.to_owned(), "markdown".to_owned());
            }
        }
        Op::CreateEnv { region, color, session } => {
            canvas
                .create_environment(*region, color.clone(), SessionId::new(session.clone()))
                .unwrap();
        }
        Op::Execute { pick, bundle, count, session } => {
            let Some(id) = nth_key(&canvas.cells, *pick) else { return };
            if !canvas.cells[&id].is_executable() {
                return;
            }
            let by = ProducedBy {
                session_id: SessionId::new(session.clone()),
                execution_count: *count,
            };
            canvas.attach_or_update_output(&id, bundle.clone(), by).unwrap();
            canvas.set_execution_count(&id, *count).unwrap();
        }
        Op::Detach { pick } => {
            let live: Vec<_> = canvas.outputs.values().filter(|o| !o.detached).map(|o| o.id.clone()).collect();
            if !live.is_empty() {
                canvas.detach_output(&live[pick % live.len()]).unwrap();
            }
        }
        Op::MoveCell { pick, to } => {
            if let Some(id) = nth_key(&canvas.cells, *pick) {
                canvas.move_cell(&id, *to).unwrap();
            }
        }
        Op::MoveOutput { pick, to } => {
            if let Some(id) = nth_key(&canvas.outputs, *pick) {
                canvas.move_output(&id, *to).unwrap();
            }
        }
        Op::MoveEnv { pick, delta } => {
            if let Some(id) = nth_key(&canvas.environments, *pick) {
                canvas.move_environment(&id, *delta).unwrap();
            }
        }
        Op::DeleteCell { pick } => {
            let Some(id) = nth_key(&canvas.cells, *pick) else { return };
            let has_detached = canvas
                .outputs
                .values()
                .any(|o| o.detached && o.origin_cell_id == id);
            if options.allow_orphans || !has_detached {
                canvas.delete_cell(&id).unwrap();
            }
        }
        Op::DeleteOutput { pick } => {
            if let Some(id) = nth_key(&canvas.outputs, *pick) {
                canvas.delete_output(&id).unwrap();
            }
        }
        Op::DeleteEnv { pick } => {
            if let Some(id) = nth_key(&canvas.environments, *pick) {
                canvas.delete_environment(&id).unwrap();
            }
        }
    }
}

pub fn build(ops: &[Op], options: CanvasOptions) -> Canvas {
    let mut canvas = Canvas::new(CanvasId::from("generated"), "Generated");
    for op in ops {
        apply(&mut canvas, op, options);
    }
    canvas
}

pub fn ops(options: CanvasOptions) -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(op(options), 0..options.max_ops)
}

pub fn canvas(options: CanvasOptions) -> impl Strategy<Value = Canvas> {
    ops(options).prop_map(move |ops| build(&ops, options))
}

/// A canvas of code cells only, spread over the plane in arbitrary order.
pub fn spatial_layout() -> impl Strategy<Value = Canvas> {
    prop::collection::vec((rect(), "[a-z =+0-9]{0,12}"), 0..30).prop_map(|cells| {
        let mut canvas = Canvas::new(CanvasId::from("layout"), "Layout");
        for (frame, source) in cells {
            canvas.create_cell(source, frame).unwrap();
        }
        canvas
    })
}

/// Environments and cells only, dense enough that overlaps are common.
pub fn routing_scene() -> impl Strategy<Value = Canvas> {
    let small_rect = (-400i32..400, -400i32..400, 1i32..600, 1i32..600)
        .prop_map(|(x, y, w, h)| Rect::new(x.into(), y.into(), w.into(), h.into()).unwrap());
    let cell_rect = (-500i32..500, -500i32..500, 1i32..200, 1i32..200)
        .prop_map(|(x, y, w, h)| Rect::new(x.into(), y.into(), w.into(), h.into()).unwrap());
    (
        prop::collection::vec((any::<bool>(), small_rect, cell_rect), 0..24),
        prop::collection::vec(any::<usize>(), 0..4),
    )
        .prop_map(|(items, deletions)| {
            let mut canvas = Canvas::new(CanvasId::from("scene"), "Scene");
            for (i, (is_env, region, frame)) in items.into_iter().enumerate() {
                if is_env {
                    canvas
                        .create_environment(region, "#80BFFF", SessionId::new(format!("s{i}")))
                        .unwrap();
                } else {
                    canvas.create_cell("x", frame).unwrap();
                }
            }
            for pick in deletions {
                if let Some(id) = nth_key(&canvas.environments, pick) {
                    canvas.delete_environment(&id).unwrap();
                }
            }
            canvas
        })
}
