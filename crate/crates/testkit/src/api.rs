//! Random API scripts and a client that drives them over HTTP while
//! applying the same operations to a local model copy.

use canvas_core::model::{OutputItem, ProducedBy};
use canvas_core::{Canvas, CellId, Delta, EnvId, OutputId, Point, Rect, SessionId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::{Client, Method};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
pub struct Api {
    base: String,
    client: Client,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiFailure {
    pub status: u16,
    pub body: Value,
}

impl Api {
    pub fn new(base: impl Into<String>) -> Self {
        Self {
            base: base.into(),
            client: Client::new(),
        }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> Result<Value, ApiFailure> {
        let mut req = self.client.request(method, format!("{}{}", self.base, path));
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.expect("request reaches the server");
        let status = resp.status();
        let bytes = resp.bytes().await.expect("response body");
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        if status.is_success() {
            Ok(value)
        } else {
            Err(ApiFailure {
                status: status.as_u16(),
                body: value,
            })
        }
    }

    /// Like [`Api::call`] but panics on any non-2xx answer.
    pub async fn ok(&self, method: Method, path: &str, body: Option<Value>) -> Value {
        let shown = format!("{method} {path}");
        match self.call(method, path, body).await {
            Ok(v) => v,
            Err(f) => panic!("{shown} -> {}: {}", f.status, f.body),
        }
    }

    pub async fn canvas(&self, id: &str) -> Canvas {
        serde_json::from_value(self.ok(Method::GET, &format!("/canvases/{id}"), None).await).expect("canvas JSON")
    }
}

#[derive(Debug, Clone)]
pub enum ScriptOp {
    CreateCell { frame: Rect, source: String },
    EditSource { pick: usize, source: String },
    MoveCell { pick: usize, to: Point },
    Execute { pick: usize },
    CreateEnv { region: Rect },
    MoveEnv { pick: usize, delta: Delta },
    DeleteEnv { pick: usize },
    Detach { pick: usize },
    MoveOutput { pick: usize, to: Point },
    DeleteOutput { pick: usize },
    DeleteCell { pick: usize },
}

fn source(rng: &mut ChaCha8Rng) -> String {
    let k = rng.random_range(1..10);
    match rng.random_range(0..5) {
        0 | 1 => format!("acc = globals().get('acc', 0) + {k}\nacc"),
        2 => format!("print('step', {k})\nitems = globals().get('items', []) + [{k}]\nitems"),
        3 => "globals().get('acc', 0) * 2".to_owned(),
        _ => format!("{k} / (globals().get('acc', 0) % 2)"),
    }
}

fn grid_rect(rng: &mut ChaCha8Rng, min: i32, max: i32) -> Rect {
    let x = rng.random_range(-400..1400) as f64;
    let y = rng.random_range(-400..1400) as f64;
    let w = rng.random_range(min..max) as f64;
    let h = rng.random_range(min..max) as f64;
    Rect::new(x, y, w, h).unwrap()
}

fn grid_point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.random_range(-400..1400) as f64, rng.random_range(-400..1400) as f64).unwrap()
}

/// A reproducible script of `len` operations. Picks are resolved against
/// the document at the time each op runs.
pub fn script(seed: u64, len: usize) -> Vec<ScriptOp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ops = vec![ScriptOp::CreateCell {
        frame: grid_rect(&mut rng, 40, 200),
        source: source(&mut rng),
    }];
    while ops.len() < len {
        let pick = rng.random_range(0..1000);
        let op = match rng.random_range(0..22) {
            0..=4 => ScriptOp::CreateCell {
                frame: grid_rect(&mut rng, 40, 200),
                source: source(&mut rng),
            },
            5..=9 => ScriptOp::Execute { pick },
            10 => ScriptOp::EditSource {
                pick,
                source: source(&mut rng),
            },
            11 => ScriptOp::MoveCell {
                pick,
                to: grid_point(&mut rng),
            },
            12 | 13 => ScriptOp::CreateEnv {
                region: grid_rect(&mut rng, 200, 900),
            },
            14 => ScriptOp::MoveEnv {
                pick,
                delta: Delta::new(rng.random_range(-300..300) as f64, rng.random_range(-300..300) as f64),
            },
            15 => ScriptOp::DeleteEnv { pick },
            16 | 17 => ScriptOp::Detach { pick },
            18 => ScriptOp::MoveOutput {
                pick,
                to: grid_point(&mut rng),
            },
            19 => ScriptOp::DeleteOutput { pick },
            _ => ScriptOp::DeleteCell { pick },
        };
        ops.push(op);
    }
    ops
}

fn nth<K: Clone, V>(map: &std::collections::BTreeMap<K, V>, pick: usize) -> Option<K> {
    (!map.is_empty()).then(|| map.keys().nth(pick % map.len()).cloned().unwrap())
}

fn decode<T: serde::de::DeserializeOwned>(v: Value) -> T {
    serde_json::from_value(v).expect("response shape")
}

/// Runs one op over HTTP against canvas `id` and applies the equivalent
/// model operation to `mirror`. Ops whose target does not exist are
/// skipped. Returns the API response, if a request was made.
pub async fn step(api: &Api, id: &str, op: &ScriptOp, mirror: &mut Canvas) -> Option<Value> {
    let base = format!("/canvases/{id}");
    match op {
        ScriptOp::CreateCell { frame, source } => {
            let v = api
                .ok(Method::POST, &format!("{base}/cells"), Some(json!({"source": source, "frame": frame})))
                .await;
            mirror.create_cell(source.clone(), *frame).unwrap();
            Some(v)
        }
        ScriptOp::EditSource { pick, source } => {
            let cell: CellId = nth(&mirror.cells, *pick)?;
            let v = api
                .ok(Method::PATCH, &format!("{base}/cells/{cell}"), Some(json!({"source": source})))
                .await;
            mirror.set_cell_source(&cell, source.clone()).unwrap();
            Some(v)
        }
        ScriptOp::MoveCell { pick, to } => {
            let cell: CellId = nth(&mirror.cells, *pick)?;
            let frame = mirror.cells[&cell].frame.with_origin(*to);
            let v = api
                .ok(Method::PATCH, &format!("{base}/cells/{cell}"), Some(json!({"frame": frame})))
                .await;
            mirror.move_cell(&cell, *to).unwrap();
            Some(v)
        }
        ScriptOp::Execute { pick } => {
            let cell: CellId = nth(&mirror.cells, *pick)?;
            let v = api
                .ok(Method::POST, &format!("{base}/cells/{cell}/execute"), None)
                .await;
            let bundle: Vec<OutputItem> = decode(v["bundle"].clone());
            let count = v["execution_count"].as_u64().unwrap() as u32;
            let session: SessionId = decode(v["session_id"].clone());
            mirror.set_execution_count(&cell, count).unwrap();
            mirror
                .attach_or_update_output(
                    &cell,
                    bundle,
                    ProducedBy {
                        session_id: session,
                        execution_count: count,
                    },
                )
                .unwrap();
            Some(v)
        }
        ScriptOp::CreateEnv { region } => {
            let v = api
                .ok(Method::POST, &format!("{base}/environments"), Some(json!({"region": region, "color": "#abcdef"})))
                .await;
            let session: SessionId = decode(v["environment"]["session_id"].clone());
            mirror.create_environment(*region, "#abcdef", session).unwrap();
            Some(v)
        }
        ScriptOp::MoveEnv { pick, delta } => {
            let env: EnvId = nth(&mirror.environments, *pick)?;
            let v = api
                .ok(Method::PATCH, &format!("{base}/environments/{env}"), Some(json!(delta)))
                .await;
            mirror.move_environment(&env, *delta).unwrap();
            Some(v)
        }
        ScriptOp::DeleteEnv { pick } => {
            let env: EnvId = nth(&mirror.environments, *pick)?;
            let v = api.ok(Method::DELETE, &format!("{base}/environments/{env}"), None).await;
            mirror.delete_environment(&env).unwrap();
            Some(v)
        }
        ScriptOp::Detach { pick } => {
            let live: Vec<OutputId> = mirror.outputs.values().filter(|o| !o.detached).map(|o| o.id.clone()).collect();
            if live.is_empty() {
                return None;
            }
            let out = &live[pick % live.len()];
            let v = api.ok(Method::POST, &format!("{base}/outputs/{out}/detach"), None).await;
            mirror.detach_output(out).unwrap();
            Some(v)
        }
        ScriptOp::MoveOutput { pick, to } => {
            let out: OutputId = nth(&mirror.outputs, *pick)?;
            let v = api.ok(Method::PATCH, &format!("{base}/outputs/{out}"), Some(json!(to))).await;
            mirror.move_output(&out, *to).unwrap();
            Some(v)
        }
        ScriptOp::DeleteOutput { pick } => {
            let out: OutputId = nth(&mirror.outputs, *pick)?;
            let v = api.ok(Method::DELETE, &format!("{base}/outputs/{out}"), None).await;
            mirror.delete_output(&out).unwrap();
            Some(v)
        }
        ScriptOp::DeleteCell { pick } => {
            let cell: CellId = nth(&mirror.cells, *pick)?;
            let v = api.ok(Method::DELETE, &format!("{base}/cells/{cell}"), None).await;
            mirror.delete_cell(&cell).unwrap();
            Some(v)
        }
    }
}

/// Runs a whole script; returns the model copy built alongside.
pub async fn drive(api: &Api, id: &str, ops: &[ScriptOp]) -> Canvas {
    let mut mirror = api.canvas(id).await;
    for op in ops {
        step(api, id, op, &mut mirror).await;
    }
    mirror
}

/// Rewrites session ids that embed the canvas id, so documents of
/// different canvases can be compared.
pub fn normalize_sessions(canvas: &Canvas) -> Canvas {
    let mut c = canvas.clone();
    let prefix = format!("{}/", c.id);
    let strip = |s: &SessionId| SessionId::new(s.as_str().strip_prefix(&prefix).unwrap_or(s.as_str()));
    for env in c.environments.values_mut() {
        env.session_id = strip(&env.session_id);
    }
    for out in c.outputs.values_mut() {
        out.produced_by.session_id = strip(&out.produced_by.session_id);
    }
    c
}
