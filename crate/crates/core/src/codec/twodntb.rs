use serde_json::{Map, Value};

use super::FormatError;
use crate::ids::CanvasId;
use crate::model::{Canvas, FORMAT_VERSION};

/// Pretty JSON with lexicographically sorted keys, 2-space indent and a
/// trailing LF.
pub fn canonical_json(value: &Value) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(&sorted(value)).expect("JSON values always serialize");
    bytes.push(b'\n');
    bytes
}

fn sorted(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut out = Map::new();
            for k in keys {
                out.insert(k.clone(), sorted(&map[k]));
            }
            Value::Object(out)
        }
        Value::Array(items) => Value::Array(items.iter().map(sorted).collect()),
        other => other.clone(),
    }
}

pub fn serialize_2dntb(canvas: &Canvas) -> Vec<u8> {
    let doc = serde_json::json!({
        "version": FORMAT_VERSION,
        "canvas": canvas,
    });
    canonical_json(&doc)
}

/// Parses a canvas file. Empty (or whitespace-only) input yields a fresh
/// canvas so that a newly created file becomes usable on first access.
pub fn parse_2dntb(bytes: &[u8]) -> Result<Canvas, FormatError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Canvas::new(CanvasId::from("untitled"), "Untitled"));
    }
    let doc: Value = serde_json::from_slice(bytes)?;
    let Value::Object(mut doc) = doc else {
        return Err(FormatError::Schema("top level must be an object".into()));
    };
    match doc.get("version") {
        Some(Value::String(v)) if v == FORMAT_VERSION => {}
        Some(Value::String(v)) => return Err(FormatError::UnsupportedVersion(v.clone())),
        Some(other) => return Err(FormatError::UnsupportedVersion(other.to_string())),
        None => return Err(FormatError::Schema("missing \"version\"".into())),
    }
    let canvas = doc
        .remove("canvas")
        .ok_or_else(|| FormatError::Schema("missing \"canvas\"".into()))?;
    let canvas: Canvas = serde_json::from_value(canvas).map_err(|e| FormatError::Schema(e.to_string()))?;
    let violations = canvas.violations();
    if !violations.is_empty() {
        return Err(FormatError::Invariant(violations));
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rect;
    use crate::model::{Mime, OutputItem, ProducedBy};
    use crate::ids::SessionId;

    #[test]
    fn empty_canvas_layout() {
        let c = Canvas::new(CanvasId::from("c1"), "Demo");
        let text = String::from_utf8(serialize_2dntb(&c)).unwrap();
        let expected = "{\n  \"canvas\": {\n    \"cells\": {},\n    \"environments\": {},\n    \"format_version\": \"1.0\",\n    \"id\": \"c1\",\n    \"next_output_id\": 0,\n    \"next_seq\": 0,\n    \"outputs\": {},\n    \"title\": \"Demo\"\n  },\n  \"version\": \"1.0\"\n}\n";
        assert_eq!(text, expected);
        assert_eq!(serialize_2dntb(&c), serialize_2dntb(&c.clone()));
    }

    #[test]
    fn zero_bytes_is_fresh_canvas() {
        let c = parse_2dntb(b"").unwrap();
        assert!(c.is_empty());
        assert_eq!(c.next_seq, 0);
    }

    #[test]
    fn error_codes() {
        let e = parse_2dntb(br#"{"version":"9.9","canvas":{}}"#).unwrap_err();
        assert_eq!(e.code(), "unsupported-version");
        let e = parse_2dntb(b"{\"version\":").unwrap_err();
        assert_eq!(e.code(), "malformed-json");
        let e = parse_2dntb(br#"{"version":"1.0","canvas":{"id":3}}"#).unwrap_err();
        assert_eq!(e.code(), "schema-violation");
    }

    #[test]
    fn double_attachment_is_invariant_error() {
        let mut c = Canvas::new(CanvasId::from("c"), "t");
        let cell = c.create_cell("x", Rect::new(0.0, 0.0, 10.0, 10.0).unwrap()).unwrap();
        let by = ProducedBy {
            session_id: SessionId::from("s"),
            execution_count: 1,
        };
        let out = c
            .attach_or_update_output(&cell.id, vec![OutputItem::new(Mime::TextPlain, "1")], by)
            .unwrap();
        let mut twin = out.clone();
        twin.id = "out-99".into();
        c.outputs.insert(twin.id.clone(), twin);
        let e = parse_2dntb(&serialize_2dntb(&c)).unwrap_err();
        assert_eq!(e.code(), "invariant-violation");
    }

    #[test]
    fn png_round_trip_bytes() {
        // 1x1 transparent PNG
        const PNG: &str = "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg==";
        let mut c = Canvas::new(CanvasId::from("c"), "t");
        let cell = c.create_cell("plot()", Rect::new(0.0, 0.0, 10.0, 10.0).unwrap()).unwrap();
        let by = ProducedBy {
            session_id: SessionId::from("s"),
            execution_count: 1,
        };
        c.attach_or_update_output(&cell.id, vec![OutputItem::new(Mime::ImagePng, PNG)], by)
            .unwrap();
        let bytes = serialize_2dntb(&c);
        assert!(String::from_utf8_lossy(&bytes).contains(PNG));
        let back = parse_2dntb(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(serialize_2dntb(&back), bytes);
    }
}
