use std::sync::OnceLock;

use jsonschema::Validator;
use serde_json::Value;

const NBFORMAT_4_4: &str = include_str!("../../schema/nbformat.v4.4.schema.json");
const NBFORMAT_4_5: &str = include_str!("../../schema/nbformat.v4.5.schema.json");

fn compile(source: &str) -> Validator {
    let schema: Value = serde_json::from_str(source).expect("vendored schema is valid JSON");
    jsonschema::validator_for(&schema).expect("vendored schema compiles")
}

fn validator(minor: u64) -> &'static Validator {
    static V44: OnceLock<Validator> = OnceLock::new();
    static V45: OnceLock<Validator> = OnceLock::new();
    if minor >= 5 {
        V45.get_or_init(|| compile(NBFORMAT_4_5))
    } else {
        V44.get_or_init(|| compile(NBFORMAT_4_4))
    }
}

/// Validates a notebook against the vendored nbformat 4 schema matching its
/// minor version (4.5 for minor >= 5, 4.4 otherwise).
pub fn validate_nbformat(doc: &Value) -> Result<(), Vec<String>> {
    let minor = doc.get("nbformat_minor").and_then(Value::as_u64).unwrap_or(5);
    let errors: Vec<String> = validator(minor)
        .iter_errors(doc)
        .map(|e| format!("{}: {}", e.instance_path, e))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(errors)
    }
}
