//! File formats: the native `.2dntb` canvas file and Jupyter `.ipynb`.

mod ipynb;
mod schema;
mod twodntb;

use thiserror::Error;

use crate::model::Violation;

pub use ipynb::{export_ipynb, import_ipynb, parse_ipynb, IpynbExport, IMPORTED_SESSION, PLAIN_CELL_HEIGHT, PLAIN_CELL_WIDTH, PLAIN_GAP};
pub use schema::validate_nbformat;
pub use twodntb::{canonical_json, parse_2dntb, serialize_2dntb};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("malformed JSON: {0}")]
    MalformedJson(#[from] serde_json::Error),
    #[error("unsupported canvas file version {0:?}")]
    UnsupportedVersion(String),
    #[error("unsupported notebook format {0}")]
    UnsupportedNbformat(String),
    #[error("document does not match its schema: {0}")]
    Schema(String),
    #[error("document breaks canvas invariants: {}", join_violations(.0))]
    Invariant(Vec<Violation>),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl FormatError {
    /// Stable machine-readable code for each failure class.
    pub fn code(&self) -> &'static str {
        match self {
            FormatError::MalformedJson(_) => "malformed-json",
            FormatError::UnsupportedVersion(_) => "unsupported-version",
            FormatError::UnsupportedNbformat(_) => "unsupported-nbformat",
            FormatError::Schema(_) => "schema-violation",
            FormatError::Invariant(_) => "invariant-violation",
        }
    }
}
