use std::path::Path;
use std::process::ExitCode;

use canvas_core::codec::FormatError;
use serde_json::json;

use crate::{format_of, Format};

pub fn validate(path: &Path, as_json: bool) -> ExitCode {
    let problems: Result<(), (String, Vec<String>)> = match std::fs::read(path) {
        Err(e) => Err(("io".into(), vec![format!("{}: {e}", path.display())])),
        Ok(bytes) => {
            let parsed = match format_of(path) {
                Some(Format::Notebook) => canvas_core::codec::parse_ipynb(&bytes),
                _ => canvas_core::codec::parse_2dntb(&bytes),
            };
            match parsed {
                Ok(_) => Ok(()),
                Err(FormatError::Invariant(violations)) => Err((
                    "invariant-violation".into(),
                    violations.iter().map(ToString::to_string).collect(),
                )),
                Err(e) => Err((e.code().into(), vec![e.to_string()])),
            }
        }
    };
    match problems {
        Ok(()) => {
            if as_json {
                println!("{}", json!({"ok": true, "file": path, "errors": []}));
            } else {
                println!("OK");
            }
            ExitCode::SUCCESS
        }
        Err((code, lines)) => {
            if as_json {
                println!("{}", json!({"ok": false, "file": path, "code": code, "errors": lines}));
            } else {
                for line in lines {
                    println!("{line}");
                }
            }
            ExitCode::FAILURE
        }
    }
}
