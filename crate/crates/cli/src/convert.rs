use std::path::Path;
use std::process::ExitCode;

use crate::{format_of, read_canvas, write_canvas};

pub fn convert(input: &Path, output: &Path) -> ExitCode {
    let (Some(from), Some(to)) = (format_of(input), format_of(output)) else {
        eprintln!("canvas convert: both files must end in .2dntb or .ipynb");
        return ExitCode::from(2);
    };
    if from == to {
        eprintln!("canvas convert: input and output have the same format; nothing to convert");
        return ExitCode::from(2);
    }
    let canvas = match read_canvas(input) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("canvas convert: {e}");
            return ExitCode::FAILURE;
        }
    };
    match write_canvas(output, &canvas) {
        Ok(warnings) => {
            for w in warnings {
                eprintln!("warning: {w}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("canvas convert: {e}");
            ExitCode::FAILURE
        }
    }
}
