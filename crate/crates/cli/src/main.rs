//! `canvas`: run the canvas service, convert between `.2dntb` and `.ipynb`,
//! execute a canvas headlessly, or check a file.

mod convert;
mod run;
mod serve;
mod validate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "canvas", version, about = "Computational canvas tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the HTTP API over a workspace directory of `.2dntb` files.
    Serve(serve::ServeArgs),
    /// Convert between `.2dntb` and `.ipynb`; direction follows the extensions.
    Convert {
        input: PathBuf,
        output: PathBuf,
    },
    /// Execute every code cell in creation order.
    Run(run::RunArgs),
    /// Check that a file parses and satisfies the canvas invariants.
    Validate {
        file: PathBuf,
        /// Print a JSON report instead of text.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Serve(args) => serve::serve(args),
        Command::Convert { input, output } => convert::convert(&input, &output),
        Command::Run(args) => run::run(args),
        Command::Validate { file, json } => validate::validate(&file, json),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Canvas,
    Notebook,
}

fn format_of(path: &std::path::Path) -> Option<Format> {
    match path.extension()?.to_str()? {
        "2dntb" => Some(Format::Canvas),
        "ipynb" => Some(Format::Notebook),
        _ => None,
    }
}

fn read_canvas(path: &std::path::Path) -> Result<canvas_core::Canvas, String> {
    let bytes = std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let parsed = match format_of(path) {
        Some(Format::Notebook) => canvas_core::codec::parse_ipynb(&bytes),
        _ => canvas_core::codec::parse_2dntb(&bytes),
    };
    parsed.map_err(|e| format!("{}: {e}", path.display()))
}

fn write_canvas(path: &std::path::Path, canvas: &canvas_core::Canvas) -> Result<Vec<String>, String> {
    let (bytes, warnings) = match format_of(path) {
        Some(Format::Notebook) => {
            let export = canvas_core::codec::export_ipynb(canvas);
            let mut bytes = serde_json::to_vec_pretty(&export.notebook).map_err(|e| e.to_string())?;
            bytes.push(b'\n');
            (bytes, export.warnings)
        }
        _ => (canvas_core::codec::serialize_2dntb(canvas), Vec::new()),
    };
    canvas_server::workspace::write_atomic(path, &bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(warnings)
}
