use std::path::PathBuf;
use std::process::ExitCode;

use canvas_core::events::ExecutionStatus;
use canvas_core::model::Mime;
use canvas_core::{CellId, SessionId};
use canvas_runtime::{LiveCanvas, Orchestrator};
use clap::Args;
use serde::Serialize;

use crate::{read_canvas, write_canvas};

#[derive(Debug, Args)]
pub struct RunArgs {
    file: PathBuf,
    /// Write execution counts and outputs back into FILE.
    #[arg(long)]
    save: bool,
    /// Print a JSON report instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Serialize)]
struct CellRun {
    cell_id: CellId,
    session_id: Option<SessionId>,
    status: ExecutionStatus,
    execution_count: Option<u32>,
    result: Option<String>,
    stdout: String,
    stderr: String,
}

#[derive(Debug, Serialize)]
struct RunReport {
    canvas_id: String,
    cells: Vec<CellRun>,
    errors: usize,
}

pub fn run(args: RunArgs) -> ExitCode {
    let canvas = match read_canvas(&args.file) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("canvas run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("canvas run: {e}");
            return ExitCode::FAILURE;
        }
    };
    let (report, finished) = runtime.block_on(execute_all(canvas));

    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print_table(&report);
    }
    if args.save {
        match write_canvas(&args.file, &finished) {
            Ok(warnings) => {
                for w in warnings {
                    eprintln!("warning: {w}");
                }
            }
            Err(e) => {
                eprintln!("canvas run: {e}");
                return ExitCode::FAILURE;
            }
        }
    }
    if report.errors > 0 {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

/// Runs code cells one at a time in creation order. Routing is resolved per
/// cell, and an environment's session is forked from main when its first
/// cell runs, so it sees everything main executed before that point.
async fn execute_all(canvas: canvas_core::Canvas) -> (RunReport, canvas_core::Canvas) {
    let canvas_id = canvas.id.to_string();
    let order: Vec<CellId> = canvas
        .cells_in_creation_order()
        .into_iter()
        .filter(|c| c.is_executable())
        .map(|c| c.id.clone())
        .collect();
    let live = LiveCanvas::new(canvas);
    let orchestrator = Orchestrator::default();
    let mut cells = Vec::new();
    for id in order {
        let run = match orchestrator.execute_cell(&live, &id).await {
            Ok(r) => {
                let stderr = r
                    .bundle
                    .iter()
                    .filter(|i| i.mime == Mime::Stderr)
                    .map(|i| i.data.as_str())
                    .collect();
                CellRun {
                    cell_id: id,
                    session_id: Some(r.session_id.clone()),
                    status: r.status,
                    execution_count: Some(r.execution_count),
                    result: r.text().map(str::to_owned),
                    stdout: r.stdout(),
                    stderr,
                }
            }
            Err(e) => CellRun {
                cell_id: id,
                session_id: None,
                status: ExecutionStatus::Error,
                execution_count: None,
                result: None,
                stdout: String::new(),
                stderr: e.to_string(),
            },
        };
        cells.push(run);
    }
    orchestrator.shutdown_all().await;
    let errors = cells.iter().filter(|c| c.status == ExecutionStatus::Error).count();
    let finished = live.snapshot().await;
    (
        RunReport {
            canvas_id,
            cells,
            errors,
        },
        finished,
    )
}

fn first_line(s: &str) -> &str {
    s.lines().next().unwrap_or("")
}

fn print_table(report: &RunReport) {
    println!("{:<12} {:<28} {:<6} {:>5}  output", "cell", "session", "status", "count");
    for c in &report.cells {
        let session = c.session_id.as_ref().map(|s| s.to_string()).unwrap_or_else(|| "-".into());
        let status = match c.status {
            ExecutionStatus::Ok => "ok",
            ExecutionStatus::Error => "error",
        };
        let count = c.execution_count.map(|n| n.to_string()).unwrap_or_else(|| "-".into());
        let shown = match (&c.result, c.status) {
            (_, ExecutionStatus::Error) => c.stderr.lines().last().unwrap_or("").to_owned(),
            (Some(r), _) => first_line(r).to_owned(),
            (None, _) => first_line(&c.stdout).to_owned(),
        };
        println!("{:<12} {:<28} {:<6} {:>5}  {}", c.cell_id.to_string(), session, status, count, shown);
    }
    if report.errors > 0 {
        eprintln!("{} of {} cells failed", report.errors, report.cells.len());
    }
}
