//! Interpreter worker processes and the connection used to talk to them.

use std::collections::VecDeque;
use std::ffi::OsString;
use std::process::Stdio;
use std::time::Duration;

use canvas_core::protocol::{
    decode_frame, encode_frame, parse_ready_line, ExecutePayload, FrameError, HandshakeError, PingPayload,
    RequestOp, RestorePayload, SnapshotPayload, WorkerRequest, WorkerResponse, MAX_FRAME_BYTES,
};
use thiserror::Error;
use tokio::io::{AsyncBufRead, AsyncBufReadExt, AsyncReadExt, AsyncWrite, AsyncWriteExt, BufReader};
use tokio::process::{Child, ChildStdin, ChildStdout, Command};

/// Source of the bundled Python worker.
pub const WORKER_SCRIPT: &str = include_str!("../worker/canvas_worker.py");

pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error)]
pub enum WorkerError {
    #[error("failed to spawn worker `{program}`: {source}")]
    Spawn {
        program: String,
        source: std::io::Error,
    },
    #[error("worker handshake failed: {0}")]
    Handshake(#[from] HandshakeError),
    #[error("worker I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("worker closed its output stream")]
    Closed,
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("worker rejected {op}: {message}")]
    Rejected { op: &'static str, message: String },
}

/// How to launch a worker process.
#[derive(Debug, Clone)]
pub struct WorkerCommand {
    pub program: OsString,
    pub args: Vec<OsString>,
}

impl WorkerCommand {
    /// The bundled Python worker. `CANVAS_PYTHON` overrides the interpreter.
    pub fn python() -> Self {
        let program = std::env::var_os("CANVAS_PYTHON").unwrap_or_else(|| "python3".into());
        Self {
            program,
            args: vec!["-u".into(), "-c".into(), WORKER_SCRIPT.into()],
        }
    }

    pub fn new(program: impl Into<OsString>, args: impl IntoIterator<Item = impl Into<OsString>>) -> Self {
        Self {
            program: program.into(),
            args: args.into_iter().map(Into::into).collect(),
        }
    }
}

/// Reads one LF-terminated frame, refusing lines longer than the frame cap.
/// Returns `None` on a clean end of stream.
pub async fn read_frame<R: AsyncBufRead + Unpin>(reader: &mut R) -> Result<Option<Vec<u8>>, WorkerError> {
    let mut line = Vec::new();
    let limit = MAX_FRAME_BYTES as u64 + 1;
    let n = (&mut *reader).take(limit).read_until(b'\n', &mut line).await?;
    if n == 0 {
        return Ok(None);
    }
    if line.len() > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(line.len()).into());
    }
    if line.last() != Some(&b'\n') {
        return Err(WorkerError::Closed);
    }
    Ok(Some(line))
}

/// Waits for the worker's `{"ready": ...}` line.
pub async fn handshake<R: AsyncBufRead + Unpin>(reader: &mut R, timeout: Duration) -> Result<String, HandshakeError> {
    let mut line = String::new();
    match tokio::time::timeout(timeout, reader.read_line(&mut line)).await {
        Err(_) => Err(HandshakeError::Timeout(timeout)),
        Ok(Err(_)) | Ok(Ok(0)) => Err(HandshakeError::Closed),
        Ok(Ok(_)) => parse_ready_line(&line),
    }
}

/// Request/response pairing over any byte stream pair. Requests may be
/// pipelined; responses must come back in request order.
pub struct Connection<R, W> {
    reader: R,
    writer: W,
    next_id: u64,
    in_flight: VecDeque<(u64, &'static str)>,
}

impl<R: AsyncBufRead + Unpin, W: AsyncWrite + Unpin> Connection<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            next_id: 1,
            in_flight: VecDeque::new(),
        }
    }

    /// Writes a request and returns its id.
    pub async fn send(&mut self, op: RequestOp) -> Result<u64, WorkerError> {
        let id = self.next_id;
        self.next_id += 1;
        let name = op.name();
        let frame = encode_frame(&WorkerRequest { id, op });
        self.writer.write_all(&frame).await?;
        self.writer.flush().await?;
        self.in_flight.push_back((id, name));
        Ok(id)
    }

    /// Reads the response to the oldest outstanding request.
    pub async fn recv(&mut self) -> Result<WorkerResponse, WorkerError> {
        let (expected, op) = self
            .in_flight
            .pop_front()
            .ok_or_else(|| WorkerError::Protocol("response read with no request in flight".into()))?;
        let frame = read_frame(&mut self.reader).await?.ok_or(WorkerError::Closed)?;
        let response: WorkerResponse = decode_frame(&frame)?;
        if response.id != expected {
            return Err(WorkerError::Protocol(format!(
                "expected response to {op} #{expected}, got #{}",
                response.id
            )));
        }
        Ok(response)
    }

    pub async fn call(&mut self, op: RequestOp) -> Result<WorkerResponse, WorkerError> {
        self.send(op).await?;
        self.recv().await
    }

    /// Runs code. `Ok((false, payload))` is a user-level error, not a
    /// protocol failure.
    pub async fn execute(&mut self, code: &str) -> Result<(bool, ExecutePayload), WorkerError> {
        let resp = self.call(RequestOp::Execute { code: code.to_owned() }).await?;
        Ok((resp.ok, resp.payload_as()?))
    }

    pub async fn snapshot(&mut self) -> Result<SnapshotPayload, WorkerError> {
        let resp = self.call(RequestOp::Snapshot {}).await?;
        if !resp.ok {
            return Err(rejected("snapshot", &resp));
        }
        Ok(resp.payload_as()?)
    }

    pub async fn restore(&mut self, blob: &str) -> Result<RestorePayload, WorkerError> {
        let resp = self.call(RequestOp::Restore { blob: blob.to_owned() }).await?;
        if !resp.ok {
            return Err(rejected("restore", &resp));
        }
        Ok(resp.payload_as()?)
    }

    pub async fn ping(&mut self) -> Result<String, WorkerError> {
        let resp = self.call(RequestOp::Ping {}).await?;
        Ok(resp.payload_as::<PingPayload>()?.protocol)
    }

    pub fn writer_mut(&mut self) -> &mut W {
        &mut self.writer
    }
}

fn rejected(op: &'static str, resp: &WorkerResponse) -> WorkerError {
    let message = resp
        .payload
        .pointer("/error/message")
        .and_then(|m| m.as_str())
        .unwrap_or("no details")
        .to_owned();
    WorkerError::Rejected { op, message }
}

/// A spawned worker process with a completed handshake.
pub struct WorkerProcess {
    child: Child,
    conn: Connection<BufReader<ChildStdout>, ChildStdin>,
}

impl WorkerProcess {
    pub async fn spawn(command: &WorkerCommand, handshake_timeout: Duration) -> Result<Self, WorkerError> {
        let mut child = Command::new(&command.program)
            .args(&command.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .kill_on_drop(true)
            .spawn()
            .map_err(|source| WorkerError::Spawn {
                program: command.program.to_string_lossy().into_owned(),
                source,
            })?;
        let stdin = child.stdin.take().expect("stdin piped");
        let stdout = child.stdout.take().expect("stdout piped");
        if let Some(stderr) = child.stderr.take() {
            let pid = child.id();
            tokio::spawn(async move {
                let mut lines = BufReader::new(stderr).lines();
                while let Ok(Some(line)) = lines.next_line().await {
                    tracing::debug!(pid, "worker stderr: {line}");
                }
            });
        }
        let mut reader = BufReader::new(stdout);
        if let Err(e) = handshake(&mut reader, handshake_timeout).await {
            let _ = child.start_kill();
            return Err(e.into());
        }
        Ok(Self {
            child,
            conn: Connection::new(reader, stdin),
        })
    }

    pub fn pid(&self) -> Option<u32> {
        self.child.id()
    }

    pub fn connection(&mut self) -> &mut Connection<BufReader<ChildStdout>, ChildStdin> {
        &mut self.conn
    }

    /// Asks the worker to exit, killing it if it has not done so within
    /// `grace`.
    pub async fn shutdown(mut self, grace: Duration) {
        let _ = tokio::time::timeout(grace, self.conn.send(RequestOp::Shutdown {})).await;
        match tokio::time::timeout(grace, self.child.wait()).await {
            Ok(_) => {}
            Err(_) => {
                let _ = self.child.kill().await;
            }
        }
    }

    pub async fn kill(mut self) {
        let _ = self.child.kill().await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use tokio::io::duplex;

    #[tokio::test]
    async fn handshake_variants() {
        let mut ok: &[u8] = b"{\"ready\":\"1\"}\n";
        assert_eq!(handshake(&mut ok, HANDSHAKE_TIMEOUT).await.unwrap(), "1");

        let mut garbage: &[u8] = b"Python 3.10\n";
        assert!(matches!(
            handshake(&mut garbage, HANDSHAKE_TIMEOUT).await,
            Err(HandshakeError::Garbage(_))
        ));

        let mut closed: &[u8] = b"";
        assert_eq!(handshake(&mut closed, HANDSHAKE_TIMEOUT).await, Err(HandshakeError::Closed));
    }

    #[tokio::test]
    async fn handshake_times_out() {
        let (_keep_open, silent) = duplex(64);
        let mut reader = BufReader::new(silent);
        let err = handshake(&mut reader, Duration::from_millis(50)).await.unwrap_err();
        assert_eq!(err, HandshakeError::Timeout(Duration::from_millis(50)));
    }

    #[tokio::test]
    async fn mismatched_response_id_is_protocol_error() {
        let (client_end, mut worker_end) = duplex(4096);
        let (read_half, write_half) = tokio::io::split(client_end);
        let mut conn = Connection::new(BufReader::new(read_half), write_half);
        conn.send(RequestOp::Ping {}).await.unwrap();
        worker_end
            .write_all(b"{\"id\":5,\"ok\":true,\"payload\":{\"protocol\":\"1\"}}\n")
            .await
            .unwrap();
        assert!(matches!(conn.recv().await, Err(WorkerError::Protocol(_))));
    }

    #[tokio::test]
    async fn missing_binary_is_spawn_error() {
        let cmd = WorkerCommand::new("/nonexistent/canvas-worker", Vec::<String>::new());
        assert!(matches!(
            WorkerProcess::spawn(&cmd, HANDSHAKE_TIMEOUT).await,
            Err(WorkerError::Spawn { .. })
        ));
    }
}
