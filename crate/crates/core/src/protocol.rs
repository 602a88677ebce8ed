//! Newline-delimited JSON protocol spoken with interpreter workers.
//!
//! A worker announces itself with `{"ready":"1"}` on its first line, then
//! answers each request line with exactly one response line, in order.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::OutputItem;

pub const PROTOCOL_VERSION: &str = "1";

/// Frames larger than this are rejected by the decoder.
pub const MAX_FRAME_BYTES: usize = 64 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("malformed frame: {0}")]
    Malformed(serde_json::Error),
    #[error("frame does not match the message schema: {0}")]
    Schema(serde_json::Error),
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES} byte limit")]
    Oversize(usize),
}

impl From<serde_json::Error> for FrameError {
    fn from(e: serde_json::Error) -> Self {
        match e.classify() {
            serde_json::error::Category::Data => FrameError::Schema(e),
            _ => FrameError::Malformed(e),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum HandshakeError {
    #[error("worker did not announce readiness within {0:?}")]
    Timeout(std::time::Duration),
    #[error("unexpected handshake line: {0:?}")]
    Garbage(String),
    #[error("worker speaks protocol {found:?}, expected {expected:?}")]
    VersionMismatch { found: String, expected: String },
    #[error("worker exited before the handshake")]
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", content = "payload", rename_all = "snake_case")]
pub enum RequestOp {
    Execute { code: String },
    Snapshot {},
    Restore { blob: String },
    Ping {},
    Shutdown {},
}

impl RequestOp {
    pub fn name(&self) -> &'static str {
        match self {
            RequestOp::Execute { .. } => "execute",
            RequestOp::Snapshot {} => "snapshot",
            RequestOp::Restore { .. } => "restore",
            RequestOp::Ping {} => "ping",
            RequestOp::Shutdown {} => "shutdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerRequest {
    pub id: u64,
    #[serde(flatten)]
    pub op: RequestOp,
}

/// A response whose payload shape depends on the request it answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl WorkerResponse {
    pub fn payload_as<T: DeserializeOwned>(&self) -> Result<T, FrameError> {
        Ok(T::deserialize(&self.payload)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub etype: String,
    pub message: String,
    #[serde(default)]
    pub traceback: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ExecutePayload {
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
    #[serde(default)]
    pub result_repr: Option<String>,
    #[serde(default)]
    pub rich: Vec<OutputItem>,
    #[serde(default)]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotPayload {
    pub blob: String,
    #[serde(default)]
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RestorePayload {
    #[serde(default)]
    pub skipped: Vec<String>,
    #[serde(default)]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingPayload {
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Ready {
    ready: String,
}

/// One compact JSON object followed by LF.
pub fn encode_frame<T: Serialize>(message: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec(message).expect("protocol messages always serialize");
    bytes.push(b'\n');
    bytes
}

pub fn decode_frame<T: DeserializeOwned>(frame: &[u8]) -> Result<T, FrameError> {
    if frame.len() > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(frame.len()));
    }
    let line = frame.strip_suffix(b"\n").unwrap_or(frame);
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    Ok(serde_json::from_slice(line)?)
}

/// Checks a worker's first line and returns the announced version.
pub fn parse_ready_line(line: &str) -> Result<String, HandshakeError> {
    let ready: Ready = serde_json::from_str(line.trim_end())
        .map_err(|_| HandshakeError::Garbage(line.trim_end().to_owned()))?;
    if ready.ready != PROTOCOL_VERSION {
        return Err(HandshakeError::VersionMismatch {
            found: ready.ready,
            expected: PROTOCOL_VERSION.to_owned(),
        });
    }
    Ok(ready.ready)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ping_bytes() {
        let req = WorkerRequest {
            id: 1,
            op: RequestOp::Ping {},
        };
        assert_eq!(encode_frame(&req), b"{\"id\":1,\"op\":\"ping\",\"payload\":{}}\n");
    }

    #[test]
    fn execute_bytes() {
        let req = WorkerRequest {
            id: 7,
            op: RequestOp::Execute { code: "x=1".into() },
        };
        assert_eq!(
            encode_frame(&req),
            b"{\"id\":7,\"op\":\"execute\",\"payload\":{\"code\":\"x=1\"}}\n"
        );
    }

    #[test]
    fn oversize_rejected() {
        let frame = vec![b' '; 65 * 1024 * 1024];
        assert!(matches!(
            decode_frame::<WorkerResponse>(&frame),
            Err(FrameError::Oversize(_))
        ));
    }

    #[test]
    fn malformed_and_schema_errors_differ() {
        assert!(matches!(
            decode_frame::<WorkerRequest>(b"{\"id\":1,"),
            Err(FrameError::Malformed(_))
        ));
        assert!(matches!(
            decode_frame::<WorkerRequest>(b"{\"id\":1,\"op\":\"dance\",\"payload\":{}}\n"),
            Err(FrameError::Schema(_))
        ));
    }

    #[test]
    fn typed_payloads() {
        let resp: WorkerResponse =
            decode_frame(b"{\"id\":3,\"ok\":true,\"payload\":{\"protocol\":\"1\"}}\n").unwrap();
        let ping: PingPayload = resp.payload_as().unwrap();
        assert_eq!(ping.protocol, "1");

        let resp: WorkerResponse = decode_frame(
            br#"{"id":4,"ok":false,"payload":{"stdout":"","stderr":"","result_repr":null,"rich":[],"error":{"etype":"ZeroDivisionError","message":"division by zero","traceback":"..."}}}"#,
        )
        .unwrap();
        let exec: ExecutePayload = resp.payload_as().unwrap();
        assert_eq!(exec.error.unwrap().etype, "ZeroDivisionError");
    }

    #[test]
    fn handshake_lines() {
        assert_eq!(parse_ready_line("{\"ready\":\"1\"}\n").unwrap(), "1");
        assert!(matches!(parse_ready_line("hello"), Err(HandshakeError::Garbage(_))));
        assert!(matches!(
            parse_ready_line("{\"ready\":\"2\"}"),
            Err(HandshakeError::VersionMismatch { .. })
        ));
    }

    fn op_strategy() -> impl Strategy<Value = RequestOp> {
        prop_oneof![
            any::<String>().prop_map(|code| RequestOp::Execute { code }),
            Just(RequestOp::Snapshot {}),
            "[A-Za-z0-9+/]{0,40}".prop_map(|blob| RequestOp::Restore { blob }),
            Just(RequestOp::Ping {}),
            Just(RequestOp::Shutdown {}),
        ]
    }

    proptest! {
        #[test]
        fn request_round_trip(id in 1u64.., op in op_strategy()) {
            let req = WorkerRequest { id, op };
            let bytes = encode_frame(&req);
            prop_assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 1);
            prop_assert_eq!(decode_frame::<WorkerRequest>(&bytes).unwrap(), req);
        }

        #[test]
        fn execute_payload_round_trip(
            stdout in any::<String>(),
            stderr in any::<String>(),
            repr in proptest::option::of(any::<String>()),
        ) {
            let payload = ExecutePayload { stdout, stderr, result_repr: repr, rich: vec![], error: None };
            let resp = WorkerResponse { id: 9, ok: true, payload: serde_json::to_value(&payload).unwrap() };
            let back: WorkerResponse = decode_frame(&encode_frame(&resp)).unwrap();
            prop_assert_eq!(back.payload_as::<ExecutePayload>().unwrap(), payload);
        }
    }
}
