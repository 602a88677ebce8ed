#![allow(dead_code)]

use std::time::Duration;

use canvas_core::events::CanvasEvent;
use canvas_server::{AppState, ServerConfig};
use reqwest::{Client, Method, StatusCode};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tempfile::TempDir;
use tokio::sync::oneshot;

pub struct TestServer {
    pub base: String,
    pub client: Client,
    pub state: AppState,
    pub dir: TempDir,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl TestServer {
    pub async fn start() -> Self {
        Self::start_with(|_| {}).await
    }

    pub async fn start_with(tweak: impl FnOnce(&mut ServerConfig)) -> Self {
        let dir = tempfile::tempdir().unwrap();
        Self::start_in(dir, tweak).await
    }

    pub async fn start_in(dir: TempDir, tweak: impl FnOnce(&mut ServerConfig)) -> Self {
        let mut config = ServerConfig::new(dir.path());
        tweak(&mut config);
        let state = AppState::new(config);
        let listener = canvas_server::bind("127.0.0.1:0".parse().unwrap()).await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, stopped) = oneshot::channel::<()>();
        let task = tokio::spawn({
            let state = state.clone();
            async move {
                canvas_server::serve(listener, state, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            }
        });
        Self {
            base,
            client: Client::new(),
            state,
            dir,
            stop: Some(stop),
            task: Some(task),
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub async fn send(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.client.request(method, self.url(path));
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        let bytes = resp.bytes().await.unwrap();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    /// Sends a request that must succeed and decodes the response.
    pub async fn ok<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<impl Serialize>) -> T {
        let body = body.map(|b| serde_json::to_value(b).unwrap());
        let (status, value) = self.send(method.clone(), path, body).await;
        assert!(status.is_success(), "{method} {path} -> {status}: {value}");
        serde_json::from_value(value).unwrap()
    }

    pub async fn events(&self, canvas: &str) -> EventStream {
        let resp = self
            .client
            .get(self.url(&format!("/canvases/{canvas}/events")))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        EventStream {
            resp,
            buf: String::new(),
        }
    }

    /// Shuts the service down and hands back the workspace directory.
    pub async fn stop(mut self) -> TempDir {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(task) = self.task.take() {
            task.await.unwrap();
        }
        self.dir
    }
}

pub struct EventStream {
    resp: reqwest::Response,
    buf: String,
}

impl EventStream {
    pub async fn next(&mut self) -> Option<CanvasEvent> {
        loop {
            if let Some(end) = self.buf.find("\n\n") {
                let message: String = self.buf.drain(..end + 2).collect();
                let data: Vec<&str> = message
                    .lines()
                    .filter_map(|l| l.strip_prefix("data:"))
                    .map(|d| d.strip_prefix(' ').unwrap_or(d))
                    .collect();
                if data.is_empty() {
                    continue; // keep-alive comment
                }
                return Some(serde_json::from_str(&data.join("\n")).unwrap());
            }
            let chunk = tokio::time::timeout(Duration::from_secs(30), self.resp.chunk())
                .await
                .expect("event stream stalled")
                .unwrap()?;
            self.buf.push_str(std::str::from_utf8(&chunk).unwrap());
        }
    }

    /// Collects events until one with `seq` has arrived.
    pub async fn until_seq(&mut self, seq: u64) -> Vec<CanvasEvent> {
        let mut out = Vec::new();
        while out.last().is_none_or(|e: &CanvasEvent| e.seq < seq) {
            out.push(self.next().await.expect("stream ended early"));
        }
        out
    }
}

pub fn rect(x: f64, y: f64, w: f64, h: f64) -> Value {
    serde_json::json!({"origin": {"x": x, "y": y}, "width": w, "height": h})
}
