mod common;

use canvas_core::{Canvas, Cell};
use canvas_runtime::ExecutionResult;
use canvas_server::{AgentReport, AgentStatus};
use common::{rect, TestServer};
use reqwest::{Method, StatusCode};
use serde_json::{json, Value};

async fn task(s: &TestServer, canvas: &str, body: Value) -> (StatusCode, Value) {
    s.send(Method::POST, &format!("/canvases/{canvas}/agent/tasks"), Some(body)).await
}

#[tokio::test(flavor = "multi_thread")]
async fn empty_canvas_task() {
    let s = TestServer::start().await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    let (status, body) = task(&s, "c", json!({"name": "double", "steps": ["x=10", "x*2"]})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: AgentReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.status, AgentStatus::Completed);
    assert_eq!(report.region.origin.x, 64.0);
    assert_eq!(report.region.origin.y, 0.0);
    assert_eq!(report.steps[1].result_repr.as_deref(), Some("20"));
    assert_eq!(report.cell_ids.len(), 2);

    let doc: Canvas = s.ok(Method::GET, "/canvases/c", None::<Value>).await;
    let env = &doc.environments[&report.env_id];
    for id in &report.cell_ids {
        assert!(env.region.contains(doc.cells[id].frame.center()));
    }
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn agent_inherits_main_without_touching_it() {
    let s = TestServer::start().await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    let cell: Cell = s
        .ok(
            Method::POST,
            "/canvases/c/cells",
            Some(json!({"source": "data=[1,2,3]", "frame": rect(0.0, 0.0, 500.0, 400.0)})),
        )
        .await;
    s.ok::<ExecutionResult>(Method::POST, &format!("/canvases/c/cells/{}/execute", cell.id), None::<Value>)
        .await;
    let before: Canvas = s.ok(Method::GET, "/canvases/c", None::<Value>).await;

    let (status, body) = task(&s, "c", json!({"name": "sum", "steps": ["sum(data)"]})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let report: AgentReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.steps[0].result_repr.as_deref(), Some("6"));
    assert_eq!((report.region.origin.x, report.region.origin.y), (564.0, 0.0));

    let after: Canvas = s.ok(Method::GET, "/canvases/c", None::<Value>).await;
    for (id, c) in &before.cells {
        assert_eq!(&after.cells[id], c);
    }
    assert_eq!(before.outputs, after.outputs.iter().filter(|(id, _)| before.outputs.contains_key(*id)).map(|(k, v)| (k.clone(), v.clone())).collect());
    let main = s.state.orchestrator().main_session_id(&"c".into()).unwrap();
    let probe = s.state.orchestrator().execute(&main, "sorted(k for k in globals() if not k.startswith('__'))").await.unwrap();
    assert_eq!(probe.text(), Some("['canvas_display', 'data']"));
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn stops_at_first_error() {
    let s = TestServer::start().await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    let (_, body) = task(&s, "c", json!({"name": "bad", "steps": ["1/0", "x=1"]})).await;
    let report: AgentReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.status, AgentStatus::FailedAtStep(1));
    assert_eq!(report.cell_ids.len(), 1);
    assert!(report.steps[0].stderr.contains("ZeroDivisionError"));

    let (_, body) = task(&s, "c", json!({"name": "go on", "steps": ["1/0", "x=1"], "stop_on_error": false})).await;
    let report: AgentReport = serde_json::from_value(body).unwrap();
    assert_eq!(report.status, AgentStatus::FailedAtStep(1));
    assert_eq!(report.cell_ids.len(), 2);

    let (status, _) = task(&s, "c", json!({"name": "none", "steps": []})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = task(&s, "missing", json!({"name": "x", "steps": ["1"]})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn one_task_per_canvas() {
    let s = TestServer::start().await;
    for id in ["a", "b"] {
        s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": id}))).await;
    }
    let slow = json!({"name": "slow", "steps": ["import time\ntime.sleep(1)"]});
    let first = tokio::spawn(s.client.post(s.url("/canvases/a/agent/tasks")).json(&slow).send());
    tokio::time::sleep(std::time::Duration::from_millis(400)).await;
    let (status, body) = task(&s, "a", slow.clone()).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "agent-busy");
    let (status, _) = task(&s, "b", json!({"name": "other", "steps": ["1"]})).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first.await.unwrap().unwrap().status(), StatusCode::OK);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn identical_inputs_identical_reports() {
    let mut reports = Vec::new();
    let mut docs = Vec::new();
    for _ in 0..2 {
        let s = TestServer::start().await;
        s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
        let (_, body) = task(&s, "c", json!({"name": "t", "steps": ["a = [1]\na * 3", "print(len(a))"]})).await;
        reports.push(serde_json::from_value::<AgentReport>(body).unwrap());
        docs.push(s.ok::<Canvas>(Method::GET, "/canvases/c", None::<Value>).await);
        s.stop().await;
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(docs[0], docs[1]);
}
