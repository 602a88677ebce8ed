use std::sync::Arc;
use std::time::{Duration, Instant};

use canvas_core::events::{EventBody, ExecutionStatus};
use canvas_core::{Canvas, CanvasId, Mime, Rect, Route};
use canvas_runtime::orchestrator::bundle_from_payload;
use canvas_runtime::{
    ExecuteCellError, LiveCanvas, Orchestrator, OrchestratorConfig, SessionError, SessionState, WorkerCommand,
};
use canvas_testkit::programs::{join, state_probe, triple};

fn canvas(id: &str) -> CanvasId {
    CanvasId::from(id)
}

async fn text(orch: &Orchestrator, session: &canvas_core::SessionId, code: &str) -> String {
    let r = orch.execute(session, code).await.unwrap();
    assert_eq!(r.status, ExecutionStatus::Ok, "{code}: {:?}", r.bundle);
    r.text().unwrap_or_default().to_owned()
}

#[tokio::test(flavor = "multi_thread")]
async fn fork_inherits_and_isolates() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    let main = orch.ensure_main_session(&c).await.unwrap().session_id;
    text(&orch, &main, "xs = [1, 2]\nys = xs\nn = 5").await;
    let (child, warnings) = orch.fork_session(&c).await.unwrap();
    assert!(warnings.is_empty());
    assert_eq!(child.parent_session_id.as_ref(), Some(&main));
    let child = child.session_id;

    text(&orch, &child, "xs.append(3)\nn += 1").await;
    assert_eq!(text(&orch, &child, "(ys, n)").await, "([1, 2, 3], 6)");
    assert_eq!(text(&orch, &main, "(ys, n)").await, "([1, 2], 5)");

    text(&orch, &main, "n = 100").await;
    assert_eq!(text(&orch, &child, "n").await, "6");
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn random_triples_stay_isolated() {
    let orch = Orchestrator::default();
    for seed in 0..10 {
        let c = canvas(&format!("t{seed}"));
        let t = triple(seed);
        let main = orch.ensure_main_session(&c).await.unwrap().session_id;
        text(&orch, &main, &join(&t.a)).await;
        let (child, _) = orch.fork_session(&c).await.unwrap();
        text(&orch, &child.session_id, &join(&t.c)).await;
        text(&orch, &main, &join(&t.b)).await;
        let got_main = text(&orch, &main, &state_probe()).await;
        let got_child = text(&orch, &child.session_id, &state_probe()).await;

        let oracle = orch.ensure_main_session(&canvas(&format!("o{seed}"))).await.unwrap().session_id;
        text(&orch, &oracle, &join(&t.a)).await;
        text(&orch, &oracle, &join(&t.b)).await;
        assert_eq!(got_main, text(&orch, &oracle, &state_probe()).await, "seed {seed}");

        let oracle = orch.ensure_main_session(&canvas(&format!("p{seed}"))).await.unwrap().session_id;
        text(&orch, &oracle, &join(&t.a)).await;
        text(&orch, &oracle, &join(&t.c)).await;
        assert_eq!(got_child, text(&orch, &oracle, &state_probe()).await, "seed {seed}");
    }
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn counters_follow_queue_order() {
    let orch = Orchestrator::default();
    let main = orch.ensure_main_session(&canvas("c")).await.unwrap().session_id;
    let jobs: Vec<_> = (0..5)
        .map(|i| {
            let orch = orch.clone();
            let main = main.clone();
            tokio::spawn(async move { orch.execute(&main, &format!("log = globals().get('log', []) + [{i}]\nlog")).await })
        })
        .collect();
    let mut counts = Vec::new();
    for j in jobs {
        counts.push(j.await.unwrap().unwrap().execution_count);
    }
    counts.sort();
    assert_eq!(counts, vec![1, 2, 3, 4, 5]);
    assert_eq!(orch.session(&main).unwrap().exec_counter, 6);
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn distinct_sessions_run_in_parallel() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    let main = orch.ensure_main_session(&c).await.unwrap().session_id;
    let (fork, _) = orch.fork_session(&c).await.unwrap();

    let started = Instant::now();
    let a = tokio::spawn({
        let orch = orch.clone();
        async move { orch.execute(&main, "import time\ntime.sleep(1)").await }
    });
    let b = tokio::spawn({
        let orch = orch.clone();
        let id = fork.session_id.clone();
        async move { orch.execute(&id, "import time\ntime.sleep(1)").await }
    });
    a.await.unwrap().unwrap();
    b.await.unwrap().unwrap();
    assert!(started.elapsed() < Duration::from_millis(1600), "{:?}", started.elapsed());
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn terminate_fails_queue_and_is_idempotent() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    orch.ensure_main_session(&c).await.unwrap();
    let (fork, _) = orch.fork_session(&c).await.unwrap();
    let id = fork.session_id.clone();
    let running = tokio::spawn({
        let orch = orch.clone();
        let id = id.clone();
        async move { orch.execute(&id, "import time\ntime.sleep(30)").await }
    });
    let queued = tokio::spawn({
        let orch = orch.clone();
        let id = id.clone();
        async move { orch.execute(&id, "1").await }
    });
    tokio::time::sleep(Duration::from_millis(300)).await;
    let started = Instant::now();
    orch.terminate_session(&id).await;
    orch.terminate_session(&id).await;
    assert!(started.elapsed() < Duration::from_secs(6));
    assert!(matches!(running.await.unwrap(), Err(SessionError::Terminated(_))));
    assert!(matches!(queued.await.unwrap(), Err(SessionError::Terminated(_))));
    assert_eq!(orch.session(&id).unwrap().state, SessionState::Dead);
    assert!(matches!(orch.execute(&id, "1").await, Err(SessionError::Terminated(_))));
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn crashed_worker_only_affects_its_session() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    let main = orch.ensure_main_session(&c).await.unwrap().session_id;
    let (fork, _) = orch.fork_session(&c).await.unwrap();
    let pid = fork.pid.unwrap();
    let status = std::process::Command::new("kill").args(["-9", &pid.to_string()]).status().unwrap();
    assert!(status.success());
    let err = orch.execute(&fork.session_id, "1").await.unwrap_err();
    assert!(matches!(err, SessionError::Worker(_)), "{err}");
    assert_eq!(orch.session(&fork.session_id).unwrap().state, SessionState::Dead);
    assert_eq!(text(&orch, &main, "1 + 1").await, "2");
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn spawn_failure_is_reported() {
    let orch = Orchestrator::new(OrchestratorConfig {
        worker: WorkerCommand::new("/nonexistent/python", Vec::<String>::new()),
        ..OrchestratorConfig::default()
    });
    assert!(matches!(
        orch.ensure_main_session(&canvas("c")).await,
        Err(SessionError::Spawn(_))
    ));
}

#[tokio::test(flavor = "multi_thread")]
async fn unserializable_names_are_skipped_on_fork() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    let main = orch.ensure_main_session(&c).await.unwrap().session_id;
    text(
        &orch,
        &main,
        "import math\nf = open('/dev/null')\nk = 2\ndef g(x):\n    return x + k\nfrom math import floor",
    )
    .await;
    let (child, skipped) = orch.fork_session(&c).await.unwrap();
    assert_eq!(skipped, vec!["f".to_owned()]);
    assert_eq!(text(&orch, &child.session_id, "(g(10), math.pi > 3, floor(2.5))").await, "(12, True, 2)");
    let r = orch.execute(&child.session_id, "f").await.unwrap();
    assert_eq!(r.status, ExecutionStatus::Error);
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn corrupt_restore_leaves_namespace() {
    let mut worker = canvas_runtime::WorkerProcess::spawn(&WorkerCommand::python(), Duration::from_secs(5))
        .await
        .unwrap();
    let conn = worker.connection();
    conn.execute("x = 41").await.unwrap();
    assert!(conn.restore("bm90IGEgcGlja2xl").await.is_err());
    let (_, payload) = conn.execute("x + 1").await.unwrap();
    assert_eq!(payload.result_repr.as_deref(), Some("42"));
    worker.shutdown(Duration::from_secs(5)).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn fork_is_only_from_main() {
    let orch = Orchestrator::default();
    let c = canvas("c");
    let main = orch.ensure_main_session(&c).await.unwrap().session_id;
    let (fork, _) = orch.fork_from(&c, &main).await.unwrap();
    assert!(matches!(
        orch.fork_from(&c, &fork.session_id).await,
        Err(SessionError::ForkSource(_))
    ));
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn execute_cell_writes_back_and_routes() {
    let orch = Orchestrator::default();
    let live = LiveCanvas::new(Canvas::new(canvas("c"), "t"));
    let mut events = live.subscribe();
    let (a, b) = {
        let mut doc = live.lock().await;
        let a = doc.create_cell("v = 1\nv", Rect::new(0.0, 0.0, 100.0, 40.0).unwrap()).unwrap();
        let b = doc.create_cell("v", Rect::new(500.0, 0.0, 100.0, 40.0).unwrap()).unwrap();
        (a.id, b.id)
    };
    let r = orch.execute_cell(&live, &a).await.unwrap();
    assert_eq!(r.execution_count, 1);
    assert_eq!(r.text(), Some("1"));

    let (fork, _) = orch.fork_session(live.id()).await.unwrap();
    let env = {
        let mut doc = live.lock().await;
        let env = doc
            .create_environment(Rect::new(480.0, -20.0, 200.0, 100.0).unwrap(), "#abc", fork.session_id.clone())
            .unwrap();
        env.id
    };
    orch.bind_environment(&fork.session_id, &env);
    assert_eq!(live.lock().await.resolve_environment(&b).unwrap(), Route::Environment(env));
    let r = orch.execute_cell(&live, &b).await.unwrap();
    assert_eq!(r.session_id, fork.session_id);
    assert_eq!(r.text(), Some("1"));
    assert_eq!(r.execution_count, 1);

    let doc = live.snapshot().await;
    let out = doc.attached_output(&a).unwrap();
    assert_eq!(out.frame.origin.y, 56.0);
    assert_eq!(doc.cell(&b).unwrap().execution_count, Some(1));

    let mut kinds = Vec::new();
    while let Ok(e) = events.try_recv() {
        kinds.push(e.body.kind());
    }
    assert_eq!(
        &kinds[..4],
        ["execution-started", "cell-updated", "output-updated", "execution-finished"]
    );
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn unbound_environment_forks_lazily() {
    let orch = Orchestrator::default();
    let live = LiveCanvas::new(Canvas::new(canvas("c"), "t"));
    let cell = {
        let mut doc = live.lock().await;
        doc.create_environment(Rect::new(0.0, 0.0, 300.0, 300.0).unwrap(), "#123", "stale/session".into())
            .unwrap();
        doc.create_cell("41 + 1", Rect::new(10.0, 10.0, 50.0, 50.0).unwrap()).unwrap().id
    };
    let mut events = live.subscribe();
    let r = orch.execute_cell(&live, &cell).await.unwrap();
    assert_eq!(r.text(), Some("42"));
    assert!(r.session_id.as_str().contains("fork"));
    let first = events.recv().await.unwrap();
    match first.body {
        EventBody::EnvUpdated { environment } => assert_eq!(environment.session_id, r.session_id),
        other => panic!("unexpected {other:?}"),
    }
    let again = orch.execute_cell(&live, &cell).await.unwrap();
    assert_eq!(again.session_id, r.session_id);
    assert_eq!(again.execution_count, 2);
    orch.shutdown_all().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn same_cell_cannot_queue_twice() {
    let orch = Orchestrator::default();
    let live = LiveCanvas::new(Canvas::new(canvas("c"), "t"));
    let cell = live
        .lock()
        .await
        .create_cell("import time\ntime.sleep(0.5)", Rect::new(0.0, 0.0, 10.0, 10.0).unwrap())
        .unwrap()
        .id;
    let first = tokio::spawn({
        let orch = orch.clone();
        let live = Arc::clone(&live);
        let cell = cell.clone();
        async move { orch.execute_cell(&live, &cell).await }
    });
    tokio::time::sleep(Duration::from_millis(200)).await;
    assert!(matches!(
        orch.execute_cell(&live, &cell).await,
        Err(ExecuteCellError::AlreadyQueued(_))
    ));
    first.await.unwrap().unwrap();
    orch.execute_cell(&live, &cell).await.unwrap();
    orch.shutdown_all().await;
}

#[test]
fn bundle_orders_streams_then_rich_then_result_then_error() {
    use canvas_core::protocol::{ErrorInfo, ExecutePayload};
    use canvas_core::OutputItem;
    let payload = ExecutePayload {
        stdout: "out".into(),
        stderr: "err".into(),
        result_repr: Some("3".into()),
        rich: vec![
            OutputItem::new(Mime::Json, "{\"a\":1}"),
            OutputItem::new(Mime::ImagePng, "!!!"),
        ],
        error: Some(ErrorInfo {
            etype: "ValueError".into(),
            message: "bad".into(),
            traceback: String::new(),
        }),
    };
    let mimes: Vec<Mime> = bundle_from_payload(&payload).iter().map(|i| i.mime).collect();
    assert_eq!(
        mimes,
        [Mime::Stdout, Mime::Stderr, Mime::Json, Mime::Stderr, Mime::TextPlain, Mime::Stderr]
    );
}
