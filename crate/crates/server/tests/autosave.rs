mod common;

use std::time::Duration;

use canvas_core::codec::parse_2dntb;
use canvas_core::events::EventBody;
use canvas_core::{Canvas, CanvasId};
use common::{rect, TestServer};
use reqwest::Method;
use serde_json::{json, Value};

fn quick(config: &mut canvas_server::ServerConfig) {
    config.autosave_debounce = Duration::from_millis(200);
}

#[tokio::test(flavor = "multi_thread")]
async fn file_catches_up_after_mutation() {
    let s = TestServer::start_with(quick).await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    s.ok::<Value>(
        Method::POST,
        "/canvases/c/cells",
        Some(json!({"source": "1", "frame": rect(0.0, 0.0, 10.0, 10.0)})),
    )
    .await;
    tokio::time::sleep(Duration::from_millis(700)).await;
    let on_disk = parse_2dntb(&std::fs::read(s.dir.path().join("c.2dntb")).unwrap()).unwrap();
    let live: Canvas = s.ok(Method::GET, "/canvases/c", None::<Value>).await;
    assert_eq!(on_disk, live);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn rapid_mutations_coalesce_into_one_write() {
    let s = TestServer::start_with(quick).await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    let binding = s.state.binding(&CanvasId::from("c")).await.unwrap();
    assert_eq!(binding.saves(), 0);
    for i in 0..2 {
        s.ok::<Value>(
            Method::POST,
            "/canvases/c/cells",
            Some(json!({"source": i.to_string(), "frame": rect(0.0, 0.0, 10.0, 10.0)})),
        )
        .await;
    }
    tokio::time::sleep(Duration::from_millis(800)).await;
    assert_eq!(binding.saves(), 1);
    let on_disk = parse_2dntb(&std::fs::read(&binding.path).unwrap()).unwrap();
    assert_eq!(on_disk.cells.len(), 2);
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn write_failure_becomes_warning_event() {
    let s = TestServer::start_with(quick).await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c"}))).await;
    let mut events = s.events("c").await;
    // the directory vanishing makes the temp file impossible to create
    std::fs::remove_dir_all(s.dir.path()).unwrap();
    s.ok::<Value>(
        Method::POST,
        "/canvases/c/cells",
        Some(json!({"source": "1", "frame": rect(0.0, 0.0, 10.0, 10.0)})),
    )
    .await;
    let created = events.next().await.unwrap();
    assert_eq!(created.body.kind(), "cell-created");
    let warning = events.next().await.unwrap();
    match warning.body {
        EventBody::SessionWarning { message, .. } => assert!(message.contains("autosave"), "{message}"),
        other => panic!("expected a warning, got {other:?}"),
    }
    drop(events);
    std::fs::create_dir_all(s.dir.path()).unwrap();
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn shutdown_flushes_pending_changes() {
    let s = TestServer::start_with(|c| c.autosave_debounce = Duration::from_secs(60)).await;
    s.ok::<Canvas>(Method::POST, "/canvases", Some(json!({"id": "c", "title": "Kept"}))).await;
    s.ok::<Value>(
        Method::POST,
        "/canvases/c/cells",
        Some(json!({"source": "x", "frame": rect(0.0, 0.0, 10.0, 10.0)})),
    )
    .await;
    let dir = s.stop().await;
    let on_disk = parse_2dntb(&std::fs::read(dir.path().join("c.2dntb")).unwrap()).unwrap();
    assert_eq!(on_disk.title, "Kept");
    assert_eq!(on_disk.cells.len(), 1);
}
