//! Random API scripts: the service must agree with the model, its event
//! stream must rebuild the document, and canvases must not leak into each
//! other.

mod common;

use std::time::Duration;

use canvas_core::Canvas;
use canvas_testkit::api::{drive, normalize_sessions, script, step, Api};
use common::TestServer;
use reqwest::Method;
use serde_json::json;

async fn new_canvas(api: &Api, id: &str) {
    api.ok(Method::POST, "/canvases", Some(json!({"id": id}))).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn api_matches_model() {
    let s = TestServer::start().await;
    let api = Api::new(&s.base);
    for seed in 0..4 {
        let id = format!("eq{seed}");
        new_canvas(&api, &id).await;
        let mirror = drive(&api, &id, &script(seed, 30)).await;
        assert_eq!(api.canvas(&id).await, mirror, "seed {seed}");
        assert!(mirror.violations().is_empty());
    }
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn event_stream_rebuilds_document() {
    let s = TestServer::start().await;
    let api = Api::new(&s.base);
    for seed in 10..13 {
        let id = format!("ev{seed}");
        new_canvas(&api, &id).await;
        let mut replica: Canvas = api.canvas(&id).await;
        let mut events = s.events(&id).await;
        let final_doc = {
            drive(&api, &id, &script(seed, 30)).await;
            api.canvas(&id).await
        };
        let mut last = 0;
        let deadline = tokio::time::Instant::now() + Duration::from_secs(20);
        while replica != final_doc {
            assert!(tokio::time::Instant::now() < deadline, "replay did not converge (seed {seed})");
            let e = events.next().await.expect("stream open");
            assert_eq!(e.seq, last + 1, "gap in event sequence");
            last = e.seq;
            e.body.apply(&mut replica);
        }
    }
    s.stop().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn interleaved_canvases_stay_isolated() {
    let s = TestServer::start().await;
    let api = Api::new(&s.base);
    new_canvas(&api, "left").await;
    new_canvas(&api, "right").await;
    let (ops_l, ops_r) = (script(21, 25), script(22, 25));

    let mut mirror_l = api.canvas("left").await;
    let mut mirror_r = api.canvas("right").await;
    for i in 0..25 {
        let (a, b) = tokio::join!(
            step(&api, "left", &ops_l[i], &mut mirror_l),
            step(&api, "right", &ops_r[i], &mut mirror_r)
        );
        drop((a, b));
    }
    let left = api.canvas("left").await;
    let right = api.canvas("right").await;

    let solo = TestServer::start().await;
    let solo_api = Api::new(&solo.base);
    new_canvas(&solo_api, "left").await;
    drive(&solo_api, "left", &ops_l).await;
    new_canvas(&solo_api, "right").await;
    drive(&solo_api, "right", &ops_r).await;
    assert_eq!(normalize_sessions(&left), normalize_sessions(&solo_api.canvas("left").await));
    assert_eq!(normalize_sessions(&right), normalize_sessions(&solo_api.canvas("right").await));

    let list: Vec<canvas_server::CanvasSummary> = s.ok(Method::GET, "/canvases", None::<serde_json::Value>).await;
    let ids: Vec<&str> = list.iter().map(|c| c.id.as_str()).collect();
    assert_eq!(ids, ["left", "right"]);
    solo.stop().await;
    s.stop().await;
}
