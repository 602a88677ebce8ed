use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use canvas_core::codec::serialize_2dntb;
use canvas_core::{CanvasId, CellId, Delta, EnvId, OutputId, Point};
use futures::stream::{self, Stream, StreamExt};
use serde::Deserialize;
use serde_json::Value;
use tokio::sync::broadcast::error::RecvError;

use crate::agent::{run_task, AgentTask};
use crate::error::{ApiError, Body};
use crate::service::{AppState, CellPatch, NewCanvas, NewCell, NewEnvironment};

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/canvases", get(list_canvases).post(create_canvas))
        .route("/canvases/import/ipynb", post(import_ipynb))
        .route("/canvases/{c}", get(get_canvas).delete(delete_canvas))
        .route("/canvases/{c}/cells", post(create_cell))
        .route("/canvases/{c}/cells/{id}", axum::routing::patch(update_cell).delete(delete_cell))
        .route("/canvases/{c}/cells/{id}/execute", post(execute_cell))
        .route("/canvases/{c}/environments", post(create_environment))
        .route(
            "/canvases/{c}/environments/{id}",
            axum::routing::patch(move_environment).delete(delete_environment),
        )
        .route("/canvases/{c}/outputs/{id}", axum::routing::patch(move_output).delete(delete_output))
        .route("/canvases/{c}/outputs/{id}/detach", post(detach_output))
        .route("/canvases/{c}/file", get(get_file).put(put_file))
        .route("/canvases/{c}/export/ipynb", get(export_ipynb))
        .route("/canvases/{c}/events", get(events))
        .route("/canvases/{c}/agent/tasks", post(agent_task))
        .with_state(state)
}

async fn list_canvases(State(state): State<AppState>) -> impl IntoResponse {
    state.list_canvases().await.map(Json)
}

/// The body is optional; an empty request creates a canvas with a fresh id.
async fn create_canvas(State(state): State<AppState>, bytes: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: NewCanvas = if bytes.iter().all(u8::is_ascii_whitespace) {
        NewCanvas::default()
    } else {
        serde_json::from_slice(&bytes).map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid-body", e.to_string()))?
    };
    state
        .create_canvas(req)
        .await
        .map(|canvas| (StatusCode::CREATED, Json(canvas)))
}

async fn get_canvas(State(state): State<AppState>, Path(c): Path<CanvasId>) -> impl IntoResponse {
    state.canvas(&c).await.map(Json)
}

async fn delete_canvas(State(state): State<AppState>, Path(c): Path<CanvasId>) -> Result<StatusCode, ApiError> {
    state.delete_canvas(&c).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn create_cell(
    State(state): State<AppState>,
    Path(c): Path<CanvasId>,
    Body(req): Body<NewCell>,
) -> impl IntoResponse {
    state.create_cell(&c, req).await.map(Json)
}

async fn update_cell(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, CellId)>,
    Body(patch): Body<CellPatch>,
) -> impl IntoResponse {
    state.update_cell(&c, &id, patch).await.map(Json)
}

async fn delete_cell(State(state): State<AppState>, Path((c, id)): Path<(CanvasId, CellId)>) -> impl IntoResponse {
    state.delete_cell(&c, &id).await.map(Json)
}

async fn execute_cell(State(state): State<AppState>, Path((c, id)): Path<(CanvasId, CellId)>) -> impl IntoResponse {
    state.execute_cell(&c, &id).await.map(Json)
}

async fn create_environment(
    State(state): State<AppState>,
    Path(c): Path<CanvasId>,
    Body(req): Body<NewEnvironment>,
) -> impl IntoResponse {
    state.create_environment(&c, req).await.map(Json)
}

async fn move_environment(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, EnvId)>,
    Body(delta): Body<Delta>,
) -> impl IntoResponse {
    state.move_environment(&c, &id, delta).await.map(Json)
}

async fn delete_environment(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, EnvId)>,
) -> impl IntoResponse {
    state.delete_environment(&c, &id).await.map(Json)
}

async fn detach_output(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, OutputId)>,
) -> impl IntoResponse {
    state.detach_output(&c, &id).await.map(Json)
}

async fn move_output(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, OutputId)>,
    Body(to): Body<Point>,
) -> impl IntoResponse {
    state.move_output(&c, &id, to).await.map(Json)
}

async fn delete_output(
    State(state): State<AppState>,
    Path((c, id)): Path<(CanvasId, OutputId)>,
) -> impl IntoResponse {
    state.delete_output(&c, &id).await.map(Json)
}

async fn get_file(State(state): State<AppState>, Path(c): Path<CanvasId>) -> Result<Response, ApiError> {
    let bytes = serialize_2dntb(&state.canvas(&c).await?);
    Ok(([(header::CONTENT_TYPE, "application/json")], bytes).into_response())
}

async fn put_file(State(state): State<AppState>, Path(c): Path<CanvasId>, bytes: Bytes) -> impl IntoResponse {
    state.replace_canvas(&c, &bytes).await.map(Json)
}

/// Returns the notebook itself; content that could not be exported is
/// listed in `x-canvas-warning` headers.
async fn export_ipynb(State(state): State<AppState>, Path(c): Path<CanvasId>) -> Result<Response, ApiError> {
    let export = state.export_ipynb(&c).await?;
    let mut response = Json(export.notebook).into_response();
    for warning in export.warnings {
        if let Ok(v) = HeaderValue::from_str(&warning.replace(['\r', '\n'], " ")) {
            response.headers_mut().append("x-canvas-warning", v);
        }
    }
    Ok(response)
}

#[derive(Debug, Deserialize)]
struct ImportQuery {
    id: Option<CanvasId>,
}

async fn import_ipynb(
    State(state): State<AppState>,
    Query(query): Query<ImportQuery>,
    Body(notebook): Body<Value>,
) -> Result<(StatusCode, Json<canvas_core::Canvas>), ApiError> {
    let canvas = state.import_ipynb(&notebook, query.id).await?;
    Ok((StatusCode::CREATED, Json(canvas)))
}

/// Server-sent events, one JSON `CanvasEvent` per message. A subscriber
/// that falls more than the buffer behind is disconnected.
async fn events(
    State(state): State<AppState>,
    Path(c): Path<CanvasId>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let rx = state.live(&c).await?.subscribe();
    let closed = Box::pin({
        let state = state.clone();
        async move { state.closed().await }
    });
    let stream = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(event) => {
                let data = serde_json::to_string(&event).expect("events serialize");
                let sse = Event::default().id(event.seq.to_string()).event(event.body.kind()).data(data);
                Some((Ok(sse), rx))
            }
            Err(RecvError::Lagged(n)) => {
                tracing::info!("dropping event subscriber {n} events behind");
                None
            }
            Err(RecvError::Closed) => None,
        }
    })
    .take_until(closed);
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

async fn agent_task(
    State(state): State<AppState>,
    Path(c): Path<CanvasId>,
    Body(task): Body<AgentTask>,
) -> ApiResult<crate::agent::AgentReport> {
    run_task(&state, &c, task).await.map(Json)
}
