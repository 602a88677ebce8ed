//! A canvas shared between request handlers, sessions and subscribers.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};

use canvas_core::events::{CanvasEvent, EventBody};
use canvas_core::{Canvas, CanvasId, CellId};
use tokio::sync::{broadcast, watch, MutexGuard};

/// Subscribers that fall this many events behind are dropped.
pub const EVENT_BUFFER: usize = 1024;

pub struct LiveCanvas {
    id: CanvasId,
    doc: tokio::sync::Mutex<Canvas>,
    events: broadcast::Sender<CanvasEvent>,
    next_event: Mutex<u64>,
    version: watch::Sender<u64>,
    pending: Mutex<HashSet<CellId>>,
}

/// Marks a cell as having a job queued; released on drop.
pub struct PendingExecution {
    live: Arc<LiveCanvas>,
    cell: CellId,
}

impl Drop for PendingExecution {
    fn drop(&mut self) {
        self.live.pending.lock().unwrap().remove(&self.cell);
    }
}

impl LiveCanvas {
    pub fn new(canvas: Canvas) -> Arc<Self> {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let (version, _) = watch::channel(0);
        Arc::new(Self {
            id: canvas.id.clone(),
            doc: tokio::sync::Mutex::new(canvas),
            events,
            next_event: Mutex::new(1),
            version,
            pending: Mutex::new(HashSet::new()),
        })
    }

    pub fn id(&self) -> &CanvasId {
        &self.id
    }

    /// Exclusive access to the document. Mutations made through the guard
    /// must be announced with [`LiveCanvas::emit`] before it is released.
    pub async fn lock(&self) -> MutexGuard<'_, Canvas> {
        self.doc.lock().await
    }

    pub async fn snapshot(&self) -> Canvas {
        self.doc.lock().await.clone()
    }

    /// Runs a mutation and publishes its events atomically with respect to
    /// other mutations of this canvas.
    pub async fn apply<T, E>(
        &self,
        mutation: impl FnOnce(&mut Canvas) -> Result<(T, Vec<EventBody>), E>,
    ) -> Result<T, E> {
        let mut doc = self.doc.lock().await;
        let (value, events) = mutation(&mut doc)?;
        for body in events {
            self.emit(body);
        }
        Ok(value)
    }

    pub fn subscribe(&self) -> broadcast::Receiver<CanvasEvent> {
        self.events.subscribe()
    }

    /// Assigns the next sequence number and fans the event out.
    pub fn emit(&self, body: EventBody) -> CanvasEvent {
        let touches_document = !matches!(
            body,
            EventBody::ExecutionStarted { .. } | EventBody::ExecutionFinished { .. } | EventBody::SessionWarning { .. }
        );
        let event = {
            let mut next = self.next_event.lock().unwrap();
            let event = CanvasEvent { seq: *next, body };
            *next += 1;
            // no subscribers is fine
            let _ = self.events.send(event.clone());
            event
        };
        if touches_document {
            self.version.send_modify(|v| *v += 1);
        }
        event
    }

    /// Bumped after every document change; drives autosave.
    pub fn versions(&self) -> watch::Receiver<u64> {
        self.version.subscribe()
    }

    pub fn version(&self) -> u64 {
        *self.version.borrow()
    }

    /// Claims the right to queue an execution of `cell`. `None` when the
    /// cell already has a job queued or running.
    pub fn begin_execution(self: &Arc<Self>, cell: &CellId) -> Option<PendingExecution> {
        let mut pending = self.pending.lock().unwrap();
        if !pending.insert(cell.clone()) {
            return None;
        }
        Some(PendingExecution {
            live: Arc::clone(self),
            cell: cell.clone(),
        })
    }

    pub fn is_pending(&self, cell: &CellId) -> bool {
        self.pending.lock().unwrap().contains(cell)
    }
}
