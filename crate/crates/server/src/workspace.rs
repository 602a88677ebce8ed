//! Canvas files on disk. Each canvas `<id>` is bound to `<root>/<id>.2dntb`,
//! loaded on first access and saved atomically a short while after it
//! stops changing.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use canvas_core::codec::{parse_2dntb, serialize_2dntb};
use canvas_core::events::EventBody;
use canvas_core::{Canvas, CanvasId};
use canvas_runtime::LiveCanvas;
use serde::{Deserialize, Serialize};
use tokio::task::JoinHandle;

use crate::error::ApiError;

pub const FILE_EXTENSION: &str = "2dntb";
pub const AUTOSAVE_DEBOUNCE: Duration = Duration::from_millis(500);

/// A canvas bound to its file.
pub struct Binding {
    pub live: Arc<LiveCanvas>,
    pub path: PathBuf,
    saves: Arc<AtomicU64>,
    autosave: JoinHandle<()>,
}

impl Binding {
    /// Number of completed autosaves, for observing the debounce.
    pub fn saves(&self) -> u64 {
        self.saves.load(Ordering::SeqCst)
    }
}

impl Drop for Binding {
    fn drop(&mut self) {
        self.autosave.abort();
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CanvasSummary {
    pub id: CanvasId,
    pub title: Option<String>,
    pub loaded: bool,
}

pub struct Workspace {
    root: PathBuf,
    debounce: Duration,
    open: Mutex<HashMap<CanvasId, Arc<Binding>>>,
    loading: tokio::sync::Mutex<()>,
}

/// Canvas ids double as file names, so they are kept to a safe alphabet.
pub fn validate_id(id: &str) -> Result<(), ApiError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(ApiError::invalid(format!(
            "invalid canvas id {id:?}: use letters, digits, '-', '_' or '.'"
        )))
    }
}

/// Writes `bytes` next to `path` and renames over it, so readers only ever
/// see the old or the new content.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

async fn save(live: &LiveCanvas, path: &Path) -> std::io::Result<()> {
    let bytes = serialize_2dntb(&live.snapshot().await);
    let path = path.to_owned();
    tokio::task::spawn_blocking(move || write_atomic(&path, &bytes))
        .await
        .map_err(std::io::Error::other)?
}

async fn autosave_loop(live: Arc<LiveCanvas>, path: PathBuf, debounce: Duration, saves: Arc<AtomicU64>) {
    let mut versions = live.versions();
    versions.mark_unchanged();
    while versions.changed().await.is_ok() {
        // wait for a quiet period; each change restarts it
        while let Ok(Ok(())) = tokio::time::timeout(debounce, versions.changed()).await {}
        match save(&live, &path).await {
            Ok(()) => {
                saves.fetch_add(1, Ordering::SeqCst);
            }
            Err(e) => {
                tracing::warn!(path = %path.display(), "autosave failed: {e}");
                live.emit(EventBody::SessionWarning {
                    message: format!("autosave to {} failed: {e}", path.display()),
                    names: Vec::new(),
                });
            }
        }
    }
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self::with_debounce(root, AUTOSAVE_DEBOUNCE)
    }

    pub fn with_debounce(root: impl Into<PathBuf>, debounce: Duration) -> Self {
        Self {
            root: root.into(),
            debounce,
            open: Mutex::new(HashMap::new()),
            loading: tokio::sync::Mutex::new(()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_of(&self, id: &CanvasId) -> PathBuf {
        self.root.join(format!("{id}.{FILE_EXTENSION}"))
    }

    fn bound(&self, id: &CanvasId) -> Option<Arc<Binding>> {
        self.open.lock().unwrap().get(id).cloned()
    }

    fn bind(&self, canvas: Canvas) -> Arc<Binding> {
        let id = canvas.id.clone();
        let path = self.path_of(&id);
        let live = LiveCanvas::new(canvas);
        let saves = Arc::new(AtomicU64::new(0));
        let autosave = tokio::spawn(autosave_loop(
            Arc::clone(&live),
            path.clone(),
            self.debounce,
            Arc::clone(&saves),
        ));
        let binding = Arc::new(Binding {
            live,
            path,
            saves,
            autosave,
        });
        self.open.lock().unwrap().insert(id, Arc::clone(&binding));
        binding
    }

    /// Ids of every canvas in memory or on disk.
    pub async fn list(&self) -> Result<Vec<CanvasSummary>, ApiError> {
        let mut found: BTreeMap<CanvasId, CanvasSummary> = BTreeMap::new();
        let mut dir = tokio::fs::read_dir(&self.root)
            .await
            .map_err(|e| ApiError::internal("workspace-io", e.to_string()))?;
        while let Some(entry) = dir
            .next_entry()
            .await
            .map_err(|e| ApiError::internal("workspace-io", e.to_string()))?
        {
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some(FILE_EXTENSION) {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else { continue };
            if validate_id(stem).is_ok() {
                let id = CanvasId::from(stem);
                found.insert(
                    id.clone(),
                    CanvasSummary {
                        id,
                        title: None,
                        loaded: false,
                    },
                );
            }
        }
        let open: Vec<Arc<Binding>> = self.open.lock().unwrap().values().cloned().collect();
        for binding in open {
            let id = binding.live.id().clone();
            let title = binding.live.lock().await.title.clone();
            found.insert(
                id.clone(),
                CanvasSummary {
                    id,
                    title: Some(title),
                    loaded: true,
                },
            );
        }
        Ok(found.into_values().collect())
    }

    /// The canvas, loading its file on first access.
    pub async fn get(&self, id: &CanvasId) -> Result<Arc<Binding>, ApiError> {
        if let Some(b) = self.bound(id) {
            return Ok(b);
        }
        validate_id(id.as_str()).map_err(|_| ApiError::not_found(format!("unknown canvas {id}")))?;
        let _guard = self.loading.lock().await;
        if let Some(b) = self.bound(id) {
            return Ok(b);
        }
        let path = self.path_of(id);
        let bytes = match tokio::fs::read(&path).await {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(ApiError::not_found(format!("unknown canvas {id}")))
            }
            Err(e) => return Err(ApiError::internal("workspace-io", e.to_string())),
        };
        let mut canvas = parse_2dntb(&bytes)?;
        // the file name is authoritative for the id
        canvas.id = id.clone();
        Ok(self.bind(canvas))
    }

    pub async fn live(&self, id: &CanvasId) -> Result<Arc<LiveCanvas>, ApiError> {
        Ok(Arc::clone(&self.get(id).await?.live))
    }

    pub async fn exists(&self, id: &CanvasId) -> bool {
        self.bound(id).is_some() || tokio::fs::try_exists(self.path_of(id)).await.unwrap_or(false)
    }

    /// Binds a new canvas and writes its file immediately.
    pub async fn create(&self, canvas: Canvas) -> Result<Arc<Binding>, ApiError> {
        validate_id(canvas.id.as_str())?;
        let _guard = self.loading.lock().await;
        if self.exists(&canvas.id).await {
            return Err(ApiError::conflict("canvas-exists", format!("canvas {} already exists", canvas.id)));
        }
        let binding = self.bind(canvas);
        save(&binding.live, &binding.path)
            .await
            .map_err(|e| ApiError::internal("workspace-io", e.to_string()))?;
        Ok(binding)
    }

    /// Swaps in new document contents, creating the binding if needed.
    /// Returns whether a previously bound canvas was replaced.
    pub async fn replace(&self, id: &CanvasId, mut canvas: Canvas) -> Result<(Arc<Binding>, bool), ApiError> {
        validate_id(id.as_str())?;
        canvas.id = id.clone();
        match self.get(id).await {
            Ok(binding) => {
                {
                    let mut doc = binding.live.lock().await;
                    *doc = canvas.clone();
                    binding.live.emit(EventBody::CanvasReplaced { canvas });
                }
                Ok((binding, true))
            }
            Err(e) if e.status == axum::http::StatusCode::NOT_FOUND => {
                let _guard = self.loading.lock().await;
                let binding = self.bind(canvas);
                save(&binding.live, &binding.path)
                    .await
                    .map_err(|e| ApiError::internal("workspace-io", e.to_string()))?;
                Ok((binding, false))
            }
            Err(e) => Err(e),
        }
    }

    /// Forgets the canvas and removes its file.
    pub async fn delete(&self, id: &CanvasId) -> Result<(), ApiError> {
        let was_open = self.open.lock().unwrap().remove(id).is_some();
        match tokio::fs::remove_file(self.path_of(id)).await {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && was_open => Ok(()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(ApiError::not_found(format!("unknown canvas {id}")))
            }
            Err(e) => Err(ApiError::internal("workspace-io", e.to_string())),
        }
    }

    /// Writes one canvas now, bypassing the debounce.
    pub async fn flush(&self, id: &CanvasId) -> std::io::Result<()> {
        match self.bound(id) {
            Some(b) => save(&b.live, &b.path).await,
            None => Ok(()),
        }
    }

    pub async fn flush_all(&self) {
        let open: Vec<Arc<Binding>> = self.open.lock().unwrap().values().cloned().collect();
        for b in open {
            if let Err(e) = save(&b.live, &b.path).await {
                tracing::warn!(path = %b.path.display(), "final save failed: {e}");
            }
        }
    }

    /// Smallest `canvas-<n>` id not yet in use.
    pub async fn fresh_id(&self) -> CanvasId {
        let mut n = 1u64;
        loop {
            let id = CanvasId::new(format!("canvas-{n}"));
            if !self.exists(&id).await {
                return id;
            }
            n += 1;
        }
    }
}
