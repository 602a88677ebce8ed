//! Document model, file formats and worker wire protocol for
//! two-dimensional computational canvases.

pub mod codec;
pub mod events;
pub mod geometry;
pub mod ids;
pub mod model;
pub mod protocol;

pub use geometry::{Delta, Point, Rect};
pub use ids::{CanvasId, CellId, EnvId, OutputId, SessionId};
pub use model::{Canvas, Cell, Environment, Mime, ModelError, OutputCell, OutputItem, ProducedBy, Route};
