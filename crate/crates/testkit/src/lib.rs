//! Generators shared by the property and acceptance suites.

pub mod api;
pub mod canvases;
pub mod programs;
