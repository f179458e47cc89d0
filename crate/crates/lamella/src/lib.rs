//! Semantic-decomposed implicit fields for layered characters.
//!
//! The crate covers the full desk-scale pipeline: procedural ground-truth
//! scenes, semantic-aware volume rendering, dense-grid fitting with staged
//! multi-level supervision, semantic-equivalent SDF extraction into per-layer
//! meshes, collision-constrained mesh refinement, color back-projection, and
//! geometry metrics. The `lamella` binary drives it end to end.

pub mod camera;
pub mod config;
pub mod error;
pub mod extract;
pub mod field;
pub mod fit;
pub mod io;
pub mod mesh;
pub mod metrics;
pub mod pipeline;
pub mod refine;
pub mod render;
pub mod scene;
pub mod semantic;
pub mod spatial;
pub mod texture;

pub use error::{Error, Result};
