//! Composition-aware optimization of 3D Gaussian scenes.
//!
//! A scene is described as a graph of objects and relationship edges, each
//! object backed by its own partition of a shared Gaussian cloud. Guidance
//! comes from a procedural score-distillation surrogate, and the optimizer
//! implements four schedules for combining object-, edge- and scene-level
//! objectives, including the staged structure-then-detail curriculum.

pub mod camera;
pub mod cloud;
pub mod error;
pub mod guidance;
pub mod image_io;
pub mod optim;
pub mod ply;
pub mod primitive;
pub mod raster;
pub mod scene;
pub mod trace;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
