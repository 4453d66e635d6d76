//! Heterogeneous graph-based trajectory prediction.
//!
//! The crate is `no_std` + `alloc`. Everything here is pure computation:
//! lane-graph geometry, semantic scene graphs, anchor paths, map rasters,
//! a small reverse-mode autodiff engine, the prediction network and the
//! evaluation metrics. File formats, IO and the command line live in the
//! `hgtraj` companion crate.
//!
//! Enable the `std` feature to let the GEMM kernel pick SIMD code paths at
//! runtime.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geom;
pub mod gradsuite;
pub mod graph;
pub mod lane;
pub mod model;
pub mod pipeline;
pub mod scene;
pub mod ssg;
pub mod synth;

pub use error::{Error, Result};
pub use geom::Vec2;
