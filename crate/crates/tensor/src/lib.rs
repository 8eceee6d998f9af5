//! Minimal dense tensor algebra with reverse-mode differentiation.
//!
//! The design is a flat tape: every operation appends a node holding its
//! forward value and enough information to push gradients back to its
//! inputs. Graphs are rebuilt per training step. Production training runs
//! in `f32`; gradient verification builds the same graphs in `f64`.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod rng;

pub use graph::{NodeId, Scalar, Tape, TensorError};
pub use optim::{AdamW, AdamWConfig};
pub use params::{ParamStore, Parameter};
