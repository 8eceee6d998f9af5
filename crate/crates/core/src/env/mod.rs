//! Synthetic environments: a planar pick-and-place simulator and a
//! symbolic blocks-world planner domain.

pub mod blockworld;
pub mod dataset;
pub mod manip;
