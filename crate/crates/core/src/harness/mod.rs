//! Training, evaluation, sweeping, and metric emission.

pub mod blockworld_run;
pub mod eval;
pub mod metrics;
pub mod policies;
pub mod report;
pub mod runconfig;
pub mod sweep;
pub mod train;
