//! Offline analysis of runs: history recording, linearizability verification
//! against the single-writer snapshot sequential specification, whole-world
//! consistency auditing, and asynchronous-cycle measurement.

pub mod audit;
pub mod cycles;
pub mod history;
pub mod linearize;

pub use audit::{audit_consistency, audit_count, Violation};
pub use cycles::{count_async_cycles, CycleTracker, CycleTrace};
pub use history::{EventKind, History, HistoryEvent};
pub use linearize::{check_exhaustive, check_linearizable, check_polynomial, Verdict};
