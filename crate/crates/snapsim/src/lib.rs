//! Deterministic simulator, protocol library, and consistency checker for
//! self-stabilizing quorum-replicated snapshot objects.
//!
//! The crate is organized around a single-threaded simulated world
//! ([`sim::World`]) that drives event-driven protocol nodes
//! ([`protocol::ProtocolNode`]) over lossy bounded channels. Histories and
//! traces produced by a run are analyzed offline by the [`checker`] module
//! (linearizability, state-consistency audit, asynchronous-cycle counting),
//! and the [`harness`] module packages scenarios, workloads, metrics, and
//! sweeps behind a CLI.

pub mod checker;
pub mod harness;
pub mod protocol;
pub mod quorum;
pub mod registers;
pub mod reset;
pub mod sim;
pub mod wire;

pub use registers::{NodeId, RegisterArray, RegisterEntry, Value, VectorClock};
