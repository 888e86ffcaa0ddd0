//! Run reports: latency, message accounting, stabilization, verdicts.
//! The CSV schema mirrors the JSON field-for-field.

use crate::registers::NodeId;
use crate::sim::KindStats;
use serde::Serialize;
use std::collections::BTreeMap;

pub const REPORT_SCHEMA: &str = "snapsim-report-v1";

#[derive(Clone, Debug, Serialize)]
pub struct OpLatency {
    pub node: NodeId,
    pub write: bool,
    pub invoke_step: u64,
    pub respond_step: u64,
    pub invoke_cycle: u64,
    pub respond_cycle: u64,
}

impl OpLatency {
    pub fn steps(&self) -> u64 {
        self.respond_step - self.invoke_step
    }

    pub fn cycles(&self) -> u64 {
        self.respond_cycle - self.invoke_cycle
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub schema: String,
    pub scenario: String,
    pub algorithm: String,
    pub n: usize,
    pub f: usize,
    pub delta: u64,
    pub seed: u64,
    pub steps: u64,
    pub cycles: u64,
    pub deadlock: bool,
    pub ops_completed: usize,
    pub ops_open: usize,
    pub writes_completed: u64,
    pub snapshots_completed: u64,
    /// First step after which the consistency audit stayed empty.
    pub stabilization_step: Option<u64>,
    pub stabilization_cycle: Option<u64>,
    pub final_violations: usize,
    pub linearizable: Option<bool>,
    pub messages: BTreeMap<String, KindStats>,
    /// Envelopes attributed to operation quorum rounds, per completed op.
    /// Gossip is never attributed to operations.
    pub msgs_per_write: Option<f64>,
    pub msgs_per_snapshot: Option<f64>,
    pub gossip_sent: u64,
    pub ops: Vec<OpLatency>,
    /// Windows during which every node was cooperating on a common snapshot
    /// batch (write-blocking phases), and completed writes between them.
    pub write_block_phases: u64,
    pub writes_between_phases: Vec<u64>,
    pub resets_applied: u32,
    pub aborted_ops: u32,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn csv_header() -> String {
        [
            "schema",
            "scenario",
            "algorithm",
            "n",
            "f",
            "delta",
            "seed",
            "steps",
            "cycles",
            "deadlock",
            "ops_completed",
            "ops_open",
            "writes_completed",
            "snapshots_completed",
            "stabilization_step",
            "stabilization_cycle",
            "final_violations",
            "linearizable",
            "msgs_per_write",
            "msgs_per_snapshot",
            "gossip_sent",
            "write_block_phases",
            "resets_applied",
            "aborted_ops",
        ]
        .join(",")
    }

    pub fn csv_row(&self) -> String {
        fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
            v.as_ref().map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.schema.clone(),
            self.scenario.clone(),
            self.algorithm.clone(),
            self.n.to_string(),
            self.f.to_string(),
            self.delta.to_string(),
            self.seed.to_string(),
            self.steps.to_string(),
            self.cycles.to_string(),
            self.deadlock.to_string(),
            self.ops_completed.to_string(),
            self.ops_open.to_string(),
            self.writes_completed.to_string(),
            self.snapshots_completed.to_string(),
            opt(&self.stabilization_step),
            opt(&self.stabilization_cycle),
            self.final_violations.to_string(),
            opt(&self.linearizable),
            opt(&self.msgs_per_write),
            opt(&self.msgs_per_snapshot),
            self.gossip_sent.to_string(),
            self.write_block_phases.to_string(),
            self.resets_applied.to_string(),
            self.aborted_ops.to_string(),
        ]
        .join(",")
    }

    /// Exit-status contribution: verdict positive (or absent) and no
    /// deadlock and no lingering violations.
    pub fn healthy(&self) -> bool {
        !self.deadlock && self.final_violations == 0 && self.linearizable.unwrap_or(true)
    }
}
