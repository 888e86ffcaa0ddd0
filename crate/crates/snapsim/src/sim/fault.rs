//! Fault plans: benign packet faults under the fairness cap, crash/resume
//! schedules, and the transient (arbitrary-corruption) recipe applied before
//! the execution starts.

use crate::registers::NodeId;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashAction {
    Crash,
    Resume,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CrashEvent {
    pub node: NodeId,
    pub step: u64,
    pub action: CrashAction,
}

/// An explicit single-field state edit, applied at step 0.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateEdit {
    SetTs { node: NodeId, value: u64 },
    SetSsn { node: NodeId, value: u64 },
    SetSns { node: NodeId, value: u64 },
    /// Forge a register cell. The value is synthesized deterministically from
    /// (slot, ts) so repeated forgeries can never couple one timestamp with
    /// two different values.
    ForgeRegEntry { node: NodeId, slot: NodeId, ts: u64 },
    ForgePndTask {
        node: NodeId,
        slot: NodeId,
        sns: u64,
        vc: Option<Vec<u64>>,
        forge_fnl: bool,
    },
    /// Insert a forged envelope into a channel.
    ForgeChannel {
        src: NodeId,
        dst: NodeId,
        env: ForgedEnvelope,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgedEnvelope {
    StaleSnapshotAck { ssn: u64, entry_ts: u64 },
    StaleSnapshot { ssn: u64, entry_ts: u64 },
    StaleGossip { entry_ts: u64, sns: Option<u64> },
    ForgedSave { node: NodeId, sns: u64 },
}

/// Transient corruption applied once, before the first step.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TransientFault {
    #[default]
    None,
    Explicit {
        edits: Vec<StateEdit>,
    },
    /// Randomized corruption drawn from the scenario RNG: operation indices
    /// in [0, max_index], forged channel contents, forged task records.
    Randomized {
        max_index: u64,
        corrupt_channels: bool,
        forge_pndtsk: bool,
        forge_reg_entries: bool,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FaultPlan {
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub dup_rate: f64,
    #[serde(default)]
    pub reorder: bool,
    #[serde(default)]
    pub crash_schedule: Vec<CrashEvent>,
    #[serde(default)]
    pub transient: TransientFault,
    /// Applies the transient recipe a second time mid-run; exploratory only,
    /// excluded from acceptance scenarios.
    #[serde(default)]
    pub adversarial_midrun_at: Option<u64>,
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            drop_rate: 0.0,
            dup_rate: 0.0,
            reorder: false,
            crash_schedule: Vec::new(),
            transient: TransientFault::None,
            adversarial_midrun_at: None,
        }
    }
}

impl FaultPlan {
    /// Largest number of simultaneously crashed nodes the schedule produces.
    pub fn max_simultaneous_crashes(&self) -> usize {
        let mut events = self.crash_schedule.clone();
        events.sort_by_key(|e| e.step);
        let mut down = std::collections::BTreeSet::new();
        let mut peak = 0;
        for e in events {
            match e.action {
                CrashAction::Crash => {
                    down.insert(e.node);
                }
                CrashAction::Resume => {
                    down.remove(&e.node);
                }
            }
            peak = peak.max(down.len());
        }
        peak
    }
}
