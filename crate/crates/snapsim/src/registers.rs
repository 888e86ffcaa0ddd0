//! Ordered register entries, register arrays, the timestamp ordering, the
//! merge procedure, and vector-clock extraction shared by both protocols.
//!
//! All functions here are pure value-level operations: no randomness, no
//! ambient time, no shared state.

use serde::{Deserialize, Serialize};

/// Node identifier, an index into the scenario's node vector.
pub type NodeId = usize;

/// An opaque register value of fixed (per scenario) byte width.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Value(pub Vec<u8>);

impl std::fmt::Debug for Value {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "v")?;
        for b in &self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl Value {
    /// Deterministic value encoding a (writer, ordinal) pair, padded to
    /// `width` bytes. Used by workload generators so that every written
    /// value in a run is distinct.
    pub fn encoded(writer: NodeId, ordinal: u64, width: usize) -> Self {
        let mut bytes = vec![0u8; width.max(10)];
        bytes[0..2].copy_from_slice(&(writer as u16).to_be_bytes());
        bytes[2..10].copy_from_slice(&ordinal.to_be_bytes());
        bytes.truncate(width.max(10));
        Value(bytes)
    }
}

/// One register cell: either never written (`Bottom`, the minimum of the
/// ordering) or a written value paired with the writer's operation index.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RegisterEntry {
    Bottom,
    Written { value: Value, ts: u64 },
}

impl std::fmt::Debug for RegisterEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegisterEntry::Bottom => write!(f, "⊥"),
            RegisterEntry::Written { value, ts } => write!(f, "({value:?},{ts})"),
        }
    }
}

impl RegisterEntry {
    pub fn written(value: Value, ts: u64) -> Self {
        RegisterEntry::Written { value, ts }
    }

    /// Bottom carries timestamp 0, which makes it minimal in the ordering.
    pub fn ts(&self) -> u64 {
        match self {
            RegisterEntry::Bottom => 0,
            RegisterEntry::Written { ts, .. } => *ts,
        }
    }

    pub fn is_bottom(&self) -> bool {
        matches!(self, RegisterEntry::Bottom)
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            RegisterEntry::Bottom => None,
            RegisterEntry::Written { value, .. } => Some(value),
        }
    }
}

/// `a ⪯ b`: entries compare by timestamp only; values are ignored.
pub fn entry_leq(a: &RegisterEntry, b: &RegisterEntry) -> bool {
    a.ts() <= b.ts()
}

/// The larger-timestamp entry. Ties keep the first argument; within a
/// consistent execution equal timestamps from one writer carry equal values,
/// and the audit flags the corrupted case instead of ordering it.
pub fn entry_max(a: &RegisterEntry, b: &RegisterEntry) -> RegisterEntry {
    if b.ts() > a.ts() {
        b.clone()
    } else {
        a.clone()
    }
}

/// A full replica of the shared object: one entry per node, entry `k`
/// holding node `k`'s register.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RegisterArray(pub Vec<RegisterEntry>);

impl std::fmt::Debug for RegisterArray {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl RegisterArray {
    pub fn bottom(n: usize) -> Self {
        RegisterArray(vec![RegisterEntry::Bottom; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Index<NodeId> for RegisterArray {
    type Output = RegisterEntry;
    fn index(&self, k: NodeId) -> &RegisterEntry {
        &self.0[k]
    }
}

impl std::ops::IndexMut<NodeId> for RegisterArray {
    fn index_mut(&mut self, k: NodeId) -> &mut RegisterEntry {
        &mut self.0[k]
    }
}

/// Pointwise `⪯` over arrays. Lengths must match; a mismatch is a scenario
/// configuration defect caught at validation time.
pub fn array_leq(a: &RegisterArray, b: &RegisterArray) -> bool {
    assert_eq!(a.len(), b.len(), "register array length mismatch");
    a.0.iter().zip(b.0.iter()).all(|(x, y)| entry_leq(x, y))
}

/// Per-node timestamps of an array; 0 stands in for Bottom.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VectorClock(pub Vec<u64>);

impl VectorClock {
    /// Pointwise `⪯` on clocks.
    pub fn leq(&self, other: &VectorClock) -> bool {
        assert_eq!(self.0.len(), other.0.len());
        self.0.iter().zip(other.0.iter()).all(|(a, b)| a <= b)
    }

    /// Saturating pointwise difference summed over all components.
    /// Negative components cannot occur once vector clocks are consistent;
    /// saturation keeps the first cycles after corruption from underflowing.
    pub fn sum_diff_from(&self, earlier: &VectorClock) -> u64 {
        assert_eq!(self.0.len(), earlier.0.len());
        self.0
            .iter()
            .zip(earlier.0.iter())
            .map(|(now, then)| now.saturating_sub(*then))
            .sum()
    }
}

/// Projects the timestamps out of a register array.
pub fn vector_clock(reg: &RegisterArray) -> VectorClock {
    VectorClock(reg.0.iter().map(|e| e.ts()).collect())
}

/// The client-side merge macro: fold a set of received arrays into the local
/// replica entry-by-entry, and (when `repair_ts` is set, the self-stabilizing
/// variant) also raise the local write index to cover the node's own entry as
/// seen by itself and by every received array.
pub fn merge(
    own: NodeId,
    ts: &mut u64,
    reg: &mut RegisterArray,
    received: &[RegisterArray],
    repair_ts: bool,
) {
    if repair_ts {
        let mut top = (*ts).max(reg[own].ts());
        for r in received {
            top = top.max(r[own].ts());
        }
        *ts = top;
    }
    for r in received {
        debug_assert_eq!(r.len(), reg.len());
        for k in 0..reg.len() {
            if r[k].ts() > reg[k].ts() {
                reg[k] = r[k].clone();
            }
        }
    }
}
