//! The quorum-based request/reply sub-state-machine run inside each node: a
//! round repeatedly re-broadcasts its request until replies satisfying its
//! return condition arrive from a majority (or a special condition ends it
//! early). Round state is erased in full when the round returns.

use crate::registers::{array_leq, NodeId, RegisterArray};
use crate::wire::Payload;
use std::collections::BTreeSet;

/// Majority including the initiator's own local delivery.
pub fn majority(n: usize) -> usize {
    n / 2 + 1
}

/// What counts as a matching reply for the active round.
#[derive(Clone, Debug)]
pub enum AckMatcher {
    /// WRITEack whose array dominates the written array.
    WriteSuperset { lreg: RegisterArray },
    /// SNAPSHOTack echoing the round's query index.
    SnapshotSsn { ssn: u64 },
    /// SAVEack carrying exactly the stored (node, sns) pairs.
    SavePairs { pairs: Vec<(NodeId, u64)> },
}

/// One in-flight quorum round. A node runs at most one at a time; the round
/// is dropped wholesale when its condition fires.
#[derive(Clone, Debug)]
pub struct QuorumRound {
    pub matcher: AckMatcher,
    ackers: BTreeSet<NodeId>,
    /// Matching reply arrays, one per acker, kept for the merge that follows.
    regs: Vec<RegisterArray>,
    majority: usize,
}

impl QuorumRound {
    pub fn new(matcher: AckMatcher, n: usize) -> Self {
        QuorumRound {
            matcher,
            ackers: BTreeSet::new(),
            regs: Vec::new(),
            majority: majority(n),
        }
    }

    /// Record a reply if it matches the round. Duplicates from one sender
    /// collapse; non-matching payloads are dropped silently (stale acks).
    /// Returns true when the payload matched.
    pub fn offer(&mut self, from: NodeId, payload: &Payload) -> bool {
        let reg = match (&self.matcher, payload) {
            (AckMatcher::WriteSuperset { lreg }, Payload::WriteAck { reg })
                if array_leq(lreg, reg) =>
            {
                Some(reg.clone())
            }
            (AckMatcher::SnapshotSsn { ssn }, Payload::SnapshotAck { reg, ssn: got })
                if got == ssn =>
            {
                Some(reg.clone())
            }
            (AckMatcher::SavePairs { pairs }, Payload::SaveAck { entries })
                if entries == pairs =>
            {
                None
            }
            _ => return false,
        };
        if self.ackers.insert(from) {
            if let Some(reg) = reg {
                self.regs.push(reg);
            }
        }
        true
    }

    pub fn met(&self) -> bool {
        self.ackers.len() >= self.majority
    }

    pub fn received_arrays(&self) -> &[RegisterArray] {
        &self.regs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registers::{RegisterEntry, Value};

    fn arr(ts0: u64, ts1: u64, ts2: u64) -> RegisterArray {
        RegisterArray(
            [ts0, ts1, ts2]
                .iter()
                .map(|&t| {
                    if t == 0 {
                        RegisterEntry::Bottom
                    } else {
                        RegisterEntry::written(Value(vec![t as u8]), t)
                    }
                })
                .collect(),
        )
    }

    #[test]
    fn write_round_needs_majority_of_dominating_acks() {
        let lreg = arr(1, 0, 0);
        let mut round = QuorumRound::new(AckMatcher::WriteSuperset { lreg: lreg.clone() }, 3);
        assert!(!round.met());
        assert!(round.offer(0, &Payload::WriteAck { reg: lreg.clone() }));
        // A stale ack that does not dominate is ignored.
        assert!(!round.offer(1, &Payload::WriteAck { reg: arr(0, 0, 0) }));
        assert!(!round.met());
        assert!(round.offer(1, &Payload::WriteAck { reg: arr(1, 2, 0) }));
        assert!(round.met()); // majority of 3 is 2
        assert_eq!(round.received_arrays().len(), 2);
    }

    #[test]
    fn duplicate_acks_from_one_sender_count_once() {
        let mut round = QuorumRound::new(AckMatcher::SnapshotSsn { ssn: 4 }, 3);
        let ack = Payload::SnapshotAck {
            reg: arr(0, 0, 0),
            ssn: 4,
        };
        assert!(round.offer(2, &ack));
        assert!(round.offer(2, &ack));
        assert!(!round.met());
        assert_eq!(round.received_arrays().len(), 1);
    }

    #[test]
    fn stale_ssn_acks_are_ignored() {
        let mut round = QuorumRound::new(AckMatcher::SnapshotSsn { ssn: 4 }, 3);
        assert!(!round.offer(
            1,
            &Payload::SnapshotAck {
                reg: arr(0, 0, 0),
                ssn: 999,
            }
        ));
        assert!(!round.met());
    }

    #[test]
    fn save_round_matches_exact_pair_set() {
        let pairs = vec![(0usize, 3u64), (2, 1)];
        let mut round = QuorumRound::new(AckMatcher::SavePairs { pairs: pairs.clone() }, 3);
        assert!(!round.offer(
            0,
            &Payload::SaveAck {
                entries: vec![(0, 3)],
            }
        ));
        assert!(round.offer(0, &Payload::SaveAck { entries: pairs.clone() }));
        assert!(round.offer(1, &Payload::SaveAck { entries: pairs }));
        assert!(round.met());
    }
}
