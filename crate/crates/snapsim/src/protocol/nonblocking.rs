//! The self-stabilizing non-blocking snapshot node: write and snapshot run
//! quorum rounds directly on the client side, the do-forever loop gossips
//! register entries and repairs the write index, and server handlers fold
//! arriving arrays into the local replica.
//!
//! With `sstab` disabled the node degrades to the underlying non-stabilizing
//! protocol (no gossip, no index repair, no stale-ack purge), which serves as
//! a differential-testing baseline.

use super::{Effects, NodeEvent, Op};
use crate::quorum::{AckMatcher, QuorumRound};
use crate::registers::{entry_max, merge, NodeId, RegisterArray, Value};
use crate::wire::Payload;

#[derive(Clone, Debug)]
pub enum NbOp {
    Idle,
    Write { lreg: RegisterArray },
    Snapshot { prev: RegisterArray },
}

pub struct NbNode {
    pub id: NodeId,
    pub n: usize,
    /// False recovers the non-stabilizing baseline: the boxed additions
    /// (gossip, ts repair in merge and housekeeping, stale-ack purge) are
    /// disabled and nothing else changes.
    pub sstab: bool,
    pub ts: u64,
    pub ssn: u64,
    pub reg: RegisterArray,
    pub op: NbOp,
    pub round: Option<QuorumRound>,
}

impl NbNode {
    pub fn new(id: NodeId, n: usize, sstab: bool) -> Self {
        NbNode {
            id,
            n,
            sstab,
            ts: 0,
            ssn: 0,
            reg: RegisterArray::bottom(n),
            op: NbOp::Idle,
            round: None,
        }
    }

    pub fn op_active(&self) -> bool {
        !matches!(self.op, NbOp::Idle)
    }

    pub fn bg_step(&mut self, fx: &mut Effects) {
        if self.sstab {
            fx.event(NodeEvent::PurgeStaleSnapshotAcks { keep_ssn: self.ssn });
            self.ts = self.ts.max(self.reg[self.id].ts());
            for k in 0..self.n {
                if k != self.id {
                    fx.send(
                        k,
                        Payload::Gossip {
                            entry: self.reg[k].clone(),
                            sns: None,
                        },
                    );
                }
            }
        }
        fx.event(NodeEvent::HkPass);
    }

    pub fn invoke(&mut self, op: Op, fx: &mut Effects) {
        assert!(!self.op_active(), "one operation at a time per node");
        assert!(self.round.is_none());
        match op {
            Op::Write(v) => {
                self.ts += 1;
                self.reg[self.id] = crate::registers::RegisterEntry::written(v, self.ts);
                let lreg = self.reg.clone();
                self.round = Some(QuorumRound::new(
                    AckMatcher::WriteSuperset { lreg: lreg.clone() },
                    self.n,
                ));
                self.broadcast(fx, Payload::Write { reg: lreg.clone() });
                self.op = NbOp::Write { lreg };
            }
            Op::Snapshot => {
                let prev = self.reg.clone();
                self.start_snapshot_round(fx);
                self.op = NbOp::Snapshot { prev };
            }
        }
    }

    fn start_snapshot_round(&mut self, fx: &mut Effects) {
        self.ssn += 1;
        self.round = Some(QuorumRound::new(
            AckMatcher::SnapshotSsn { ssn: self.ssn },
            self.n,
        ));
        self.broadcast(
            fx,
            Payload::Snapshot {
                tasks: None,
                reg: self.reg.clone(),
                ssn: self.ssn,
            },
        );
    }

    fn broadcast(&self, fx: &mut Effects, payload: Payload) {
        for k in 0..self.n {
            fx.send(k, payload.clone());
        }
    }

    pub fn op_step(&mut self, fx: &mut Effects) {
        let round_met = self.round.as_ref().map(|r| r.met()).unwrap_or(false);
        match std::mem::replace(&mut self.op, NbOp::Idle) {
            NbOp::Idle => {}
            NbOp::Write { lreg } => {
                if round_met {
                    let round = self.round.take().unwrap();
                    merge(
                        self.id,
                        &mut self.ts,
                        &mut self.reg,
                        round.received_arrays(),
                        self.sstab,
                    );
                    fx.event(NodeEvent::RoundComplete);
                    fx.event(NodeEvent::Responded {
                        op_is_write: true,
                        snapshot_result: None,
                    });
                } else {
                    self.broadcast(fx, Payload::Write { reg: lreg.clone() });
                    self.op = NbOp::Write { lreg };
                }
            }
            NbOp::Snapshot { prev } => {
                if round_met {
                    let round = self.round.take().unwrap();
                    merge(
                        self.id,
                        &mut self.ts,
                        &mut self.reg,
                        round.received_arrays(),
                        self.sstab,
                    );
                    fx.event(NodeEvent::RoundComplete);
                    if self.reg == prev {
                        fx.event(NodeEvent::Responded {
                            op_is_write: false,
                            snapshot_result: Some(self.reg.clone()),
                        });
                    } else {
                        fx.event(NodeEvent::OuterPass);
                        let prev = self.reg.clone();
                        self.start_snapshot_round(fx);
                        self.op = NbOp::Snapshot { prev };
                    }
                } else {
                    // Retransmit with the current register view and query index.
                    self.broadcast(
                        fx,
                        Payload::Snapshot {
                            tasks: None,
                            reg: self.reg.clone(),
                            ssn: self.ssn,
                        },
                    );
                    self.op = NbOp::Snapshot { prev };
                }
            }
        }
    }

    pub fn on_deliver(&mut self, from: NodeId, payload: Payload, fx: &mut Effects) {
        match payload {
            Payload::Write { reg: reg_j } => {
                self.fold_array(&reg_j);
                fx.send(
                    from,
                    Payload::WriteAck {
                        reg: self.reg.clone(),
                    },
                );
            }
            Payload::Snapshot { reg: reg_j, ssn, .. } => {
                self.fold_array(&reg_j);
                fx.send(
                    from,
                    Payload::SnapshotAck {
                        reg: self.reg.clone(),
                        ssn,
                    },
                );
            }
            Payload::Gossip { entry, .. } => {
                if self.sstab {
                    let me = self.id;
                    self.reg[me] = entry_max(&self.reg[me], &entry);
                    self.ts = self.ts.max(self.reg[me].ts());
                }
            }
            ack @ (Payload::WriteAck { .. } | Payload::SnapshotAck { .. }) => {
                if let Some(round) = &mut self.round {
                    round.offer(from, &ack);
                }
                // No active round or no match: stale reply, dropped.
            }
            Payload::Save { .. } | Payload::SaveAck { .. } => {
                // Not part of this protocol; corrupted channels may carry
                // them, and they are ignored.
            }
        }
    }

    fn fold_array(&mut self, other: &RegisterArray) {
        for k in 0..self.n {
            self.reg[k] = entry_max(&self.reg[k], &other[k]);
        }
    }
}

/// Convenience used by tests and the workload generator.
pub fn write_value(node: NodeId, ordinal: u64, width: usize) -> Value {
    Value::encoded(node, ordinal, width)
}
