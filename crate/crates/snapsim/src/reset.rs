//! Bounded-counter handling: once any stored operation index reaches the
//! configured overflow threshold, the node stops admitting new operations;
//! running ones finish, gossip keeps propagating maxima, and once every node
//! is frozen, idle, and mutually consistent, all indices are rewritten to
//! zero while register values stay untouched.

use crate::protocol::ProtocolNode;
use crate::registers::RegisterEntry;
use crate::sim::{TraceEvent, World};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResetPhase {
    Normal,
    Frozen,
}

#[derive(Clone, Debug)]
pub struct ResetController {
    pub maxint: u64,
    pub phase: ResetPhase,
    frozen: Vec<bool>,
    pub resets_applied: u32,
    pub aborted_ops: u32,
    pub last_reset_step: Option<u64>,
}

impl ResetController {
    pub fn new(n: usize, maxint: u64) -> Self {
        ResetController {
            maxint,
            phase: ResetPhase::Normal,
            frozen: vec![false; n],
            resets_applied: 0,
            aborted_ops: 0,
            last_reset_step: None,
        }
    }

    pub fn frozen(&self, node: usize) -> bool {
        self.frozen[node]
    }

    pub fn any_frozen(&self) -> bool {
        self.frozen.iter().any(|&f| f)
    }

    /// Any operation index stored at the node, including register and task
    /// copies, at or beyond the threshold.
    pub fn node_overflowed(node: &ProtocolNode, maxint: u64) -> bool {
        match node {
            ProtocolNode::Nb(n) => {
                n.ts >= maxint || n.ssn >= maxint || n.reg.0.iter().any(|e| e.ts() >= maxint)
            }
            ProtocolNode::At(n) => {
                n.ts >= maxint
                    || n.ssn >= maxint
                    || n.sns >= maxint
                    || n.reg.0.iter().any(|e| e.ts() >= maxint)
                    || n.pnd.iter().any(|t| t.sns >= maxint)
            }
        }
    }

    /// Called by the world after every step.
    pub fn post_step(&mut self, world: &mut World) {
        for i in 0..world.n() {
            if !self.frozen[i] && Self::node_overflowed(&world.nodes[i], self.maxint) {
                self.frozen[i] = true;
                world.trace.push(world.step, TraceEvent::Freeze { node: i });
            }
        }
        if self.phase == ResetPhase::Normal && self.frozen.iter().all(|&f| f) {
            self.phase = ResetPhase::Frozen;
        }
        if self.phase == ResetPhase::Frozen && self.ready_to_reset(world) {
            self.apply_reset(world);
        }
    }

    /// Reset fires only at global quiescence: every node frozen and idle
    /// (no open operation, no active quorum round), no non-gossip envelope
    /// in transit, and the consistency audit empty, which pins every node's
    /// own register copy as the per-owner maximum.
    fn ready_to_reset(&self, world: &mut World) -> bool {
        for i in 0..world.n() {
            if world.crashed[i] {
                // A crashed node stalls the reset; acceptable under the
                // seldom-fairness model, reported by the harness as
                // non-termination of the reset.
                return false;
            }
            match &world.nodes[i] {
                ProtocolNode::Nb(n) => {
                    if n.op_active() || n.round.is_some() {
                        return false;
                    }
                }
                ProtocolNode::At(n) => {
                    if n.write_open
                        || n.snapshot_open
                        || n.round.is_some()
                        || n.write_pending.is_some()
                        || !matches!(
                            n.bg,
                            crate::protocol::terminating::AtBg::Housekeeping
                                | crate::protocol::terminating::AtBg::Dispatch
                                | crate::protocol::terminating::AtBg::DispatchSnapshotOnly
                        )
                    {
                        return false;
                    }
                }
            }
        }
        if world
            .in_transit()
            .any(|e| e.payload.kind() != crate::wire::MsgKind::Gossip)
        {
            return false;
        }
        world.run_audit() == 0
    }

    fn apply_reset(&mut self, world: &mut World) {
        let n = world.n();
        // The owner's own copy is the authoritative maximum (audit-checked);
        // every replica adopts its value with the index reset to zero.
        let authoritative: Vec<RegisterEntry> = (0..n)
            .map(|k| match &world.nodes[k] {
                ProtocolNode::Nb(node) => node.reg[k].clone(),
                ProtocolNode::At(node) => node.reg[k].clone(),
            })
            .collect();
        let zeroed: Vec<RegisterEntry> = authoritative
            .iter()
            .map(|e| match e {
                RegisterEntry::Bottom => RegisterEntry::Bottom,
                RegisterEntry::Written { value, .. } => RegisterEntry::Written {
                    value: value.clone(),
                    ts: 0,
                },
            })
            .collect();
        for i in 0..n {
            match &mut world.nodes[i] {
                ProtocolNode::Nb(node) => {
                    node.ts = 0;
                    node.ssn = 0;
                    for k in 0..n {
                        node.reg[k] = zeroed[k].clone();
                    }
                }
                ProtocolNode::At(node) => {
                    node.ts = 0;
                    node.ssn = 0;
                    node.sns = 0;
                    for k in 0..n {
                        node.reg[k] = zeroed[k].clone();
                    }
                    for t in node.pnd.iter_mut() {
                        *t = crate::protocol::PendingTask::initial();
                    }
                }
            }
        }
        // In-transit payloads still carry pre-reset indices; they are part of
        // the state being replaced.
        for src in 0..n {
            for dst in 0..n {
                if src != dst {
                    world.channel_mut(src, dst).clear();
                }
            }
        }
        for f in self.frozen.iter_mut() {
            *f = false;
        }
        self.phase = ResetPhase::Normal;
        self.resets_applied += 1;
        self.last_reset_step = Some(world.step);
        world.trace.push(world.step, TraceEvent::ResetApplied);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::NbNode;
    use crate::registers::Value;

    #[test]
    fn overflow_detection_examples() {
        let maxint = 1 << 16;
        let mut node = NbNode::new(0, 3, true);
        assert!(!ResetController::node_overflowed(
            &ProtocolNode::Nb(NbNode::new(0, 3, true)),
            maxint
        ));
        node.ts = maxint;
        assert!(ResetController::node_overflowed(
            &ProtocolNode::Nb(node),
            maxint
        ));
        // One write starting at MAXINT-1 crosses the threshold.
        let mut node = NbNode::new(0, 3, true);
        node.ts = maxint - 1;
        let mut fx = crate::protocol::Effects::default();
        node.invoke(crate::protocol::Op::Write(Value(vec![1])), &mut fx);
        assert!(ResetController::node_overflowed(
            &ProtocolNode::Nb(node),
            maxint
        ));
    }
}
