//! Event-driven protocol nodes. Each node is a deterministic state machine
//! advanced one atomic step at a time by the simulator that owns the world:
//! a background step (the do-forever loop), an operation step (client-side
//! progress), or a message delivery.

pub mod nonblocking;
pub mod terminating;

use crate::registers::{NodeId, RegisterArray, Value};
use crate::wire::Payload;
use serde::{Deserialize, Serialize};

pub use nonblocking::NbNode;
pub use terminating::{AtNode, PendingTask};

/// An operation invocation as issued by the workload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Op {
    Write(Value),
    Snapshot,
}

impl Op {
    pub fn is_write(&self) -> bool {
        matches!(self, Op::Write(_))
    }
}

/// Side effects of one node step, routed by the world: envelopes to send
/// (destination may be the node itself, which the world delivers within the
/// same atomic step) and bookkeeping events.
#[derive(Default)]
pub struct Effects {
    pub sends: Vec<(NodeId, Payload)>,
    pub events: Vec<NodeEvent>,
}

impl Effects {
    pub fn send(&mut self, dst: NodeId, payload: Payload) {
        self.sends.push((dst, payload));
    }

    pub fn event(&mut self, ev: NodeEvent) {
        self.events.push(ev);
    }
}

/// Node-internal progress markers consumed by the world for tracing, history
/// recording, cycle accounting, and channel housekeeping.
#[derive(Clone, Debug, PartialEq)]
pub enum NodeEvent {
    /// Completed one housekeeping pass of the do-forever loop.
    HkPass,
    /// Completed one outer query iteration of a snapshot routine.
    OuterPass,
    /// A quorum round satisfied its return condition.
    RoundComplete,
    /// Entered the cooperative snapshot routine with the given task batch.
    EnterBaseSnapshot { tasks: Vec<(NodeId, u64)> },
    ExitBaseSnapshot,
    /// The open operation produced its response.
    Responded {
        op_is_write: bool,
        snapshot_result: Option<RegisterArray>,
    },
    /// Ask the world to drop buffered inbound SNAPSHOTack envelopes whose ssn
    /// differs from the given one (stale-reply deletion; inbound channels are
    /// part of the node state in this model).
    PurgeStaleSnapshotAcks { keep_ssn: u64 },
}

/// The two protocol families, behind one stepping interface.
pub enum ProtocolNode {
    Nb(NbNode),
    At(AtNode),
}

impl ProtocolNode {
    pub fn n(&self) -> usize {
        match self {
            ProtocolNode::Nb(n) => n.n,
            ProtocolNode::At(n) => n.n,
        }
    }

    /// One step of the node's background (do-forever) activity.
    pub fn bg_step(&mut self, fx: &mut Effects) {
        match self {
            ProtocolNode::Nb(n) => n.bg_step(fx),
            ProtocolNode::At(n) => n.bg_step(fx),
        }
    }

    /// Whether the node's client side has work that needs scheduling.
    pub fn needs_op_step(&self) -> bool {
        match self {
            ProtocolNode::Nb(n) => n.op_active(),
            ProtocolNode::At(_) => false,
        }
    }

    /// One step of client-side operation progress (retransmit or complete).
    pub fn op_step(&mut self, fx: &mut Effects) {
        match self {
            ProtocolNode::Nb(n) => n.op_step(fx),
            ProtocolNode::At(_) => {}
        }
    }

    /// Whether a new operation may be invoked (at most one open per node).
    pub fn can_invoke(&self) -> bool {
        match self {
            ProtocolNode::Nb(n) => !n.op_active(),
            ProtocolNode::At(n) => n.can_invoke(),
        }
    }

    pub fn invoke(&mut self, op: Op, fx: &mut Effects) {
        match self {
            ProtocolNode::Nb(n) => n.invoke(op, fx),
            ProtocolNode::At(n) => n.invoke(op, fx),
        }
    }

    pub fn on_deliver(&mut self, from: NodeId, payload: Payload, fx: &mut Effects) {
        match self {
            ProtocolNode::Nb(n) => n.on_deliver(from, payload, fx),
            ProtocolNode::At(n) => n.on_deliver(from, payload, fx),
        }
    }
}
