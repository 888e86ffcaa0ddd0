//! Operation histories: the sequence of invocation and response events the
//! linearizability checker consumes.

use crate::protocol::Op;
use crate::registers::{NodeId, RegisterArray};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    Invoke {
        op: Op,
    },
    Respond {
        op: Op,
        #[serde(skip_serializing_if = "Option::is_none")]
        snapshot_result: Option<RegisterArray>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEvent {
    pub node: NodeId,
    pub step: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Error, PartialEq)]
pub enum HistoryError {
    #[error("node {0} already has an operation in flight")]
    DoubleInvoke(NodeId),
    #[error("node {0} responded without a matching invocation")]
    OrphanRespond(NodeId),
    #[error("events out of step order at node {0}")]
    OutOfOrder(NodeId),
}

/// Append-only history recorder enforcing the one-open-operation-per-node
/// rule and step ordering.
#[derive(Default, Clone, Debug)]
pub struct History {
    pub events: Vec<HistoryEvent>,
    open: std::collections::BTreeMap<NodeId, Op>,
    last_step: u64,
}

impl History {
    pub fn record_invoke(&mut self, node: NodeId, step: u64, op: Op) -> Result<(), HistoryError> {
        if step < self.last_step {
            return Err(HistoryError::OutOfOrder(node));
        }
        if self.open.contains_key(&node) {
            return Err(HistoryError::DoubleInvoke(node));
        }
        self.open.insert(node, op.clone());
        self.events.push(HistoryEvent {
            node,
            step,
            kind: EventKind::Invoke { op },
        });
        self.last_step = step;
        Ok(())
    }

    pub fn record_respond(
        &mut self,
        node: NodeId,
        step: u64,
        snapshot_result: Option<RegisterArray>,
    ) -> Result<(), HistoryError> {
        if step < self.last_step {
            return Err(HistoryError::OutOfOrder(node));
        }
        let op = self
            .open
            .remove(&node)
            .ok_or(HistoryError::OrphanRespond(node))?;
        self.events.push(HistoryEvent {
            node,
            step,
            kind: EventKind::Respond {
                op,
                snapshot_result,
            },
        });
        self.last_step = step;
        Ok(())
    }

    /// Rebuild a recorder from stored events, re-validating the invariants.
    pub fn from_events(events: Vec<HistoryEvent>) -> Result<Self, HistoryError> {
        let mut h = History::default();
        for ev in events {
            match ev.kind {
                EventKind::Invoke { op } => h.record_invoke(ev.node, ev.step, op)?,
                EventKind::Respond {
                    snapshot_result, ..
                } => h.record_respond(ev.node, ev.step, snapshot_result)?,
            }
        }
        Ok(h)
    }

    /// Operations still open (pending) when the trace ended.
    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn is_open(&self, node: NodeId) -> bool {
        self.open.contains_key(&node)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registers::Value;

    #[test]
    fn records_in_order() {
        let mut h = History::default();
        h.record_invoke(0, 1, Op::Write(Value(vec![1]))).unwrap();
        assert_eq!(h.events.len(), 1);
        h.record_respond(0, 5, None).unwrap();
        assert_eq!(h.open_count(), 0);
    }

    #[test]
    fn respond_without_invoke_is_an_error() {
        let mut h = History::default();
        assert_eq!(
            h.record_respond(2, 0, None),
            Err(HistoryError::OrphanRespond(2))
        );
    }

    #[test]
    fn two_open_operations_at_one_node_is_an_error() {
        let mut h = History::default();
        h.record_invoke(1, 0, Op::Snapshot).unwrap();
        assert_eq!(
            h.record_invoke(1, 1, Op::Snapshot),
            Err(HistoryError::DoubleInvoke(1))
        );
    }
}
