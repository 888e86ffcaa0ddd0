//! Whole-world consistency audit, run with simulator privilege. For every
//! node it checks that the node's own operation indices dominate every copy
//! attributed to it anywhere in the system: other replicas, in-transit
//! payloads, task tables, and recorded quorum replies. For the
//! always-terminating protocol it additionally checks task-table alignment
//! and vector-clock sanity. It also flags timestamp collisions: one owner's
//! timestamp coupled with two different values, which only corruption can
//! produce.

use crate::protocol::ProtocolNode;
use crate::registers::{vector_clock, NodeId, RegisterArray, Value};
use crate::sim::World;
use crate::wire::Payload;
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Violation {
    /// A write index attributed to `owner` exceeds the owner's counter.
    TsBehind { owner: NodeId, own: u64, seen: u64, at: String },
    /// A snapshot query index attributed to `owner` exceeds its counter.
    SsnBehind { owner: NodeId, own: u64, seen: u64, at: String },
    /// A snapshot operation index attributed to `owner` exceeds its counter.
    SnsBehind { owner: NodeId, own: u64, seen: u64, at: String },
    /// The node's own task-table slot disagrees with its counter.
    SnsMisaligned { node: NodeId, sns: u64, task_sns: u64 },
    /// A stored task clock is not dominated by the holder's current clock.
    VcAhead { node: NodeId, slot: NodeId },
    /// One timestamp of one owner couples two different values.
    TsCollision { owner: NodeId, ts: u64 },
}

struct Attribution<'w> {
    world: &'w World,
    /// Max write index attributed per owner, with provenance.
    ts_seen: Vec<(u64, String)>,
    ssn_seen: Vec<(u64, String)>,
    sns_seen: Vec<(u64, String)>,
    values_at_ts: BTreeMap<(NodeId, u64), Value>,
    collisions: Vec<(NodeId, u64)>,
}

impl<'w> Attribution<'w> {
    fn new(world: &'w World) -> Self {
        let n = world.n();
        Attribution {
            world,
            ts_seen: vec![(0, String::new()); n],
            ssn_seen: vec![(0, String::new()); n],
            sns_seen: vec![(0, String::new()); n],
            values_at_ts: BTreeMap::new(),
            collisions: Vec::new(),
        }
    }

    fn see_ts(&mut self, owner: NodeId, seen: u64, at: &str) {
        if seen > self.ts_seen[owner].0 {
            self.ts_seen[owner] = (seen, at.to_string());
        }
    }

    fn see_ssn(&mut self, owner: NodeId, seen: u64, at: &str) {
        if seen > self.ssn_seen[owner].0 {
            self.ssn_seen[owner] = (seen, at.to_string());
        }
    }

    fn see_sns(&mut self, owner: NodeId, seen: u64, at: &str) {
        if seen > self.sns_seen[owner].0 {
            self.sns_seen[owner] = (seen, at.to_string());
        }
    }

    fn scan_array(&mut self, reg: &RegisterArray, at: &str) {
        for k in 0..reg.len() {
            let e = &reg[k];
            self.see_ts(k, e.ts(), at);
            if let Some(v) = e.value() {
                match self.values_at_ts.get(&(k, e.ts())) {
                    None => {
                        self.values_at_ts.insert((k, e.ts()), v.clone());
                    }
                    Some(prev) if prev != v => self.collisions.push((k, e.ts())),
                    Some(_) => {}
                }
            }
        }
    }

    fn scan(&mut self) {
        let n = self.world.n();
        for i in 0..n {
            match &self.world.nodes[i] {
                ProtocolNode::Nb(node) => {
                    let at = format!("reg@{i}");
                    self.scan_array(&node.reg, &at);
                    if let Some(round) = &node.round {
                        for r in round.received_arrays() {
                            self.scan_array(r, &format!("round@{i}"));
                        }
                    }
                }
                ProtocolNode::At(node) => {
                    let at = format!("reg@{i}");
                    self.scan_array(&node.reg, &at);
                    if let Some(round) = &node.round {
                        for r in round.received_arrays() {
                            self.scan_array(r, &format!("round@{i}"));
                        }
                    }
                    for (slot, t) in node.pnd.iter().enumerate() {
                        self.see_sns(slot, t.sns, &format!("pnd@{i}[{slot}]"));
                    }
                }
            }
        }
        for env in self.world.in_transit() {
            let at = format!("transit {}->{}", env.sender, env.receiver);
            match &env.payload {
                Payload::Write { reg } | Payload::WriteAck { reg } => self.scan_array(reg, &at),
                Payload::Snapshot { tasks, reg, ssn } => {
                    self.scan_array(reg, &at);
                    self.see_ssn(env.sender, *ssn, &at);
                    if let Some(tasks) = tasks {
                        for t in tasks {
                            self.see_sns(t.node, t.sns, &at);
                        }
                    }
                }
                Payload::SnapshotAck { reg, ssn } => {
                    self.scan_array(reg, &at);
                    self.see_ssn(env.receiver, *ssn, &at);
                }
                Payload::Gossip { entry, sns } => {
                    // Gossip carries the destination's own register entry.
                    let owner = env.receiver;
                    self.see_ts(owner, entry.ts(), &at);
                    if let Some(v) = entry.value() {
                        match self.values_at_ts.get(&(owner, entry.ts())) {
                            None => {
                                self.values_at_ts.insert((owner, entry.ts()), v.clone());
                            }
                            Some(prev) if prev != v => self.collisions.push((owner, entry.ts())),
                            Some(_) => {}
                        }
                    }
                    if let Some(sns) = sns {
                        self.see_sns(owner, *sns, &at);
                    }
                }
                Payload::Save { entries } => {
                    // Result arrays are stored snapshot outputs, not live
                    // register state: their embedded timestamps are inert
                    // (adoption is gated on the task index, never merged
                    // into registers), so only the task indices count.
                    for e in entries {
                        self.see_sns(e.node, e.sns, &at);
                    }
                }
                Payload::SaveAck { entries } => {
                    for (node, sns) in entries {
                        self.see_sns(*node, *sns, &at);
                    }
                }
            }
        }
    }
}

/// Full audit; the empty list means the state is consistent.
pub fn audit_consistency(world: &World) -> Vec<Violation> {
    let n = world.n();
    let mut attr = Attribution::new(world);
    attr.scan();
    let mut out = Vec::new();
    for owner in 0..n {
        let (own_ts, own_ssn, own_sns) = match &world.nodes[owner] {
            ProtocolNode::Nb(node) => (node.ts, node.ssn, None),
            ProtocolNode::At(node) => (node.ts, node.ssn, Some(node.sns)),
        };
        let (seen, at) = &attr.ts_seen[owner];
        if *seen > own_ts {
            out.push(Violation::TsBehind {
                owner,
                own: own_ts,
                seen: *seen,
                at: at.clone(),
            });
        }
        let (seen, at) = &attr.ssn_seen[owner];
        if *seen > own_ssn {
            out.push(Violation::SsnBehind {
                owner,
                own: own_ssn,
                seen: *seen,
                at: at.clone(),
            });
        }
        if let Some(own_sns) = own_sns {
            let (seen, at) = &attr.sns_seen[owner];
            if *seen > own_sns {
                out.push(Violation::SnsBehind {
                    owner,
                    own: own_sns,
                    seen: *seen,
                    at: at.clone(),
                });
            }
        }
    }
    for i in 0..n {
        if let ProtocolNode::At(node) = &world.nodes[i] {
            if node.sns != node.pnd[i].sns {
                out.push(Violation::SnsMisaligned {
                    node: i,
                    sns: node.sns,
                    task_sns: node.pnd[i].sns,
                });
            }
            let vc_now = vector_clock(&node.reg);
            for (slot, t) in node.pnd.iter().enumerate() {
                if let Some(vc) = &t.vc {
                    if !vc.leq(&vc_now) {
                        out.push(Violation::VcAhead { node: i, slot });
                    }
                }
            }
        }
    }
    let mut seen_collisions = std::collections::BTreeSet::new();
    for (owner, ts) in attr.collisions {
        if seen_collisions.insert((owner, ts)) {
            out.push(Violation::TsCollision { owner, ts });
        }
    }
    out
}

/// Violation count, shaped for the world's audit hook.
pub fn audit_count(world: &World) -> usize {
    audit_consistency(world).len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{NbNode, ProtocolNode};
    use crate::sim::{FaultPlan, NodeScript, SimConfig, WorkloadRuntime};

    fn world(n: usize) -> World {
        let cfg = SimConfig {
            n,
            ..SimConfig::default()
        };
        let nodes = (0..n)
            .map(|i| ProtocolNode::Nb(NbNode::new(i, n, true)))
            .collect();
        let workload = WorkloadRuntime::new(vec![NodeScript::default(); n], cfg.value_width);
        World::new(cfg, FaultPlan::default(), nodes, workload, 0, false)
    }

    #[test]
    fn initial_world_is_consistent() {
        let w = world(3);
        assert!(audit_consistency(&w).is_empty());
    }

    #[test]
    fn inflated_replica_entry_is_a_violation_until_owner_learns() {
        let mut w = world(3);
        if let ProtocolNode::Nb(node) = &mut w.nodes[1] {
            node.reg[0] = crate::registers::RegisterEntry::written(
                crate::registers::Value(vec![9]),
                77,
            );
        }
        let v = audit_consistency(&w);
        assert!(matches!(v[0], Violation::TsBehind { owner: 0, seen: 77, .. }), "{v:?}");
        // Owner catching up clears it.
        if let ProtocolNode::Nb(node) = &mut w.nodes[0] {
            node.ts = 77;
        }
        assert!(audit_consistency(&w).is_empty());
    }

    #[test]
    fn ts_collision_is_flagged() {
        let mut w = world(3);
        if let ProtocolNode::Nb(node) = &mut w.nodes[0] {
            node.ts = 5;
            node.reg[0] =
                crate::registers::RegisterEntry::written(crate::registers::Value(vec![1]), 5);
        }
        if let ProtocolNode::Nb(node) = &mut w.nodes[1] {
            node.reg[0] =
                crate::registers::RegisterEntry::written(crate::registers::Value(vec![2]), 5);
        }
        let v = audit_consistency(&w);
        assert!(
            v.iter()
                .any(|x| matches!(x, Violation::TsCollision { owner: 0, ts: 5 })),
            "{v:?}"
        );
    }
}
