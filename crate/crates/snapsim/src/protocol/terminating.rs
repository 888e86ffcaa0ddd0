//! The self-stabilizing always-terminating snapshot node. Operations park
//! their requests; the do-forever loop performs housekeeping, runs the
//! pending write, and cooperatively executes every eligible snapshot task.
//! Results are stored at a majority through SAVE rounds ("safe register")
//! instead of a reliable broadcast, and eligibility is gated by the tunable
//! write-observation threshold `delta`.

use super::{Effects, NodeEvent, Op};
use crate::quorum::{AckMatcher, QuorumRound};
use crate::registers::{
    entry_max, merge, vector_clock, NodeId, RegisterArray, RegisterEntry, Value, VectorClock,
};
use crate::wire::{Payload, SaveEntry, TaskRef};

/// Per-node snapshot-task record: operation index, the vector clock sampled
/// for the task, and the final result once stored.
#[derive(Clone, Debug, PartialEq)]
pub struct PendingTask {
    pub sns: u64,
    pub vc: Option<VectorClock>,
    pub fnl: Option<RegisterArray>,
}

impl PendingTask {
    pub fn initial() -> Self {
        PendingTask {
            sns: 0,
            vc: None,
            fnl: None,
        }
    }
}

/// Background-thread continuation. The do-forever body spans several atomic
/// steps: one housekeeping pass, then dispatch, then the quorum rounds of the
/// pending write and of the cooperative snapshot routine.
#[derive(Clone, Debug)]
pub enum AtBg {
    Housekeeping,
    Dispatch,
    /// After the pending write completed, only the snapshot dispatch remains
    /// in this iteration; a freshly parked write waits for the next pass so
    /// a write storm cannot starve snapshot helping.
    DispatchSnapshotOnly,
    WriteRound {
        lreg: RegisterArray,
    },
    SnapInner {
        s: Vec<(NodeId, u64)>,
        prev: RegisterArray,
    },
    SnapSave {
        s: Vec<(NodeId, u64)>,
        entries: Vec<SaveEntry>,
    },
}

pub struct AtNode {
    pub id: NodeId,
    pub n: usize,
    pub delta: u64,
    pub ts: u64,
    pub ssn: u64,
    pub sns: u64,
    pub reg: RegisterArray,
    pub pnd: Vec<PendingTask>,
    pub write_pending: Option<Value>,
    pub bg: AtBg,
    pub round: Option<QuorumRound>,
    /// Client-side bookkeeping: is an invoked operation awaiting its response.
    pub write_open: bool,
    pub snapshot_open: bool,
}

impl AtNode {
    pub fn new(id: NodeId, n: usize, delta: u64) -> Self {
        AtNode {
            id,
            n,
            delta,
            ts: 0,
            ssn: 0,
            sns: 0,
            reg: RegisterArray::bottom(n),
            pnd: vec![PendingTask::initial(); n],
            write_pending: None,
            bg: AtBg::Housekeeping,
            round: None,
            write_open: false,
            snapshot_open: false,
        }
    }

    pub fn can_invoke(&self) -> bool {
        !self.write_open && !self.snapshot_open
    }

    pub fn invoke(&mut self, op: Op, _fx: &mut Effects) {
        assert!(self.can_invoke(), "one operation at a time per node");
        match op {
            Op::Write(v) => {
                self.write_pending = Some(v);
                self.write_open = true;
            }
            Op::Snapshot => {
                // Increment first, then record the task under the new index,
                // so the index invariant holds in the very next state.
                self.sns += 1;
                self.pnd[self.id] = PendingTask {
                    sns: self.sns,
                    vc: None,
                    fnl: None,
                };
                self.snapshot_open = true;
            }
        }
    }

    /// The task-eligibility set: every known unfinished task that either runs
    /// in the zero-threshold mode or has accumulated at least `delta`
    /// observed writes since its clock was sampled, plus always the node's
    /// own unfinished task.
    pub fn delta_set(&self) -> Vec<TaskRef> {
        let vc_now = vector_clock(&self.reg);
        let mut out = Vec::new();
        for k in 0..self.n {
            let t = &self.pnd[k];
            let mut eligible = false;
            if t.fnl.is_none() {
                if self.delta == 0 && t.sns > 0 {
                    eligible = true;
                } else if let Some(vc) = &t.vc {
                    if self.delta <= vc_now.sum_diff_from(vc) {
                        eligible = true;
                    }
                }
            }
            if k == self.id && t.sns > 0 && t.fnl.is_none() {
                eligible = true;
            }
            if eligible {
                out.push(TaskRef {
                    node: k,
                    sns: t.sns,
                    vc: t.vc.clone(),
                });
            }
        }
        out
    }

    /// `S ∩ Δ`: the captured batch filtered to tasks still eligible, carrying
    /// the current clock samples. Task identity is the (node, sns) pair.
    fn live_batch(&self, s: &[(NodeId, u64)]) -> Vec<TaskRef> {
        self.delta_set()
            .into_iter()
            .filter(|t| s.contains(&(t.node, t.sns)))
            .collect()
    }

    pub fn bg_step(&mut self, fx: &mut Effects) {
        match std::mem::replace(&mut self.bg, AtBg::Housekeeping) {
            AtBg::Housekeeping => {
                self.housekeeping(fx);
                self.bg = AtBg::Dispatch;
            }
            AtBg::Dispatch => {
                if let Some(v) = self.write_pending.clone() {
                    self.start_base_write(v, fx);
                } else {
                    self.dispatch_snapshot(fx);
                }
            }
            AtBg::DispatchSnapshotOnly => {
                self.dispatch_snapshot(fx);
            }
            AtBg::WriteRound { lreg } => {
                let met = self.round.as_ref().map(|r| r.met()).unwrap_or(false);
                if met {
                    let round = self.round.take().unwrap();
                    merge(
                        self.id,
                        &mut self.ts,
                        &mut self.reg,
                        round.received_arrays(),
                        true,
                    );
                    fx.event(NodeEvent::RoundComplete);
                    self.write_pending = None;
                    if self.write_open {
                        self.write_open = false;
                        fx.event(NodeEvent::Responded {
                            op_is_write: true,
                            snapshot_result: None,
                        });
                    }
                    self.bg = AtBg::DispatchSnapshotOnly;
                } else {
                    self.broadcast(fx, Payload::Write { reg: lreg.clone() });
                    self.bg = AtBg::WriteRound { lreg };
                }
            }
            AtBg::SnapInner { s, prev } => {
                let inter = self.live_batch(&s);
                let met = self.round.as_ref().map(|r| r.met()).unwrap_or(false);
                if inter.is_empty() || met {
                    let round = self.round.take().unwrap();
                    merge(
                        self.id,
                        &mut self.ts,
                        &mut self.reg,
                        round.received_arrays(),
                        true,
                    );
                    if met {
                        fx.event(NodeEvent::RoundComplete);
                    }
                    self.after_inner(s, prev, fx);
                } else {
                    let ssn = self.ssn;
                    self.broadcast(
                        fx,
                        Payload::Snapshot {
                            tasks: Some(inter),
                            reg: self.reg.clone(),
                            ssn,
                        },
                    );
                    self.bg = AtBg::SnapInner { s, prev };
                }
            }
            AtBg::SnapSave { s, entries } => {
                let met = self.round.as_ref().map(|r| r.met()).unwrap_or(false);
                if met {
                    self.round = None;
                    fx.event(NodeEvent::RoundComplete);
                    self.outer_until(s, fx);
                } else {
                    self.broadcast(
                        fx,
                        Payload::Save {
                            entries: entries.clone(),
                        },
                    );
                    self.bg = AtBg::SnapSave { s, entries };
                }
            }
        }
    }

    fn housekeeping(&mut self, fx: &mut Effects) {
        fx.event(NodeEvent::PurgeStaleSnapshotAcks { keep_ssn: self.ssn });
        self.ts = self.ts.max(self.reg[self.id].ts());
        self.sns = self.sns.max(self.pnd[self.id].sns);
        let vc_now = vector_clock(&self.reg);
        for t in &mut self.pnd {
            if let Some(vc) = &t.vc {
                if !vc.leq(&vc_now) {
                    t.vc = None;
                }
            }
        }
        if self.sns != self.pnd[self.id].sns {
            self.pnd[self.id] = PendingTask {
                sns: self.sns,
                vc: None,
                fnl: None,
            };
        }
        for k in 0..self.n {
            if k != self.id {
                fx.send(
                    k,
                    Payload::Gossip {
                        entry: self.reg[k].clone(),
                        sns: Some(self.pnd[k].sns),
                    },
                );
            }
        }
        fx.event(NodeEvent::HkPass);
    }

    fn start_base_write(&mut self, v: Value, fx: &mut Effects) {
        self.ts += 1;
        self.reg[self.id] = RegisterEntry::written(v, self.ts);
        let lreg = self.reg.clone();
        self.round = Some(QuorumRound::new(
            AckMatcher::WriteSuperset { lreg: lreg.clone() },
            self.n,
        ));
        self.broadcast(fx, Payload::Write { reg: lreg.clone() });
        self.bg = AtBg::WriteRound { lreg };
    }

    fn dispatch_snapshot(&mut self, fx: &mut Effects) {
        let delta_now = self.delta_set();
        if delta_now.is_empty() {
            self.bg = AtBg::Housekeeping;
        } else {
            let s: Vec<(NodeId, u64)> = delta_now.iter().map(|t| (t.node, t.sns)).collect();
            fx.event(NodeEvent::EnterBaseSnapshot { tasks: s.clone() });
            self.start_outer_pass(s, fx);
        }
    }

    fn start_outer_pass(&mut self, s: Vec<(NodeId, u64)>, fx: &mut Effects) {
        self.ssn += 1;
        let prev = self.reg.clone();
        self.round = Some(QuorumRound::new(
            AckMatcher::SnapshotSsn { ssn: self.ssn },
            self.n,
        ));
        let inter = self.live_batch(&s);
        let ssn = self.ssn;
        self.broadcast(
            fx,
            Payload::Snapshot {
                tasks: Some(inter),
                reg: self.reg.clone(),
                ssn,
            },
        );
        self.bg = AtBg::SnapInner { s, prev };
    }

    fn after_inner(&mut self, s: Vec<(NodeId, u64)>, prev: RegisterArray, fx: &mut Effects) {
        let inter = self.live_batch(&s);
        if prev == self.reg && !inter.is_empty() {
            // Store `prev` as the result of every task in the batch, keyed by
            // the current task indices.
            let entries: Vec<SaveEntry> = s
                .iter()
                .map(|&(k, _)| SaveEntry {
                    node: k,
                    sns: self.pnd[k].sns,
                    result: prev.clone(),
                })
                .collect();
            let pairs: Vec<(NodeId, u64)> = entries.iter().map(|e| (e.node, e.sns)).collect();
            self.round = Some(QuorumRound::new(AckMatcher::SavePairs { pairs }, self.n));
            self.broadcast(
                fx,
                Payload::Save {
                    entries: entries.clone(),
                },
            );
            self.bg = AtBg::SnapSave { s, entries };
        } else {
            if inter.iter().any(|t| t.node == self.id) && self.pnd[self.id].vc.is_none() {
                self.pnd[self.id].vc = Some(vector_clock(&self.reg));
            }
            self.outer_until(s, fx);
        }
    }

    fn outer_until(&mut self, s: Vec<(NodeId, u64)>, fx: &mut Effects) {
        fx.event(NodeEvent::OuterPass);
        let inter = self.live_batch(&s);
        let own = &self.pnd[self.id];
        let own_only = inter.len() == 1 && inter[0].node == self.id;
        let own_escalated = own_only
            && own.sns > 0
            && own.fnl.is_none()
            && own
                .vc
                .as_ref()
                .map(|vc| self.delta <= vector_clock(&self.reg).sum_diff_from(vc))
                .unwrap_or(false);
        if inter.is_empty() || own_escalated {
            fx.event(NodeEvent::ExitBaseSnapshot);
            self.bg = AtBg::Housekeeping;
        } else {
            self.start_outer_pass(s, fx);
        }
    }

    fn broadcast(&self, fx: &mut Effects, payload: Payload) {
        for k in 0..self.n {
            fx.send(k, payload.clone());
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
            Payload::Snapshot {
                tasks,
                reg: reg_j,
                ssn,
            } => {
                self.fold_array(&reg_j);
                let tasks = tasks.unwrap_or_default();
                for t in &tasks {
                    let local = &self.pnd[t.node];
                    if local.sns < t.sns
                        || (local.sns == t.sns && local.vc.is_none() && local.fnl.is_none())
                    {
                        self.pnd[t.node] = PendingTask {
                            sns: t.sns,
                            vc: t.vc.clone(),
                            fnl: None,
                        };
                    }
                }
                let finished: Vec<SaveEntry> = tasks
                    .iter()
                    .filter_map(|t| {
                        self.pnd[t.node].fnl.as_ref().map(|r| SaveEntry {
                            node: t.node,
                            sns: self.pnd[t.node].sns,
                            result: r.clone(),
                        })
                    })
                    .collect();
                fx.send(
                    from,
                    Payload::SnapshotAck {
                        reg: self.reg.clone(),
                        ssn,
                    },
                );
                if !finished.is_empty() {
                    // Piggybacked result delivery for tasks the sender is
                    // still working on; emitted in the same atomic step as
                    // the acknowledgment.
                    fx.send(from, Payload::Save { entries: finished });
                }
            }
            Payload::Gossip { entry, sns } => {
                let me = self.id;
                self.reg[me] = entry_max(&self.reg[me], &entry);
                self.ts = self.ts.max(self.reg[me].ts());
                self.sns = self.sns.max(sns.unwrap_or(0));
            }
            Payload::Save { entries } => {
                let mut pairs = Vec::with_capacity(entries.len());
                for e in &entries {
                    pairs.push((e.node, e.sns));
                    let local = &self.pnd[e.node];
                    if local.sns < e.sns || (local.sns == e.sns && local.fnl.is_none()) {
                        self.pnd[e.node].sns = e.sns;
                        self.pnd[e.node].fnl = Some(e.result.clone());
                        if e.node == self.id {
                            self.maybe_respond_snapshot(fx);
                        }
                    }
                }
                fx.send(from, Payload::SaveAck { entries: pairs });
            }
            ack @ (Payload::WriteAck { .. }
            | Payload::SnapshotAck { .. }
            | Payload::SaveAck { .. }) => {
                if let Some(round) = &mut self.round {
                    round.offer(from, &ack);
                }
            }
        }
    }

    fn maybe_respond_snapshot(&mut self, fx: &mut Effects) {
        if self.snapshot_open {
            if let Some(result) = self.pnd[self.id].fnl.clone() {
                self.snapshot_open = false;
                fx.event(NodeEvent::Responded {
                    op_is_write: false,
                    snapshot_result: Some(result),
                });
            }
        }
    }

    fn fold_array(&mut self, other: &RegisterArray) {
        for k in 0..self.n {
            self.reg[k] = entry_max(&self.reg[k], &other[k]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vc(v: &[u64]) -> VectorClock {
        VectorClock(v.to_vec())
    }

    #[test]
    fn delta_set_examples() {
        // Finished tasks and an idle own slot produce the empty set.
        let node = AtNode::new(0, 2, 0);
        assert!(node.delta_set().is_empty());

        // Zero-threshold mode includes every active task.
        let mut node = AtNode::new(0, 2, 0);
        node.pnd[0] = PendingTask {
            sns: 1,
            vc: None,
            fnl: None,
        };
        let d = node.delta_set();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].node, d[0].sns), (0, 1));

        // Threshold mode: the summed clock growth decides eligibility.
        let mut node = AtNode::new(0, 2, 2);
        node.reg[0] = RegisterEntry::written(Value(vec![1]), 2);
        node.reg[1] = RegisterEntry::written(Value(vec![2]), 3);
        node.pnd[1] = PendingTask {
            sns: 3,
            vc: Some(vc(&[1, 1])),
            fnl: None,
        };
        // Sum of (VC - vc) = (2-1)+(3-1) = 3 >= delta = 2.
        let d = node.delta_set();
        assert_eq!(d.len(), 1);
        assert_eq!((d[0].node, d[0].sns), (1, 3));
        // Raising the threshold past the observed growth excludes it.
        node.delta = 4;
        assert!(node.delta_set().is_empty());
    }

    #[test]
    fn own_task_is_always_eligible() {
        let mut node = AtNode::new(1, 3, 100);
        node.pnd[1] = PendingTask {
            sns: 5,
            vc: None,
            fnl: None,
        };
        let d = node.delta_set();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].node, 1);
    }

    #[test]
    fn housekeeping_realigns_corrupted_state() {
        let mut node = AtNode::new(0, 2, 1);
        // Forged clock beyond the current view is reset.
        node.pnd[1] = PendingTask {
            sns: 2,
            vc: Some(vc(&[9, 9])),
            fnl: None,
        };
        // Own slot disagreeing with the operation index is rebuilt.
        node.sns = 5;
        node.pnd[0] = PendingTask {
            sns: 3,
            vc: None,
            fnl: Some(RegisterArray::bottom(2)),
        };
        let mut fx = Effects::default();
        node.bg_step(&mut fx);
        assert_eq!(node.pnd[1].vc, None);
        assert_eq!(
            node.pnd[0],
            PendingTask {
                sns: 5,
                vc: None,
                fnl: None
            }
        );
        // Gossip to the one peer, carrying its entry and task index.
        assert_eq!(fx.sends.len(), 1);
    }

    #[test]
    fn snapshot_handler_adopts_new_tasks_and_piggybacks_results() {
        let mut node = AtNode::new(0, 2, 0);
        let mut fx = Effects::default();
        node.on_deliver(
            1,
            Payload::Snapshot {
                tasks: Some(vec![TaskRef {
                    node: 1,
                    sns: 4,
                    vc: None,
                }]),
                reg: RegisterArray::bottom(2),
                ssn: 7,
            },
            &mut fx,
        );
        assert_eq!(node.pnd[1].sns, 4);
        assert!(node.pnd[1].fnl.is_none());
        // Ack echoes the request's ssn; no result to piggyback yet.
        assert_eq!(fx.sends.len(), 1);
        match &fx.sends[0].1 {
            Payload::SnapshotAck { ssn, .. } => assert_eq!(*ssn, 7),
            other => panic!("expected ack, got {other:?}"),
        }

        // Now the helper already holds a result for the asked task: the
        // reply carries a piggybacked SAVE.
        node.pnd[1].fnl = Some(RegisterArray::bottom(2));
        let mut fx2 = Effects::default();
        node.on_deliver(
            1,
            Payload::Snapshot {
                tasks: Some(vec![TaskRef {
                    node: 1,
                    sns: 4,
                    vc: None,
                }]),
                reg: RegisterArray::bottom(2),
                ssn: 8,
            },
            &mut fx2,
        );
        assert_eq!(fx2.sends.len(), 2);
        assert!(matches!(fx2.sends[1].1, Payload::Save { .. }));
        // A stale task index leaves the entry untouched.
        let mut fx3 = Effects::default();
        node.on_deliver(
            1,
            Payload::Snapshot {
                tasks: Some(vec![TaskRef {
                    node: 1,
                    sns: 2,
                    vc: None,
                }]),
                reg: RegisterArray::bottom(2),
                ssn: 9,
            },
            &mut fx3,
        );
        assert_eq!(node.pnd[1].sns, 4);
    }

    #[test]
    fn save_handler_newer_wins_and_equal_keeps_existing_result() {
        let mut node = AtNode::new(0, 2, 0);
        let r1 = RegisterArray(vec![
            RegisterEntry::written(Value(vec![1]), 1),
            RegisterEntry::Bottom,
        ]);
        let r2 = RegisterArray::bottom(2);
        let mut fx = Effects::default();
        node.on_deliver(
            1,
            Payload::Save {
                entries: vec![SaveEntry {
                    node: 1,
                    sns: 3,
                    result: r1.clone(),
                }],
            },
            &mut fx,
        );
        assert_eq!(node.pnd[1].fnl.as_ref(), Some(&r1));
        // Same index, already filled: untouched.
        node.on_deliver(
            1,
            Payload::Save {
                entries: vec![SaveEntry {
                    node: 1,
                    sns: 3,
                    result: r2.clone(),
                }],
            },
            &mut fx,
        );
        assert_eq!(node.pnd[1].fnl.as_ref(), Some(&r1));
        // Higher index: adopted.
        node.on_deliver(
            1,
            Payload::Save {
                entries: vec![SaveEntry {
                    node: 1,
                    sns: 5,
                    result: r2.clone(),
                }],
            },
            &mut fx,
        );
        assert_eq!(node.pnd[1].sns, 5);
        assert_eq!(node.pnd[1].fnl.as_ref(), Some(&r2));
    }

    #[test]
    fn gossip_repairs_task_index_upward() {
        let mut node = AtNode::new(0, 2, 0);
        let mut fx = Effects::default();
        node.on_deliver(
            1,
            Payload::Gossip {
                entry: RegisterEntry::Bottom,
                sns: Some(900),
            },
            &mut fx,
        );
        assert_eq!(node.sns, 900);
        // Housekeeping then realigns the own slot.
        let mut fx2 = Effects::default();
        node.bg_step(&mut fx2);
        assert_eq!(node.pnd[0].sns, 900);
    }
}
