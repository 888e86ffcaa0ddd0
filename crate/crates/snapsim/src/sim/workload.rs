//! Compiled per-node workload scripts: timed invocations and closed-loop
//! drivers, with gates on step index, cycle count, or stabilization.

use crate::protocol::Op;
use crate::registers::{NodeId, Value};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpSpec {
    Write,
    Snapshot,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    #[default]
    Immediate,
    AtStep(u64),
    /// Opens at the first step where the consistency audit is empty.
    Stabilized,
    AtCycle(u64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopCond {
    #[default]
    Never,
    AtStep(u64),
    AtCycle(u64),
    AfterCount(u64),
}

/// One node's workload. Either a scripted list of (step, op) pairs, a
/// closed-loop item list that re-invokes after each response, or an
/// adversarial write injector keyed to another node's snapshot rounds.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct NodeScript {
    #[serde(default)]
    pub scripted: Vec<(u64, OpSpec)>,
    #[serde(default)]
    pub loop_items: Vec<OpSpec>,
    /// Cycle through `loop_items` forever (until stopped) instead of once.
    #[serde(default)]
    pub repeat: bool,
    #[serde(default)]
    pub think_steps: u64,
    #[serde(default = "default_gate")]
    pub start: Gate,
    #[serde(default = "default_stop")]
    pub stop: StopCond,
    /// Adversarial mode: issue one write per snapshot query round observed
    /// at the given node (a shared budget across all watchers), realizing
    /// the schedule in which every query round overlaps a fresh write.
    #[serde(default)]
    pub trigger_on_snapshot_round_of: Option<NodeId>,
}

fn default_gate() -> Gate {
    Gate::Immediate
}

fn default_stop() -> StopCond {
    StopCond::Never
}

pub struct WorkloadRuntime {
    scripts: Vec<NodeScript>,
    cursor: Vec<usize>,
    issued: Vec<u64>,
    responded: Vec<u64>,
    ready_at: Vec<u64>,
    write_ordinal: Vec<u64>,
    value_width: usize,
    /// Distinct snapshot query rounds observed per watched node.
    snap_rounds_seen: std::collections::BTreeMap<NodeId, (u64, u64)>, // node -> (last ssn, count)
    trigger_budget_used: u64,
}

impl WorkloadRuntime {
    pub fn new(scripts: Vec<NodeScript>, value_width: usize) -> Self {
        let n = scripts.len();
        let mut scripts = scripts;
        for s in &mut scripts {
            s.scripted.sort_by_key(|(at, _)| *at);
        }
        WorkloadRuntime {
            scripts,
            cursor: vec![0; n],
            issued: vec![0; n],
            responded: vec![0; n],
            ready_at: vec![0; n],
            write_ordinal: vec![0; n],
            value_width,
            snap_rounds_seen: std::collections::BTreeMap::new(),
            trigger_budget_used: 0,
        }
    }

    /// Nodes whose snapshot query rounds drive trigger writers.
    pub fn watched_nodes(&self) -> Vec<NodeId> {
        let mut out: Vec<NodeId> = self
            .scripts
            .iter()
            .filter_map(|s| s.trigger_on_snapshot_round_of)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Called by the world when `node` broadcasts a snapshot query round.
    pub fn note_snapshot_round(&mut self, node: NodeId, ssn: u64) {
        let entry = self.snap_rounds_seen.entry(node).or_insert((0, 0));
        if entry.0 != ssn {
            entry.0 = ssn;
            entry.1 += 1;
        }
    }

    fn trigger_rounds(&self, target: NodeId) -> u64 {
        self.snap_rounds_seen.get(&target).map(|e| e.1).unwrap_or(0)
    }

    fn gate_open(&self, node: NodeId, step: u64, cycles: u64, stabilized: bool) -> bool {
        match self.scripts[node].start {
            Gate::Immediate => true,
            Gate::AtStep(s) => step >= s,
            Gate::Stabilized => stabilized,
            Gate::AtCycle(c) => cycles >= c,
        }
    }

    fn stopped(&self, node: NodeId, step: u64, cycles: u64) -> bool {
        match self.scripts[node].stop {
            StopCond::Never => false,
            StopCond::AtStep(s) => step >= s,
            StopCond::AtCycle(c) => cycles >= c,
            StopCond::AfterCount(k) => self.issued[node] >= k,
        }
    }

    fn next_spec(&self, node: NodeId) -> Option<OpSpec> {
        let s = &self.scripts[node];
        if !s.scripted.is_empty() {
            s.scripted.get(self.cursor[node]).map(|(_, op)| *op)
        } else if s.loop_items.is_empty() {
            None
        } else if s.repeat {
            Some(s.loop_items[self.cursor[node] % s.loop_items.len()])
        } else {
            s.loop_items.get(self.cursor[node]).copied()
        }
    }

    /// Whether `node` has an invocation due now.
    pub fn due(&self, node: NodeId, step: u64, cycles: u64, stabilized: bool) -> bool {
        if !self.gate_open(node, step, cycles, stabilized) || self.stopped(node, step, cycles) {
            return false;
        }
        let s = &self.scripts[node];
        if let Some(target) = s.trigger_on_snapshot_round_of {
            return self.ready_at[node] <= step
                && self.trigger_rounds(target) > self.trigger_budget_used;
        }
        match self.next_spec(node) {
            None => false,
            Some(_) if !s.scripted.is_empty() => s.scripted[self.cursor[node]].0 <= step,
            Some(_) => self.ready_at[node] <= step,
        }
    }

    /// Consume the due invocation, materializing a unique write value.
    pub fn take(&mut self, node: NodeId) -> Op {
        if self.scripts[node].trigger_on_snapshot_round_of.is_some() {
            self.trigger_budget_used += 1;
            self.issued[node] += 1;
            self.ready_at[node] = u64::MAX;
            self.write_ordinal[node] += 1;
            return Op::Write(Value::encoded(
                node,
                self.write_ordinal[node],
                self.value_width,
            ));
        }
        let spec = self.next_spec(node).expect("invocation is due");
        self.cursor[node] += 1;
        self.issued[node] += 1;
        // Block closed-loop re-invocation until the response arrives.
        self.ready_at[node] = u64::MAX;
        match spec {
            OpSpec::Write => {
                self.write_ordinal[node] += 1;
                Op::Write(Value::encoded(
                    node,
                    self.write_ordinal[node],
                    self.value_width,
                ))
            }
            OpSpec::Snapshot => Op::Snapshot,
        }
    }

    pub fn on_respond(&mut self, node: NodeId, step: u64) {
        self.responded[node] += 1;
        self.ready_at[node] = step.saturating_add(self.scripts[node].think_steps);
    }

    pub fn issued(&self, node: NodeId) -> u64 {
        self.issued[node]
    }

    pub fn total_issued(&self) -> u64 {
        self.issued.iter().sum()
    }

    pub fn total_responded(&self) -> u64 {
        self.responded.iter().sum()
    }

    /// True when every script has run out of work and no response is pending.
    pub fn drained(&self) -> bool {
        (0..self.scripts.len()).all(|i| {
            let s = &self.scripts[i];
            let exhausted = if !s.scripted.is_empty() {
                self.cursor[i] >= s.scripted.len()
            } else if s.repeat {
                matches!(s.stop, StopCond::AfterCount(k) if self.issued[i] >= k)
                    || s.loop_items.is_empty()
            } else {
                self.cursor[i] >= s.loop_items.len()
            };
            exhausted && self.issued[i] == self.responded[i]
        })
    }
}
