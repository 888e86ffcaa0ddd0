//! Scenario configuration: algorithm choice, topology parameters, fault
//! plan, and workload scripts, loadable from TOML.

use crate::protocol::{AtNode, NbNode, ProtocolNode};
use crate::reset::ResetController;
use crate::sim::{FaultPlan, NodeScript, SchedulerPolicy, SimConfig, WorkloadRuntime, World};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Self-stabilizing non-blocking protocol.
    NbSelfstab,
    /// The same protocol with the stabilization additions disabled.
    NbBaseline,
    /// Self-stabilizing always-terminating protocol with the delta knob.
    AtSelfstab,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::NbSelfstab => "nb_selfstab",
            Algorithm::NbBaseline => "nb_baseline",
            Algorithm::AtSelfstab => "at_selfstab",
        }
    }
}

fn default_capacity() -> usize {
    8
}
fn default_fairness_cap() -> u32 {
    10
}
fn default_value_bytes() -> usize {
    10
}
fn default_budget() -> u64 {
    200_000
}
fn default_policy() -> SchedulerPolicy {
    SchedulerPolicy::WeightedRandom
}
fn default_grace() -> u64 {
    3
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WorkloadEntry {
    pub node: usize,
    #[serde(flatten)]
    pub script: NodeScript,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub algorithm: Algorithm,
    pub n: usize,
    /// Crash-fault budget declared by the scenario; validated against the
    /// crash schedule.
    #[serde(default)]
    pub f: usize,
    #[serde(default)]
    pub delta: u64,
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_fairness_cap")]
    pub fairness_cap: u32,
    #[serde(default = "default_value_bytes")]
    pub value_bytes: usize,
    #[serde(default = "default_policy")]
    pub policy: SchedulerPolicy,
    #[serde(default = "default_budget")]
    pub step_budget: u64,
    #[serde(default)]
    pub seed: u64,
    /// Overflow threshold for the bounded-counter reset; 0 disables it.
    #[serde(default)]
    pub maxint: u64,
    /// Permit crash schedules that take down a majority (exploratory runs
    /// that demonstrate non-termination rather than correctness).
    #[serde(default)]
    pub allow_quorum_loss: bool,
    #[serde(default)]
    pub audit_every_step: bool,
    /// Stop once every workload script is drained and `drain_grace_cycles`
    /// further cycles have elapsed.
    #[serde(default)]
    pub stop_when_drained: bool,
    #[serde(default = "default_grace")]
    pub drain_grace_cycles: u64,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default)]
    pub workload: Vec<WorkloadEntry>,
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("n must be at least 3, got {0}")]
    TooFewNodes(usize),
    #[error("fault budget violates 2f < n: f={f}, n={n}")]
    BadFaultBudget { f: usize, n: usize },
    #[error("crash schedule takes down {peak} nodes at once, exceeding the budget ({allowed} allowed)")]
    CrashScheduleTooHeavy { peak: usize, allowed: usize },
    #[error("workload references node {0} outside 0..{1}")]
    BadWorkloadNode(usize, usize),
    #[error("rate {0} outside [0, 1]")]
    BadRate(f64),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.n < 3 {
            return Err(ScenarioError::TooFewNodes(self.n));
        }
        if 2 * self.f >= self.n && !self.allow_quorum_loss {
            return Err(ScenarioError::BadFaultBudget { f: self.f, n: self.n });
        }
        for rate in [self.faults.drop_rate, self.faults.dup_rate] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(ScenarioError::BadRate(rate));
            }
        }
        let peak = self.faults.max_simultaneous_crashes();
        if peak > self.f && !self.allow_quorum_loss {
            return Err(ScenarioError::CrashScheduleTooHeavy {
                peak,
                allowed: self.f,
            });
        }
        for w in &self.workload {
            if w.node >= self.n {
                return Err(ScenarioError::BadWorkloadNode(w.node, self.n));
            }
        }
        Ok(())
    }

    pub fn build_world(&self) -> Result<World, ScenarioError> {
        self.validate()?;
        let cfg = SimConfig {
            n: self.n,
            capacity: self.capacity,
            fairness_cap: self.fairness_cap,
            policy: self.policy,
            value_width: self.value_bytes,
            audit_every_step: self.audit_every_step,
            record_digests: false,
        };
        let nodes: Vec<ProtocolNode> = (0..self.n)
            .map(|i| match self.algorithm {
                Algorithm::NbSelfstab => ProtocolNode::Nb(NbNode::new(i, self.n, true)),
                Algorithm::NbBaseline => ProtocolNode::Nb(NbNode::new(i, self.n, false)),
                Algorithm::AtSelfstab => ProtocolNode::At(AtNode::new(i, self.n, self.delta)),
            })
            .collect();
        let mut scripts = vec![NodeScript::default(); self.n];
        for w in &self.workload {
            scripts[w.node] = w.script.clone();
        }
        let workload = WorkloadRuntime::new(scripts, self.value_bytes);
        let waive = self.algorithm == Algorithm::NbBaseline;
        let mut world = World::new(cfg, self.faults.clone(), nodes, workload, self.seed, waive);
        world.audit_fn = Some(crate::checker::audit_count);
        if self.maxint > 0 {
            world.reset = Some(ResetController::new(self.n, self.maxint));
        }
        Ok(world)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let text = r#"
            name = "smoke"
            algorithm = "nb_selfstab"
            n = 3
            seed = 7
            [faults]
            drop_rate = 0.1
            [[workload]]
            node = 0
            loop_items = ["write"]
            repeat = true
        "#;
        let s = Scenario::from_toml(text).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.algorithm, Algorithm::NbSelfstab);
        let again = Scenario::from_toml(&s.to_toml()).unwrap();
        assert_eq!(again.seed, 7);
    }

    #[test]
    fn quorum_violating_schedules_are_rejected() {
        let text = r#"
            algorithm = "nb_selfstab"
            n = 3
            f = 2
        "#;
        assert!(matches!(
            Scenario::from_toml(text),
            Err(ScenarioError::BadFaultBudget { .. })
        ));
    }

    #[test]
    fn zero_budget_runs_gracefully() {
        let s = Scenario::from_toml(
            r#"
            algorithm = "nb_selfstab"
            n = 3
            step_budget = 0
        "#,
        )
        .unwrap();
        let mut w = s.build_world().unwrap();
        assert!(w.run(s.step_budget));
        assert_eq!(w.step, 0);
        assert!(w.history.events.is_empty());
    }
}
