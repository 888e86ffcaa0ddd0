//! Scenario execution, metrics extraction, parameter sweeps, and the named
//! built-in scenarios.

pub mod report;
pub mod scenario;

pub use report::{OpLatency, Report, REPORT_SCHEMA};
pub use scenario::{Algorithm, Scenario, ScenarioError, WorkloadEntry};

use crate::checker::{check_linearizable, count_async_cycles};
use crate::sim::{StepOutcome, TraceEvent, World};
use std::collections::BTreeMap;
use std::collections::BTreeSet;

/// A finished run: the report plus the world for deeper inspection.
pub struct RunOutput {
    pub report: Report,
    pub world: World,
}

/// Execute a scenario to completion (step budget, or workload drained plus
/// the grace window) and assemble its report.
pub fn run_scenario(s: &Scenario) -> Result<RunOutput, ScenarioError> {
    let mut world = s.build_world()?;
    let mut drained_at_cycle: Option<u64> = None;
    let mut deadlock = false;
    while world.step < s.step_budget {
        if s.stop_when_drained && world.workload.drained() {
            let now = world.cycles.completed();
            match drained_at_cycle {
                None => drained_at_cycle = Some(now),
                Some(c0) if now >= c0 + s.drain_grace_cycles => break,
                Some(_) => {}
            }
        }
        if world.step() == StepOutcome::Deadlock {
            deadlock = world.history.open_count() > 0;
            break;
        }
    }
    let report = build_report(s, &mut world, deadlock);
    Ok(RunOutput { report, world })
}

fn build_report(s: &Scenario, world: &mut World, deadlock: bool) -> Report {
    let final_violations = world.run_audit();
    let verdict = if world.history.events.is_empty() {
        None
    } else {
        Some(check_linearizable(&world.history))
    };
    let writes_completed = world
        .completed_ops
        .iter()
        .filter(|(_, w, ..)| *w)
        .count() as u64;
    let snapshots_completed = world.completed_ops.len() as u64 - writes_completed;
    let ops: Vec<OpLatency> = world
        .completed_ops
        .iter()
        .map(
            |&(node, write, invoke_step, invoke_cycle, respond_step, respond_cycle)| OpLatency {
                node,
                write,
                invoke_step,
                respond_step,
                invoke_cycle,
                respond_cycle,
            },
        )
        .collect();
    let sent = |k: crate::wire::MsgKind| world.stats.sent(k);
    use crate::wire::MsgKind::*;
    let write_msgs = sent(Write) + sent(WriteAck);
    let snap_msgs = sent(Snapshot) + sent(SnapshotAck) + sent(Save) + sent(SaveAck);
    let messages: BTreeMap<String, crate::sim::KindStats> = world
        .stats
        .by_kind
        .iter()
        .map(|(k, v)| (format!("{k:?}"), *v))
        .collect();
    let phases = write_block_phases(world);
    let writes_between = writes_between_phases(world, &phases);
    Report {
        schema: REPORT_SCHEMA.to_string(),
        scenario: s.name.clone(),
        algorithm: s.algorithm.as_str().to_string(),
        n: s.n,
        f: s.f,
        delta: s.delta,
        seed: s.seed,
        steps: world.step,
        cycles: world.cycles.completed(),
        deadlock,
        ops_completed: world.completed_ops.len(),
        ops_open: world.history.open_count(),
        writes_completed,
        snapshots_completed,
        stabilization_step: world.audit.first_empty_step,
        stabilization_cycle: world.audit.first_empty_cycle,
        final_violations,
        linearizable: verdict.map(|v| v.linearizable),
        messages,
        msgs_per_write: (writes_completed > 0).then(|| write_msgs as f64 / writes_completed as f64),
        msgs_per_snapshot: (snapshots_completed > 0)
            .then(|| snap_msgs as f64 / snapshots_completed as f64),
        gossip_sent: sent(Gossip),
        ops,
        write_block_phases: phases.len() as u64,
        writes_between_phases: writes_between,
        resets_applied: world.reset.as_ref().map(|r| r.resets_applied).unwrap_or(0),
        aborted_ops: world.reset.as_ref().map(|r| r.aborted_ops).unwrap_or(0),
    }
}

/// Windows in which every live node was inside the cooperative snapshot
/// routine with at least one task in common: the write-blocking phases.
///
/// A node leaves and re-enters the routine between outer query iterations,
/// so the raw all-inside condition flickers; the phase of one task is the
/// span from the first to the last instant of full cooperation on it, and
/// overlapping task phases merge into one blocking window.
pub fn write_block_phases(world: &World) -> Vec<(u64, u64)> {
    let n = world.n();
    let mut inside: Vec<Option<BTreeSet<(usize, u64)>>> = vec![None; n];
    let mut crashed = vec![false; n];
    let mut per_task: BTreeMap<(usize, u64), (u64, u64)> = BTreeMap::new();
    for r in &world.trace.records {
        match &r.ev {
            TraceEvent::EnterSnapBatch { node, tasks } => {
                inside[*node] = Some(tasks.iter().copied().collect());
            }
            TraceEvent::ExitSnapBatch { node } => inside[*node] = None,
            TraceEvent::Crash { node } => crashed[*node] = true,
            TraceEvent::Resume { node } => crashed[*node] = false,
            _ => continue,
        }
        let mut common: Option<BTreeSet<(usize, u64)>> = None;
        let mut all_inside = true;
        for i in 0..n {
            if crashed[i] {
                continue;
            }
            match &inside[i] {
                None => {
                    all_inside = false;
                    break;
                }
                Some(tasks) => {
                    common = Some(match common {
                        None => tasks.clone(),
                        Some(c) => c.intersection(tasks).copied().collect(),
                    });
                }
            }
        }
        if all_inside {
            for task in common.unwrap_or_default() {
                per_task
                    .entry(task)
                    .and_modify(|span| span.1 = r.step)
                    .or_insert((r.step, r.step));
            }
        }
    }
    let mut intervals: Vec<(u64, u64)> = per_task.into_values().collect();
    intervals.sort_unstable();
    let mut phases: Vec<(u64, u64)> = Vec::new();
    for (start, end) in intervals {
        match phases.last_mut() {
            Some((_, prev_end)) if start <= *prev_end => *prev_end = (*prev_end).max(end),
            _ => phases.push((start, end)),
        }
    }
    phases
}

/// Completed writes strictly between consecutive write-blocking phases.
pub fn writes_between_phases(world: &World, phases: &[(u64, u64)]) -> Vec<u64> {
    let mut out = Vec::new();
    for pair in phases.windows(2) {
        let (_, end_prev) = pair[0];
        let (start_next, _) = pair[1];
        let count = world
            .completed_ops
            .iter()
            .filter(|&&(_, write, _, _, respond_step, _)| {
                write && respond_step > end_prev && respond_step < start_next
            })
            .count() as u64;
        out.push(count);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    N,
    Delta,
}

/// Run one scenario per axis value (same seed) and collect the reports.
pub fn sweep(
    template: &Scenario,
    axis: SweepAxis,
    values: &[u64],
) -> Result<Vec<Report>, ScenarioError> {
    assert!(!values.is_empty(), "sweep values must be nonempty");
    let mut out = Vec::new();
    for &v in values {
        let mut s = template.clone();
        match axis {
            SweepAxis::N => s.n = v as usize,
            SweepAxis::Delta => s.delta = v,
        }
        s.name = format!(
            "{}_{}{}",
            template.name,
            match axis {
                SweepAxis::N => "n",
                SweepAxis::Delta => "delta",
            },
            v
        );
        out.push(run_scenario(&s)?.report);
    }
    Ok(out)
}

pub fn reports_to_csv(reports: &[Report]) -> String {
    let mut out = Report::csv_header();
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Least-squares slope of ln(y) against ln(x); the growth exponent.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let m = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), y.ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    (m * sxy - sx * sy) / (m * sxx - sx * sx)
}

/// Recompute the cycle partition offline and confirm it matches the online
/// clock (used by determinism checks).
pub fn offline_cycles_match(world: &World, baseline: bool) -> bool {
    let offline = count_async_cycles(world.n(), baseline, &world.trace.records);
    offline.boundaries == world.cycles.boundaries()
}

pub mod builtin {
    //! Named built-in scenarios.

    use super::*;
    use crate::sim::{NodeScript, OpSpec, SchedulerPolicy, StopCond};

    /// The write/snapshot/write pattern: a terminating snapshot between two
    /// writes on a quiet system.
    pub fn write_snapshot_write(algorithm: Algorithm, n: usize, seed: u64) -> Scenario {
        Scenario {
            name: "write_snapshot_write".into(),
            algorithm,
            n,
            f: 0,
            delta: 1_000_000,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::RoundRobin,
            step_budget: 200_000,
            seed,
            maxint: 0,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: true,
            drain_grace_cycles: 3,
            faults: Default::default(),
            workload: vec![
                WorkloadEntry {
                    node: 1,
                    script: NodeScript {
                        scripted: vec![(0, OpSpec::Write)],
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 2,
                    script: NodeScript {
                        scripted: vec![(60, OpSpec::Snapshot)],
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 1,
                    script: NodeScript {
                        scripted: vec![(0, OpSpec::Write), (400, OpSpec::Write)],
                        ..Default::default()
                    },
                },
            ],
        }
    }

    /// The snapshot-starvation schedule: one snapshot under writers that
    /// inject a fresh write into every query round, ceasing at a cycle bound.
    pub fn starvation(stop_cycle: u64, seed: u64) -> Scenario {
        Scenario {
            name: "starvation".into(),
            algorithm: Algorithm::NbSelfstab,
            n: 3,
            f: 0,
            delta: 0,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::RoundRobin,
            step_budget: 2_000_000,
            seed,
            maxint: 0,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: false,
            drain_grace_cycles: 3,
            faults: Default::default(),
            workload: vec![
                WorkloadEntry {
                    node: 0,
                    script: NodeScript {
                        scripted: vec![(0, OpSpec::Snapshot)],
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 1,
                    script: NodeScript {
                        trigger_on_snapshot_round_of: Some(0),
                        stop: StopCond::AtCycle(stop_cycle),
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 2,
                    script: NodeScript {
                        trigger_on_snapshot_round_of: Some(0),
                        stop: StopCond::AtCycle(stop_cycle),
                        ..Default::default()
                    },
                },
            ],
        }
    }

    /// A lone snapshot, no writers; message-complexity probes.
    pub fn lone_snapshot(algorithm: Algorithm, n: usize, delta: u64, seed: u64) -> Scenario {
        Scenario {
            name: "lone_snapshot".into(),
            algorithm,
            n,
            f: 0,
            delta,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::RoundRobin,
            step_budget: 100_000,
            seed,
            maxint: 0,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: true,
            drain_grace_cycles: 2,
            faults: Default::default(),
            workload: vec![WorkloadEntry {
                node: 0,
                script: NodeScript {
                    scripted: vec![(40, OpSpec::Snapshot)],
                    ..Default::default()
                },
            }],
        }
    }

    /// A lone write; message-complexity probe.
    pub fn lone_write(algorithm: Algorithm, n: usize, seed: u64) -> Scenario {
        Scenario {
            name: "lone_write".into(),
            algorithm,
            n,
            f: 0,
            delta: 1_000_000,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::RoundRobin,
            step_budget: 100_000,
            seed,
            maxint: 0,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: true,
            drain_grace_cycles: 2,
            faults: Default::default(),
            workload: vec![WorkloadEntry {
                node: 0,
                script: NodeScript {
                    scripted: vec![(40, OpSpec::Write)],
                    ..Default::default()
                },
            }],
        }
    }

    /// Steady writer plus repeated snapshots; termination-latency probe.
    pub fn steady_writer_snapshots(
        delta: u64,
        n: usize,
        snapshots: u64,
        seed: u64,
    ) -> Scenario {
        Scenario {
            name: "steady_writer_snapshots".into(),
            algorithm: Algorithm::AtSelfstab,
            n,
            f: 0,
            delta,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::WeightedRandom,
            step_budget: 400_000,
            seed,
            maxint: 0,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: false,
            drain_grace_cycles: 3,
            faults: Default::default(),
            workload: vec![
                WorkloadEntry {
                    node: 1,
                    script: NodeScript {
                        loop_items: vec![OpSpec::Write],
                        repeat: true,
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 0,
                    script: NodeScript {
                        loop_items: vec![OpSpec::Snapshot],
                        repeat: true,
                        stop: StopCond::AfterCount(snapshots),
                        think_steps: 40,
                        ..Default::default()
                    },
                },
            ],
        }
    }

    /// Scripted writes that drive the write index over the overflow
    /// threshold, then one snapshot over the reset boundary.
    pub fn overflow_reset(maxint: u64, seed: u64) -> Scenario {
        Scenario {
            name: "overflow_reset".into(),
            algorithm: Algorithm::NbSelfstab,
            n: 3,
            f: 0,
            delta: 0,
            capacity: 8,
            fairness_cap: 10,
            value_bytes: 10,
            policy: SchedulerPolicy::RoundRobin,
            step_budget: 2_000_000,
            seed,
            maxint,
            allow_quorum_loss: false,
            audit_every_step: false,
            stop_when_drained: true,
            drain_grace_cycles: 4,
            faults: Default::default(),
            workload: vec![
                WorkloadEntry {
                    node: 0,
                    script: NodeScript {
                        loop_items: vec![OpSpec::Write],
                        repeat: true,
                        stop: StopCond::AfterCount(maxint + 2),
                        ..Default::default()
                    },
                },
                WorkloadEntry {
                    node: 1,
                    script: NodeScript {
                        loop_items: vec![OpSpec::Write, OpSpec::Snapshot],
                        repeat: true,
                        stop: StopCond::AfterCount(6),
                        think_steps: 200,
                        ..Default::default()
                    },
                },
            ],
        }
    }

    pub fn by_name(name: &str, seed: u64) -> Option<Scenario> {
        match name {
            "starvation" => Some(starvation(100, seed)),
            "write_snapshot_write" => Some(write_snapshot_write(Algorithm::NbSelfstab, 3, seed)),
            "lone_snapshot" => Some(lone_snapshot(Algorithm::AtSelfstab, 5, 1_000_000, seed)),
            "lone_write" => Some(lone_write(Algorithm::NbSelfstab, 5, seed)),
            "steady_writer_snapshots" => Some(steady_writer_snapshots(4, 5, 3, seed)),
            "overflow_reset" => Some(overflow_reset(1 << 10, seed)),
            _ => None,
        }
    }

    pub const NAMES: &[&str] = &[
        "starvation",
        "write_snapshot_write",
        "lone_snapshot",
        "lone_write",
        "steady_writer_snapshots",
        "overflow_reset",
    ];
}
