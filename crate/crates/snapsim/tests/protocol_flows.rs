//! End-to-end protocol behavior over the simulator: message patterns of the
//! quiet write/snapshot flows, starvation and recovery, cooperative
//! termination, corruption recovery, and crash tolerance.

use snapsim::checker::{audit_consistency, check_linearizable, count_async_cycles};
use snapsim::harness::{builtin, run_scenario, Algorithm, Scenario, WorkloadEntry};
use snapsim::sim::{
    CrashAction, CrashEvent, FaultPlan, NodeScript, OpSpec, SchedulerPolicy, StopCond,
    TraceEvent, TransientFault,
};
use snapsim::wire::MsgKind;

fn base(algorithm: Algorithm, n: usize, seed: u64) -> Scenario {
    Scenario {
        name: "test".into(),
        algorithm,
        n,
        f: 0,
        delta: 0,
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
        drain_grace_cycles: 3,
        faults: FaultPlan::default(),
        workload: vec![],
    }
}

fn script(node: usize, s: NodeScript) -> WorkloadEntry {
    WorkloadEntry { node, script: s }
}

#[test]
fn lone_write_uses_exactly_n_write_and_n_ack_envelopes() {
    for n in [3usize, 5] {
        let mut s = base(Algorithm::NbSelfstab, n, 1);
        s.workload = vec![script(
            0,
            NodeScript {
                scripted: vec![(10, OpSpec::Write)],
                ..Default::default()
            },
        )];
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.report.writes_completed, 1);
        assert_eq!(out.world.stats.sent(MsgKind::Write), n as u64);
        assert_eq!(out.world.stats.sent(MsgKind::WriteAck), n as u64);
        // Majority of the cluster stores the written pair at entry 0.
        let holders = (0..n)
            .filter(|&i| match &out.world.nodes[i] {
                snapsim::protocol::ProtocolNode::Nb(node) => node.reg[0].ts() == 1,
                _ => unreachable!(),
            })
            .count();
        assert!(holders > n / 2, "{holders} of {n} hold the write");
    }
}

#[test]
fn quiet_snapshot_ends_after_one_or_two_query_rounds() {
    let mut s = base(Algorithm::NbSelfstab, 3, 2);
    s.workload = vec![
        script(
            1,
            NodeScript {
                scripted: vec![(0, OpSpec::Write)],
                ..Default::default()
            },
        ),
        script(
            2,
            NodeScript {
                scripted: vec![(200, OpSpec::Snapshot)],
                ..Default::default()
            },
        ),
    ];
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.snapshots_completed, 1);
    assert!(out.report.linearizable.unwrap());
    // One or two outer iterations: at most 2n SNAPSHOT sends.
    let snaps = out.world.stats.sent(MsgKind::Snapshot);
    assert!(
        (3..=6).contains(&snaps),
        "snapshot query envelopes: {snaps}"
    );
    // The returned array contains the first write.
    let result = out
        .world
        .history
        .events
        .iter()
        .find_map(|e| match &e.kind {
            snapsim::checker::EventKind::Respond {
                snapshot_result: Some(arr),
                ..
            } => Some(arr.clone()),
            _ => None,
        })
        .expect("snapshot result recorded");
    assert_eq!(result[1].ts(), 1);
    assert!(result[0].is_bottom() && result[2].is_bottom());
}

#[test]
fn snapshot_between_two_writes_returns_first_only() {
    let out = run_scenario(&builtin::write_snapshot_write(Algorithm::NbSelfstab, 3, 3)).unwrap();
    assert!(out.report.linearizable.unwrap());
    let results: Vec<_> = out
        .world
        .history
        .events
        .iter()
        .filter_map(|e| match &e.kind {
            snapsim::checker::EventKind::Respond {
                snapshot_result: Some(arr),
                ..
            } => Some(arr.clone()),
            _ => None,
        })
        .collect();
    assert_eq!(results.len(), 1);
    // Entry 1 carries the first write (ts 1), not the second.
    assert_eq!(results[0][1].ts(), 1);
}

#[test]
fn starvation_schedule_defers_snapshot_until_writes_cease() {
    let out = run_scenario(&builtin::starvation(40, 4)).unwrap();
    let snap = out
        .report
        .ops
        .iter()
        .find(|o| !o.write)
        .expect("snapshot completed");
    assert!(
        snap.cycles() >= 40,
        "snapshot starved only {} cycles",
        snap.cycles()
    );
    let last_write_cycle = out
        .report
        .ops
        .iter()
        .filter(|o| o.write)
        .map(|o| o.respond_cycle)
        .max()
        .unwrap();
    assert!(
        snap.respond_cycle <= last_write_cycle + 2,
        "snapshot took {} cycles past the last write ({})",
        snap.respond_cycle - last_write_cycle,
        last_write_cycle
    );
    assert!(out.report.linearizable.unwrap());
}

#[test]
fn at_snapshot_with_large_delta_uses_linear_messages() {
    let out = run_scenario(&builtin::lone_snapshot(Algorithm::AtSelfstab, 5, 1_000_000, 5)).unwrap();
    assert_eq!(out.report.snapshots_completed, 1);
    let n = 5u64;
    assert_eq!(out.world.stats.sent(MsgKind::Snapshot), n);
    assert_eq!(out.world.stats.sent(MsgKind::Save), n);
    assert!(out.report.linearizable.unwrap());
}

#[test]
fn at_quiet_snapshot_resolves_before_helpers_need_to_engage() {
    // Without write churn the task is saved within the initiator's first
    // round; helpers receive the stored result before their next dispatch.
    let out = run_scenario(&builtin::lone_snapshot(Algorithm::AtSelfstab, 5, 0, 5)).unwrap();
    assert_eq!(out.report.snapshots_completed, 1);
    assert!(out.report.linearizable.unwrap());
    let snap_msgs = out.world.stats.sent(MsgKind::Snapshot);
    assert!(snap_msgs <= 10, "quiet zero-threshold snapshot: {snap_msgs}");
}

#[test]
fn at_snapshot_with_zero_delta_recruits_every_node_under_churn() {
    let mut s = base(Algorithm::AtSelfstab, 5, 5);
    s.delta = 0;
    s.policy = SchedulerPolicy::WeightedRandom;
    s.workload = vec![
        script(
            1,
            NodeScript {
                loop_items: vec![OpSpec::Write],
                repeat: true,
                stop: StopCond::AfterCount(30),
                ..Default::default()
            },
        ),
        script(
            3,
            NodeScript {
                loop_items: vec![OpSpec::Write],
                repeat: true,
                stop: StopCond::AfterCount(30),
                ..Default::default()
            },
        ),
        script(
            0,
            NodeScript {
                scripted: vec![(100, OpSpec::Snapshot)],
                ..Default::default()
            },
        ),
    ];
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.snapshots_completed, 1);
    // Every node runs query rounds for the shared task: the write-blocking
    // cooperative mode.
    let senders: std::collections::BTreeSet<usize> = out
        .world
        .trace
        .records
        .iter()
        .filter_map(|r| match r.ev {
            TraceEvent::Send {
                src,
                kind: MsgKind::Snapshot,
                ..
            } => Some(src),
            _ => None,
        })
        .collect();
    assert_eq!(senders.len(), 5, "all nodes helped: {senders:?}");
    assert!(out.report.write_block_phases >= 1);
    assert!(out.report.linearizable.unwrap());
}

#[test]
fn at_concurrent_writers_and_snapshots_stay_linearizable() {
    for seed in 0..5 {
        let mut s = base(Algorithm::AtSelfstab, 5, seed);
        s.delta = 2;
        s.policy = SchedulerPolicy::WeightedRandom;
        s.step_budget = 60_000;
        s.workload = vec![
            script(
                1,
                NodeScript {
                    loop_items: vec![OpSpec::Write],
                    repeat: true,
                    stop: StopCond::AfterCount(6),
                    ..Default::default()
                },
            ),
            script(
                2,
                NodeScript {
                    loop_items: vec![OpSpec::Write],
                    repeat: true,
                    stop: StopCond::AfterCount(4),
                    think_steps: 25,
                    ..Default::default()
                },
            ),
            script(
                0,
                NodeScript {
                    loop_items: vec![OpSpec::Snapshot],
                    repeat: true,
                    stop: StopCond::AfterCount(3),
                    think_steps: 50,
                    ..Default::default()
                },
            ),
        ];
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.report.ops_open, 0, "seed {seed}: all ops terminate");
        assert_eq!(out.report.ops_completed, 13);
        assert!(
            out.report.linearizable.unwrap(),
            "seed {seed} not linearizable"
        );
    }
}

#[test]
fn corrupted_start_states_converge_for_both_protocols() {
    for algorithm in [Algorithm::NbSelfstab, Algorithm::AtSelfstab] {
        for seed in 0..5 {
            let mut s = base(algorithm, 5, 100 + seed);
            s.policy = SchedulerPolicy::WeightedRandom;
            s.audit_every_step = true;
            s.stop_when_drained = false;
            s.step_budget = 8_000;
            s.faults.transient = TransientFault::Randomized {
                max_index: 1 << 12,
                corrupt_channels: true,
                forge_pndtsk: true,
                forge_reg_entries: true,
            };
            let out = run_scenario(&s).unwrap();
            let stab = out.report.stabilization_cycle;
            assert!(
                stab.is_some(),
                "{algorithm:?} seed {seed}: never stabilized"
            );
            assert!(
                stab.unwrap() <= 5,
                "{algorithm:?} seed {seed}: stabilized at cycle {stab:?}"
            );
            assert_eq!(out.report.final_violations, 0);
        }
    }
}

#[test]
fn corrupted_write_index_resumes_above_residue() {
    // Forge a high write-index residue at another node; the owner's next
    // write must supersede it.
    let mut s = base(Algorithm::NbSelfstab, 3, 9);
    s.policy = SchedulerPolicy::WeightedRandom;
    s.audit_every_step = true;
    s.stop_when_drained = false;
    s.step_budget = 4_000;
    s.faults.transient = TransientFault::Explicit {
        edits: vec![snapsim::sim::StateEdit::ForgeRegEntry {
            node: 1,
            slot: 0,
            ts: 500,
        }],
    };
    s.workload = vec![script(
        0,
        NodeScript {
            scripted: vec![(0, OpSpec::Write)],
            start: snapsim::sim::Gate::Stabilized,
            ..Default::default()
        },
    )];
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.writes_completed, 1);
    match &out.world.nodes[0] {
        snapsim::protocol::ProtocolNode::Nb(node) => {
            assert_eq!(node.reg[0].ts(), 501, "write linearizes after residue");
        }
        _ => unreachable!(),
    }
    assert_eq!(out.report.final_violations, 0);
}

#[test]
fn one_crash_of_three_does_not_block_operations() {
    let mut s = base(Algorithm::NbSelfstab, 3, 11);
    s.f = 1;
    s.policy = SchedulerPolicy::WeightedRandom;
    s.faults.crash_schedule = vec![CrashEvent {
        node: 2,
        step: 5,
        action: CrashAction::Crash,
    }];
    s.workload = vec![
        script(
            0,
            NodeScript {
                scripted: vec![(50, OpSpec::Write), (600, OpSpec::Snapshot)],
                ..Default::default()
            },
        ),
        script(
            1,
            NodeScript {
                scripted: vec![(300, OpSpec::Write)],
                ..Default::default()
            },
        ),
    ];
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.ops_completed, 3, "live nodes finish their ops");
    assert_eq!(out.report.ops_open, 0);
    assert!(out.report.linearizable.unwrap());
}

#[test]
fn majority_crash_leaves_operations_pending_without_safety_violation() {
    let mut s = base(Algorithm::NbSelfstab, 3, 12);
    s.allow_quorum_loss = true;
    s.f = 2;
    s.policy = SchedulerPolicy::WeightedRandom;
    s.step_budget = 5_000;
    s.stop_when_drained = false;
    s.faults.crash_schedule = vec![
        CrashEvent {
            node: 1,
            step: 5,
            action: CrashAction::Crash,
        },
        CrashEvent {
            node: 2,
            step: 6,
            action: CrashAction::Crash,
        },
    ];
    s.workload = vec![script(
        0,
        NodeScript {
            scripted: vec![(100, OpSpec::Write)],
            ..Default::default()
        },
    )];
    let out = run_scenario(&s).unwrap();
    assert_eq!(out.report.ops_open, 1, "write can never reach a majority");
    assert!(!out.report.deadlock, "node 0 keeps taking steps");
    assert!(out.report.linearizable.unwrap(), "pending op excluded");
}

#[test]
fn offline_cycle_partition_matches_online_clock() {
    for policy in [SchedulerPolicy::RoundRobin, SchedulerPolicy::WeightedRandom] {
        let mut s = base(Algorithm::NbSelfstab, 3, 13);
        s.policy = policy;
        s.step_budget = 3_000;
        s.stop_when_drained = false;
        let out = run_scenario(&s).unwrap();
        let offline = count_async_cycles(3, false, &out.world.trace.records);
        assert_eq!(
            offline.boundaries,
            out.world.cycles.boundaries(),
            "{policy:?}"
        );
        assert!(out.world.cycles.completed() > 10);
    }
}

#[test]
fn stale_forged_acks_are_purged_by_housekeeping() {
    let mut s = base(Algorithm::NbSelfstab, 3, 14);
    s.policy = SchedulerPolicy::WeightedRandom;
    s.audit_every_step = true;
    s.stop_when_drained = false;
    s.step_budget = 3_000;
    s.faults.transient = TransientFault::Explicit {
        edits: vec![snapsim::sim::StateEdit::ForgeChannel {
            src: 1,
            dst: 0,
            env: snapsim::sim::ForgedEnvelope::StaleSnapshotAck {
                ssn: 999,
                entry_ts: 0,
            },
        }],
    };
    let out = run_scenario(&s).unwrap();
    // The forged ack is eventually purged or delivered-and-ignored, after
    // which the audit stays clean.
    assert!(out.report.stabilization_step.is_some());
    assert_eq!(out.report.final_violations, 0);
    assert!(audit_consistency(&out.world).is_empty());
    // And no ghost snapshot was ever recorded.
    assert_eq!(out.report.ops_completed, 0);
}

#[test]
fn histories_from_runs_satisfy_both_checkers() {
    // Randomized mixed workloads on the terminating protocol; every history
    // is small enough for the exhaustive checker, and both must agree.
    for seed in 0..10 {
        let mut s = base(Algorithm::AtSelfstab, 3, 200 + seed);
        s.delta = (seed % 3) as u64;
        s.policy = SchedulerPolicy::WeightedRandom;
        s.faults.drop_rate = 0.1;
        s.faults.dup_rate = 0.05;
        s.faults.reorder = true;
        s.step_budget = 40_000;
        s.workload = vec![
            script(
                0,
                NodeScript {
                    loop_items: vec![OpSpec::Write, OpSpec::Snapshot],
                    repeat: true,
                    stop: StopCond::AfterCount(3),
                    ..Default::default()
                },
            ),
            script(
                1,
                NodeScript {
                    loop_items: vec![OpSpec::Write],
                    repeat: true,
                    stop: StopCond::AfterCount(3),
                    think_steps: 60,
                    ..Default::default()
                },
            ),
        ];
        let out = run_scenario(&s).unwrap();
        assert_eq!(out.report.ops_open, 0, "seed {seed}");
        let exhaustive = snapsim::checker::check_exhaustive(&out.world.history)
            .expect("small history");
        let poly = snapsim::checker::check_polynomial(&out.world.history);
        assert_eq!(exhaustive.linearizable, poly.linearizable, "seed {seed}");
        assert!(exhaustive.linearizable, "seed {seed}");
        let _ = check_linearizable(&out.world.history);
    }
}
