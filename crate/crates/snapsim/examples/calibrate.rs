// Calibration probe for acceptance thresholds (not part of the test suite).
use snapsim::harness::{builtin, run_scenario, Algorithm, Scenario, WorkloadEntry};
use snapsim::sim::{NodeScript, OpSpec, SchedulerPolicy, StopCond};
use snapsim::wire::MsgKind;

fn batching_scenario(delta: u64, n: usize, snapshots: u64, seed: u64) -> Scenario {
    Scenario {
        name: "batching".into(),
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
                node: 2,
                script: NodeScript {
                    loop_items: vec![OpSpec::Write],
                    repeat: true,
                    ..Default::default()
                },
            },
            WorkloadEntry {
                node: 3,
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
                    think_steps: 30,
                    ..Default::default()
                },
            },
        ],
    }
}

fn main() {
    // delta-batching with heavy churn (3 writers).
    let mut min_gap = u64::MAX;
    let mut seeds_with_phases = 0;
    for seed in 1..=20 {
        let out = run_scenario(&batching_scenario(4, 5, 4, seed)).unwrap();
        if out.report.write_block_phases >= 2 {
            seeds_with_phases += 1;
            min_gap = min_gap.min(*out.report.writes_between_phases.iter().min().unwrap());
        }
        println!(
            "batch seed {seed}: phases {} gaps {:?} snaps {} steps {}",
            out.report.write_block_phases,
            out.report.writes_between_phases,
            out.report.snapshots_completed,
            out.report.steps,
        );
    }
    println!("batching: {seeds_with_phases}/20 seeds with >=2 phases, min gap {min_gap}");

    // Termination latency with heavy churn too (worst case for the bound).
    for delta in [0u64, 1, 4, 8] {
        let mut worst_ratio = 0f64;
        let mut worst_abs = 0;
        for seed in 1..=10 {
            let out = run_scenario(&batching_scenario(delta, 5, 3, seed)).unwrap();
            for o in out.report.ops.iter().filter(|o| !o.write) {
                let lat = o.cycles();
                worst_ratio = worst_ratio.max(lat as f64 / (delta + 1) as f64);
                worst_abs = worst_abs.max(lat);
            }
        }
        println!("3w delta {delta}: worst {worst_abs} cycles ratio {worst_ratio:.2}");
    }

    // Baseline equivalence spot check.
    for seed in 1..=5 {
        let mut s = builtin::write_snapshot_write(Algorithm::NbSelfstab, 3, seed);
        s.workload.push(WorkloadEntry {
            node: 0,
            script: NodeScript {
                loop_items: vec![OpSpec::Write, OpSpec::Snapshot],
                repeat: true,
                stop: StopCond::AfterCount(4),
                think_steps: 35,
                ..Default::default()
            },
        });
        let a = run_scenario(&s).unwrap();
        let mut s2 = s.clone();
        s2.algorithm = Algorithm::NbBaseline;
        let b = run_scenario(&s2).unwrap();
        let strip = |h: &snapsim::checker::History| {
            h.events
                .iter()
                .map(|e| format!("{:?}{:?}", e.node, e.kind))
                .collect::<Vec<_>>()
        };
        let (ha, hb) = (strip(&a.world.history), strip(&b.world.history));
        println!(
            "baseline-eq seed {seed}: {} events, equal: {}",
            ha.len(),
            ha == hb
        );
        if ha != hb {
            for (x, y) in ha.iter().zip(hb.iter()) {
                if x != y {
                    println!("  selfstab: {x}\n  baseline: {y}");
                    break;
                }
            }
        }
    }
}
