//! Linearizability verification for single-writer snapshot histories.
//!
//! Two independent checkers: an exhaustive interleaving search usable up to
//! ten operations, and a polynomial checker that exploits the single-writer
//! structure (per-entry window bounds, cut closure under the real-time write
//! order, and a total order over returned vectors consistent with snapshot
//! real-time order). On small histories they must agree; the acceptance
//! suite enforces that.

use super::history::{EventKind, History};
use crate::protocol::Op;
use crate::registers::{NodeId, Value};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};

/// Checker output. A positive verdict carries a witness order (indices into
/// the effective-operation list it also returns); a negative one carries the
/// first violation certificate found.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub linearizable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub violation: Option<String>,
}

impl Verdict {
    fn ok(witness: Vec<String>) -> Self {
        Verdict {
            linearizable: true,
            witness: Some(witness),
            violation: None,
        }
    }

    fn fail(cert: String) -> Self {
        Verdict {
            linearizable: false,
            witness: None,
            violation: Some(cert),
        }
    }
}

const INFINITY: u64 = u64::MAX;

#[derive(Clone, Debug)]
enum OpBody {
    /// The `ordinal`-th write of `node` (1-based in program order).
    Write { ordinal: u64 },
    /// A snapshot returning, per node, the ordinal of the included write
    /// (0 = none).
    Snapshot { view: Vec<u64> },
}

#[derive(Clone, Debug)]
struct EffOp {
    node: NodeId,
    invoke: u64,
    /// Response step; `INFINITY` for effective-but-unresponded writes.
    respond: u64,
    body: OpBody,
}

impl EffOp {
    fn label(&self) -> String {
        match &self.body {
            OpBody::Write { ordinal } => format!("w{}#{}", self.node, ordinal),
            OpBody::Snapshot { view } => format!("s{}@{:?}", self.node, view),
        }
    }
}

struct Parsed {
    n: usize,
    ops: Vec<EffOp>,
    /// invoke step of each (node, ordinal) write, effective or not.
    write_invoke: BTreeMap<(NodeId, u64), u64>,
    /// respond step of each completed write.
    write_respond: BTreeMap<(NodeId, u64), u64>,
}

/// Translate a history into effective operations with ordinal-coded views.
///
/// Effectiveness is retrospective: a write whose invoker never responded is
/// effective exactly when some effective snapshot returned its value.
fn parse(history: &History) -> Result<Parsed, String> {
    let mut n = 0;
    for ev in &history.events {
        n = n.max(ev.node + 1);
        if let EventKind::Respond {
            snapshot_result: Some(arr),
            ..
        } = &ev.kind
        {
            n = n.max(arr.len());
        }
    }

    // First pass: per-node write sequences in invocation order.
    struct WriteRec {
        value: Value,
        invoke: u64,
        respond: Option<u64>,
    }
    let mut writes: Vec<Vec<WriteRec>> = (0..n).map(|_| Vec::new()).collect();
    struct SnapRec {
        node: NodeId,
        invoke: u64,
        respond: Option<u64>,
        result: Option<crate::registers::RegisterArray>,
    }
    let mut snaps: Vec<SnapRec> = Vec::new();
    let mut open: BTreeMap<NodeId, usize> = BTreeMap::new(); // node -> index into its kind list
    let mut open_kind: BTreeMap<NodeId, bool> = BTreeMap::new(); // true = write

    for ev in &history.events {
        match &ev.kind {
            EventKind::Invoke { op } => {
                match op {
                    Op::Write(v) => {
                        writes[ev.node].push(WriteRec {
                            value: v.clone(),
                            invoke: ev.step,
                            respond: None,
                        });
                        open.insert(ev.node, writes[ev.node].len() - 1);
                        open_kind.insert(ev.node, true);
                    }
                    Op::Snapshot => {
                        snaps.push(SnapRec {
                            node: ev.node,
                            invoke: ev.step,
                            respond: None,
                            result: None,
                        });
                        open.insert(ev.node, snaps.len() - 1);
                        open_kind.insert(ev.node, false);
                    }
                };
            }
            EventKind::Respond {
                snapshot_result, ..
            } => {
                let idx = open.remove(&ev.node).ok_or("respond without invoke")?;
                if open_kind.remove(&ev.node).unwrap() {
                    writes[ev.node][idx].respond = Some(ev.step);
                } else {
                    snaps[idx].respond = Some(ev.step);
                    snaps[idx].result = snapshot_result.clone();
                }
            }
        }
    }

    // Value identity map; duplicate written values make value-matching
    // ambiguous and are rejected as a checker input defect.
    let mut by_value: BTreeMap<Vec<u8>, (NodeId, u64)> = BTreeMap::new();
    for (node, list) in writes.iter().enumerate() {
        for (i, w) in list.iter().enumerate() {
            let ordinal = (i + 1) as u64;
            if by_value.insert(w.value.0.clone(), (node, ordinal)).is_some() {
                return Err(format!(
                    "duplicate written value {:?}; workload must write distinct values",
                    w.value
                ));
            }
        }
    }

    // Decode snapshot views and collect which pending writes become
    // effective by being returned.
    let mut returned: BTreeSet<(NodeId, u64)> = BTreeSet::new();
    let mut parsed_snaps = Vec::new();
    for s in &snaps {
        let (respond, result) = match (s.respond, &s.result) {
            (Some(r), Some(arr)) => (r, arr),
            // Open at trace end: not effective, excluded.
            _ => continue,
        };
        if result.len() != n {
            return Err(format!(
                "snapshot result has {} entries for {} nodes",
                result.len(),
                n
            ));
        }
        let mut view = vec![0u64; n];
        for k in 0..n {
            match result[k].value() {
                None => view[k] = 0,
                Some(v) => match by_value.get(&v.0) {
                    Some(&(owner, ordinal)) if owner == k => {
                        view[k] = ordinal;
                        returned.insert((k, ordinal));
                    }
                    Some(&(owner, _)) => {
                        return Err(format!(
                            "snapshot by {} returned at entry {k} a value written by {owner}",
                            s.node
                        ));
                    }
                    None => {
                        return Err(format!(
                            "snapshot by {} returned a value never written at entry {k}",
                            s.node
                        ));
                    }
                },
            }
        }
        parsed_snaps.push(EffOp {
            node: s.node,
            invoke: s.invoke,
            respond,
            body: OpBody::Snapshot { view },
        });
    }

    let mut ops = Vec::new();
    let mut write_invoke = BTreeMap::new();
    let mut write_respond = BTreeMap::new();
    for (node, list) in writes.iter().enumerate() {
        for (i, w) in list.iter().enumerate() {
            let ordinal = (i + 1) as u64;
            write_invoke.insert((node, ordinal), w.invoke);
            if let Some(r) = w.respond {
                write_respond.insert((node, ordinal), r);
            }
            let effective = w.respond.is_some() || returned.contains(&(node, ordinal));
            if effective {
                ops.push(EffOp {
                    node,
                    invoke: w.invoke,
                    respond: w.respond.unwrap_or(INFINITY),
                    body: OpBody::Write { ordinal },
                });
            }
        }
    }
    ops.extend(parsed_snaps);
    ops.sort_by_key(|o| o.invoke);
    Ok(Parsed {
        n,
        ops,
        write_invoke,
        write_respond,
    })
}

/// Polynomial-time checker exploiting the single-writer structure.
pub fn check_polynomial(history: &History) -> Verdict {
    let parsed = match parse(history) {
        Ok(p) => p,
        Err(e) => return Verdict::fail(e),
    };
    let n = parsed.n;
    let snaps: Vec<&EffOp> = parsed
        .ops
        .iter()
        .filter(|o| matches!(o.body, OpBody::Snapshot { .. }))
        .collect();

    let view_of = |s: &EffOp| match &s.body {
        OpBody::Snapshot { view } => view.clone(),
        _ => unreachable!(),
    };

    // Per-entry window bounds and cut closure.
    for s in &snaps {
        let view = view_of(s);
        for k in 0..n {
            // Lower bound: every write of k that responded before the
            // snapshot's invocation must be included.
            let mut lo = 0u64;
            for (&(node, ordinal), &resp) in parsed.write_respond.range((k, 0)..=(k, u64::MAX)) {
                debug_assert_eq!(node, k);
                if resp < s.invoke {
                    lo = lo.max(ordinal);
                }
            }
            if view[k] < lo {
                return Verdict::fail(format!(
                    "snapshot {} misses write w{k}#{lo} that completed before its invocation",
                    s.label()
                ));
            }
            // Upper bound: nothing invoked after the snapshot responded.
            if view[k] > 0 {
                match parsed.write_invoke.get(&(k, view[k])) {
                    Some(&inv) if inv < s.respond => {}
                    _ => {
                        return Verdict::fail(format!(
                            "snapshot {} returns w{k}#{} not invoked before its response",
                            s.label(),
                            view[k]
                        ));
                    }
                }
            }
        }
        // Cut closure: if the view includes a write W, it includes every
        // write that really-happened-before W.
        for b in 0..n {
            if view[b] == 0 {
                continue;
            }
            let t = parsed.write_invoke[&(b, view[b])];
            for a in 0..n {
                let mut req = 0u64;
                for (&(node, ordinal), &resp) in
                    parsed.write_respond.range((a, 0)..=(a, u64::MAX))
                {
                    debug_assert_eq!(node, a);
                    if resp < t {
                        req = req.max(ordinal);
                    }
                }
                if view[a] < req {
                    return Verdict::fail(format!(
                        "snapshot {} includes w{b}#{} but misses w{a}#{req} that preceded it",
                        s.label(),
                        view[b]
                    ));
                }
            }
        }
    }

    // Returned vectors are totally ordered, consistently with the real-time
    // order of non-overlapping snapshots.
    let leq = |a: &[u64], b: &[u64]| a.iter().zip(b.iter()).all(|(x, y)| x <= y);
    for (i, s1) in snaps.iter().enumerate() {
        let v1 = view_of(s1);
        for s2 in snaps.iter().skip(i + 1) {
            let v2 = view_of(s2);
            if !leq(&v1, &v2) && !leq(&v2, &v1) {
                return Verdict::fail(format!(
                    "incomparable snapshot views {} vs {}",
                    s1.label(),
                    s2.label()
                ));
            }
            if s1.respond < s2.invoke && !leq(&v1, &v2) {
                return Verdict::fail(format!(
                    "snapshot view of {} regresses after {}",
                    s2.label(),
                    s1.label()
                ));
            }
            if s2.respond < s1.invoke && !leq(&v2, &v1) {
                return Verdict::fail(format!(
                    "snapshot view of {} regresses after {}",
                    s1.label(),
                    s2.label()
                ));
            }
        }
    }

    // Construct the witness: snapshots in view order, each batch of included
    // writes emitted (invoke-sorted) ahead of its snapshot.
    let mut snap_order: Vec<usize> = (0..parsed.ops.len())
        .filter(|&i| matches!(parsed.ops[i].body, OpBody::Snapshot { .. }))
        .collect();
    snap_order.sort_by(|&a, &b| {
        let va = view_of(&parsed.ops[a]);
        let vb = view_of(&parsed.ops[b]);
        if va == vb {
            parsed.ops[a].invoke.cmp(&parsed.ops[b].invoke)
        } else if leq(&va, &vb) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    let mut witness: Vec<usize> = Vec::with_capacity(parsed.ops.len());
    let mut emitted = vec![0u64; n];
    let write_idx: BTreeMap<(NodeId, u64), usize> = parsed
        .ops
        .iter()
        .enumerate()
        .filter_map(|(i, o)| match o.body {
            OpBody::Write { ordinal } => Some(((o.node, ordinal), i)),
            _ => None,
        })
        .collect();
    let emit_up_to = |target: &[u64], witness: &mut Vec<usize>, emitted: &mut Vec<u64>| {
        let mut batch = Vec::new();
        for k in 0..n {
            for ordinal in (emitted[k] + 1)..=target[k] {
                if let Some(&idx) = write_idx.get(&(k, ordinal)) {
                    batch.push(idx);
                }
                // Non-effective writes below the cut simply never appear.
            }
            emitted[k] = emitted[k].max(target[k]);
        }
        batch.sort_by_key(|&i| parsed.ops[i].invoke);
        witness.extend(batch);
    };
    for &si in &snap_order {
        let view = view_of(&parsed.ops[si]);
        emit_up_to(&view, &mut witness, &mut emitted);
        witness.push(si);
    }
    let tops: Vec<u64> = (0..n)
        .map(|k| {
            parsed
                .ops
                .iter()
                .filter_map(|o| match o.body {
                    OpBody::Write { ordinal } if o.node == k => Some(ordinal),
                    _ => None,
                })
                .max()
                .unwrap_or(0)
        })
        .collect();
    emit_up_to(&tops, &mut witness, &mut emitted);
    debug_assert_eq!(witness.len(), parsed.ops.len());

    // Validate the witness against the sequential specification and the
    // real-time precedence relation; a failure here means the structural
    // conditions above have a gap, and the history is reported as such.
    let mut last = vec![0u64; n];
    for &i in &witness {
        match &parsed.ops[i].body {
            OpBody::Write { ordinal } => last[parsed.ops[i].node] = *ordinal,
            OpBody::Snapshot { view } => {
                if view != &last {
                    return Verdict::fail(format!(
                        "witness replay mismatch at {}: expected {:?}, state {:?}",
                        parsed.ops[i].label(),
                        view,
                        last
                    ));
                }
            }
        }
    }
    for (pos, &i) in witness.iter().enumerate() {
        for &j in witness.iter().skip(pos + 1) {
            if parsed.ops[j].respond < parsed.ops[i].invoke {
                return Verdict::fail(format!(
                    "witness violates real-time order: {} placed before {}",
                    parsed.ops[i].label(),
                    parsed.ops[j].label()
                ));
            }
        }
    }
    Verdict::ok(witness.iter().map(|&i| parsed.ops[i].label()).collect())
}

/// Exhaustive interleaving search with memoized failure states. `None` when
/// the history exceeds `max_ops` effective operations.
pub fn check_exhaustive_capped(history: &History, max_ops: usize) -> Option<Verdict> {
    let parsed = match parse(history) {
        Ok(p) => p,
        Err(e) => return Some(Verdict::fail(e)),
    };
    if parsed.ops.len() > max_ops.min(24) {
        return None;
    }
    let n = parsed.n;
    let m = parsed.ops.len();
    let full: u32 = (1u32 << m) - 1;
    let mut failed: BTreeSet<u32> = BTreeSet::new();
    let mut stack_witness: Vec<usize> = Vec::new();

    fn dfs(
        mask: u32,
        full: u32,
        parsed: &Parsed,
        n: usize,
        failed: &mut BTreeSet<u32>,
        witness: &mut Vec<usize>,
    ) -> bool {
        if mask == full {
            return true;
        }
        if failed.contains(&mask) {
            return false;
        }
        // State: last placed write ordinal per node, derivable from the mask.
        let mut last = vec![0u64; n];
        for (i, op) in parsed.ops.iter().enumerate() {
            if mask & (1 << i) != 0 {
                if let OpBody::Write { ordinal } = op.body {
                    last[op.node] = last[op.node].max(ordinal);
                }
            }
        }
        'cand: for (i, op) in parsed.ops.iter().enumerate() {
            if mask & (1 << i) != 0 {
                continue;
            }
            // Real-time minimality: everything that responded before this
            // op's invocation must already be placed.
            for (j, other) in parsed.ops.iter().enumerate() {
                if i != j && mask & (1 << j) == 0 && other.respond < op.invoke {
                    continue 'cand;
                }
            }
            if let OpBody::Snapshot { view } = &op.body {
                if view != &last {
                    continue;
                }
            }
            witness.push(i);
            if dfs(mask | (1 << i), full, parsed, n, failed, witness) {
                return true;
            }
            witness.pop();
        }
        failed.insert(mask);
        false
    }

    let ok = dfs(0, full, &parsed, n, &mut failed, &mut stack_witness);
    Some(if ok {
        Verdict::ok(
            stack_witness
                .iter()
                .map(|&i| parsed.ops[i].label())
                .collect(),
        )
    } else {
        Verdict::fail("no valid interleaving exists".to_string())
    })
}

/// Exhaustive search at the standard ten-operation cap.
pub fn check_exhaustive(history: &History) -> Option<Verdict> {
    check_exhaustive_capped(history, 10)
}

/// The combined checker: exhaustive search where feasible, the polynomial
/// single-writer checker beyond that.
pub fn check_linearizable(history: &History) -> Verdict {
    match check_exhaustive(history) {
        Some(v) => v,
        None => check_polynomial(history),
    }
}
