//! Append-only execution trace, serializable to JSON lines for the checker
//! and for golden regression tests.

use crate::registers::NodeId;
use crate::wire::MsgKind;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "ev")]
pub enum TraceEvent {
    Send {
        src: NodeId,
        dst: NodeId,
        kind: MsgKind,
        seq: u64,
        #[serde(skip_serializing_if = "Option::is_none")]
        digest: Option<u64>,
    },
    Deliver {
        src: NodeId,
        dst: NodeId,
        kind: MsgKind,
        seq: u64,
        forced: bool,
    },
    Drop {
        src: NodeId,
        dst: NodeId,
        kind: MsgKind,
        seq: u64,
    },
    Duplicate {
        src: NodeId,
        dst: NodeId,
        kind: MsgKind,
        seq: u64,
    },
    Evict {
        src: NodeId,
        dst: NodeId,
        kind: MsgKind,
        seq: u64,
    },
    /// Stale buffered replies removed by a housekeeping pass.
    Purge { dst: NodeId, count: usize },
    HkPass { node: NodeId },
    OuterPass { node: NodeId },
    RoundComplete { node: NodeId },
    EnterSnapBatch { node: NodeId, tasks: Vec<(NodeId, u64)> },
    ExitSnapBatch { node: NodeId },
    Invoke { node: NodeId, write: bool },
    Respond { node: NodeId, write: bool },
    Crash { node: NodeId },
    Resume { node: NodeId },
    Inject { edits: usize },
    Freeze { node: NodeId },
    ResetApplied,
    CycleBoundary { index: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: u64,
    #[serde(flatten)]
    pub ev: TraceEvent,
}

#[derive(Default)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

impl Trace {
    pub fn push(&mut self, step: u64, ev: TraceEvent) {
        self.records.push(TraceRecord { step, ev });
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("trace record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, serde_json::Error> {
        let mut records = Vec::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(line)?);
        }
        Ok(Trace { records })
    }
}
