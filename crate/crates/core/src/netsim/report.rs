//! Per-trial results.

use std::collections::BTreeMap;

use serde::Serialize;

use super::Schedule;
use super::{Decision, Violation};
use crate::leader_election::node::ElectionSummary;
use crate::outlier_consensus::node::OutlierSummary;
use crate::process::ProcessId;
use crate::scenario::Protocol;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Decided,
    DeadlineExceeded,
    NonViable,
}

impl Termination {
    pub fn name(self) -> &'static str {
        match self {
            Termination::Decided => "decided",
            Termination::DeadlineExceeded => "deadline_exceeded",
            Termination::NonViable => "non_viable",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KeyholderReport {
    pub id: ProcessId,
    pub keys: usize,
    pub messages_sent: u64,
    pub messages_received: u64,
    pub decryptions_granted: u64,
    pub decryptions_denied: u64,
}

/// One untrusted-variant instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceReport {
    pub initiator: ProcessId,
    pub viable: bool,
    /// Result as announced by the initiator.
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub protocol: Protocol,
    pub trial: u32,
    pub seed: u64,
    pub n: usize,
    /// `None` when the graph is disconnected.
    pub diameter: Option<usize>,
    pub edges: usize,
    pub schedule: Schedule,
    pub max_latency: u64,
    pub ciphertext_bytes: u64,
    pub inputs: crate::scenario::Inputs,
    /// Indexed by process.
    pub decided_values: Vec<Option<Decision>>,
    pub rounds_to_decide: Vec<Option<u64>>,
    pub decided_at: Vec<Option<u64>>,
    pub messages_sent: Vec<u64>,
    pub bytes_modeled: Vec<u64>,
    pub degree: Vec<usize>,
    /// Process to the tick it stopped at.
    pub crashed: BTreeMap<ProcessId, u64>,
    pub keyholders: Vec<KeyholderReport>,
    /// Largest `messages_sent / (diameter * degree)` over processes.
    pub k_observed: Option<f64>,
    pub privacy_violations: Vec<Violation>,
    pub termination: Termination,
    pub expect_termination: bool,
    pub end_tick: u64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub instances: Vec<InstanceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub election: Option<ElectionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outlier: Option<OutlierSummary>,
    /// Process to protocol errors it reported.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub errors: BTreeMap<ProcessId, Vec<String>>,
}

impl SimReport {
    /// The run terminated as the scenario expected and the audit is clean.
    pub fn passed(&self) -> bool {
        let terminated = self.termination == Termination::Decided;
        self.privacy_violations.is_empty() && terminated == self.expect_termination
    }

    pub fn decided_count(&self) -> usize {
        self.decided_values.iter().filter(|d| d.is_some()).count()
    }

    pub fn rounds_max(&self) -> Option<u64> {
        self.rounds_to_decide.iter().flatten().copied().max()
    }

    pub fn messages_total(&self) -> u64 {
        self.messages_sent.iter().sum::<u64>()
            + self.keyholders.iter().map(|k| k.messages_sent).sum::<u64>()
    }

    pub fn messages_max(&self) -> u64 {
        self.messages_sent.iter().copied().max().unwrap_or(0)
    }

    pub fn bytes_total(&self) -> u64 {
        self.bytes_modeled.iter().sum()
    }

    /// Distinct decided values, in process order, rendered as text.
    pub fn decided_text(&self) -> String {
        let mut seen: Vec<String> = Vec::new();
        for d in self.decided_values.iter().flatten() {
            let s = match d {
                Decision::Average(v) => format!("{v}"),
                Decision::Leader(p) => p.to_string(),
            };
            if !seen.contains(&s) {
                seen.push(s);
            }
        }
        seen.join(";")
    }
}
