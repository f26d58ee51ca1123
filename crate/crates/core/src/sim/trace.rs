//! Per-slot episode records and their NDJSON form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::model::StrategyColumn;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub seed: u64,
    pub policy: String,
    pub config_hash: String,
    pub horizon: usize,
    pub classes: Vec<String>,
    pub nodes: Vec<String>,
    /// Sum of initial pool contents, bits.
    pub initial_bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub t: usize,
    pub arrivals: Vec<u64>,
    pub attempts: Vec<bool>,
    pub successes: Vec<bool>,
    pub columns: Vec<StrategyColumn>,
    /// Message-weighted residual success per class.
    pub rho: Vec<f64>,
    /// Expected loss per class.
    pub risk: Vec<f64>,
    pub delay: Vec<f64>,
    /// Messages delivered late or deferred.
    pub sla_violations: Vec<f64>,
    /// Messages held back for lack of compliant key.
    pub deferred: Vec<f64>,
    /// Messages sent under the classical fallback without QKD key.
    pub fallback: Vec<f64>,
    /// Key bits shed by feasibility recovery.
    pub relaxed_bits: Vec<f64>,
    /// Key bits served per class.
    pub key_bits: Vec<f64>,
    /// Pool level per node after the slot.
    pub pools: Vec<u64>,
    pub generated: u64,
    pub consumed: u64,
    pub expired: u64,
    pub overflow: u64,
    /// Bits requested by nodes but not served.
    pub deficit: u64,
    pub routed: u64,
    pub cross_domain: u64,
    pub pool_price: f64,
    pub node_price: f64,
    pub threshold: f64,
    /// Share of messages under S1, S2, S3 (fallback counts as S3).
    pub strategy_shares: [f64; 3],
    pub qosec_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub header: TraceHeader,
    pub slots: Vec<SlotRecord>,
}

/// Integer key totals over an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KeyLedger {
    pub initial: u64,
    pub generated: u64,
    pub consumed: u64,
    pub expired: u64,
    pub overflow: u64,
    pub final_bits: u64,
}

impl KeyLedger {
    /// `initial + generated == consumed + expired + overflow + final`.
    pub fn balances(&self) -> bool {
        self.initial as u128 + self.generated as u128
            == self.consumed as u128 + self.expired as u128 + self.overflow as u128 + self.final_bits as u128
    }
}

impl EpisodeTrace {
    /// Header line followed by one line per slot.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", serde_json::to_string(&self.header).expect("header serializes"));
        for s in &self.slots {
            let _ = writeln!(out, "{}", serde_json::to_string(s).expect("record serializes"));
        }
        out
    }

    pub fn from_ndjson(text: &str) -> crate::Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let parse_err = |e: serde_json::Error| crate::Error::Parse(e.to_string());
        let header: TraceHeader = serde_json::from_str(lines.next().unwrap_or("")).map_err(parse_err)?;
        let slots = lines.map(|l| serde_json::from_str(l).map_err(parse_err)).collect::<crate::Result<_>>()?;
        Ok(Self { header, slots })
    }

    pub fn ledger(&self) -> KeyLedger {
        KeyLedger {
            initial: self.header.initial_bits,
            generated: self.slots.iter().map(|s| s.generated).sum(),
            consumed: self.slots.iter().map(|s| s.consumed).sum(),
            expired: self.slots.iter().map(|s| s.expired).sum(),
            overflow: self.slots.iter().map(|s| s.overflow).sum(),
            final_bits: self
                .slots
                .last()
                .map(|s| s.pools.iter().sum())
                .unwrap_or(self.header.initial_bits),
        }
    }

    pub fn cumulative_risk(&self) -> f64 {
        self.slots.iter().map(|s| s.risk.iter().sum::<f64>()).sum()
    }
}
