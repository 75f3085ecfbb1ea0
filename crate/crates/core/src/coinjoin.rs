//! Equal-output CoinJoin detection.
//!
//! A transaction is flagged when all of the following hold:
//!
//! * it spends from at least two distinct input addresses,
//! * its most frequent non-dust output value `v` occurs `f >= min_multiplicity` times,
//! * the number of distinct input addresses is at least `f`,
//! * it has at least `f` outputs (the equal-value outputs plus optional change).
//!
//! This is the classic JoinMarket-style signature. Outputs below
//! `min_value` never count towards `f`, so dust batching is not flagged.
//! It does not recognise PayJoin or arbitrary-amount coordinators.

use std::collections::HashMap;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::ledger::{Ledger, Transaction};

pub const DEFAULT_MIN_MULTIPLICITY: usize = 2;
/// Standard dust threshold in satoshi.
pub const DEFAULT_MIN_VALUE: u64 = 546;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown coinjoin policy {0:?}, expected default, off or custom:<path>")]
    UnknownPolicy(String),
    #[error("min_multiplicity must be at least 2, found {0}")]
    MultiplicityTooSmall(usize),
    #[error("reading policy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("policy file: {0}")]
    Kv(#[from] KvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoinJoinPolicy {
    pub enabled: bool,
    pub min_multiplicity: usize,
    pub min_value: u64,
}

impl Default for CoinJoinPolicy {
    fn default() -> Self {
        Self {
            enabled: true,
            min_multiplicity: DEFAULT_MIN_MULTIPLICITY,
            min_value: DEFAULT_MIN_VALUE,
        }
    }
}

impl CoinJoinPolicy {
    pub fn off() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    /// Policy from a `key=value` file with optional keys `enabled`,
    /// `min_multiplicity` and `min_value`.
    pub fn from_kv_text(text: &str) -> Result<Self, PolicyError> {
        let kv = KvMap::parse(text)?;
        kv.reject_unknown(&["enabled", "min_multiplicity", "min_value"])?;
        let mut policy = Self::default();
        if let Some(enabled) = kv.parsed("enabled")? {
            policy.enabled = enabled;
        }
        if let Some(f) = kv.parsed("min_multiplicity")? {
            policy.min_multiplicity = f;
        }
        if let Some(v) = kv.parsed("min_value")? {
            policy.min_value = v;
        }
        policy.validate()
    }

    /// Parses the `--coinjoin-policy` flag: `default`, `off` or `custom:<path>`.
    pub fn from_flag(flag: &str) -> Result<Self, PolicyError> {
        match flag {
            "default" => Ok(Self::default()),
            "off" => Ok(Self::off()),
            _ => match flag.strip_prefix("custom:") {
                Some(path) => Self::from_kv_text(&std::fs::read_to_string(Path::new(path))?),
                None => Err(PolicyError::UnknownPolicy(flag.to_string())),
            },
        }
    }

    fn validate(self) -> Result<Self, PolicyError> {
        if self.min_multiplicity < 2 {
            return Err(PolicyError::MultiplicityTooSmall(self.min_multiplicity));
        }
        Ok(self)
    }
}

impl FromStr for CoinJoinPolicy {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_flag(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CoinJoinVerdict {
    pub tx_id: String,
    pub is_coinjoin: bool,
    pub matched_output_value: Option<u64>,
    pub participant_estimate: Option<usize>,
}

impl CoinJoinVerdict {
    fn negative(tx: &Transaction) -> Self {
        Self {
            tx_id: tx.tx_id.clone(),
            is_coinjoin: false,
            matched_output_value: None,
            participant_estimate: None,
        }
    }
}

/// Most frequent output value at or above `min_value` and its multiplicity.
/// Ties prefer the larger value.
fn dominant_output(tx: &Transaction, min_value: u64) -> Option<(u64, usize)> {
    let mut counts: HashMap<u64, usize> = HashMap::new();
    for out in tx.outputs.iter().filter(|o| o.value >= min_value) {
        *counts.entry(out.value).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by_key(|&(value, count)| (count, value))
}

pub fn classify(tx: &Transaction, policy: &CoinJoinPolicy) -> CoinJoinVerdict {
    if !policy.enabled || tx.is_coinbase() {
        return CoinJoinVerdict::negative(tx);
    }
    let distinct_inputs = tx.distinct_inputs().len();
    if distinct_inputs < 2 {
        return CoinJoinVerdict::negative(tx);
    }
    match dominant_output(tx, policy.min_value) {
        Some((value, count))
            if count >= policy.min_multiplicity
                && distinct_inputs >= count
                && tx.outputs.len() >= count =>
        {
            CoinJoinVerdict {
                tx_id: tx.tx_id.clone(),
                is_coinjoin: true,
                matched_output_value: Some(value),
                participant_estimate: Some(count),
            }
        }
        _ => CoinJoinVerdict::negative(tx),
    }
}

/// Verdicts for every transaction of a ledger, in ledger order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdicts {
    verdicts: Vec<CoinJoinVerdict>,
}

impl Verdicts {
    pub fn classify_ledger(ledger: &Ledger, policy: &CoinJoinPolicy) -> Self {
        let verdicts = ledger
            .transactions()
            .par_iter()
            .map(|tx| classify(tx, policy))
            .collect();
        Self { verdicts }
    }

    /// Verdicts that flag nothing.
    pub fn none(ledger: &Ledger) -> Self {
        Self::classify_ledger(ledger, &CoinJoinPolicy::off())
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    pub fn is_coinjoin(&self, tx_index: usize) -> bool {
        self.verdicts[tx_index].is_coinjoin
    }

    pub fn flagged_count(&self) -> usize {
        self.verdicts.iter().filter(|v| v.is_coinjoin).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = &CoinJoinVerdict> {
        self.verdicts.iter()
    }

    /// CSV dump: `tx_id,is_coinjoin,matched_output_value,participant_estimate`.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("tx_id,is_coinjoin,matched_output_value,participant_estimate\n");
        for v in &self.verdicts {
            let value = v
                .matched_output_value
                .map(|x| x.to_string())
                .unwrap_or_default();
            let est = v
                .participant_estimate
                .map(|x| x.to_string())
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.tx_id, v.is_coinjoin, value, est
            ));
        }
        out
    }
}
