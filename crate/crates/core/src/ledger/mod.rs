//! Ingestion of transaction exports, attribution tags, exchange rates and
//! case filings into an immutable in-memory store.

mod cases;
mod file_number;
mod rates;
mod tags;
mod transaction;

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::NaiveDate;
use thiserror::Error;

pub use cases::{parse_cases, write_cases, CaseCategory, CaseRecord, Role, SeedAddress};
pub use file_number::{FileNumber, FileNumberError};
pub use rates::{parse_rates, utc_day, write_rates, FxRate, FxRates, SATOSHI_PER_BTC};
pub use tags::{parse_tags, write_tags, AttributionTag, TagCategory};
pub use transaction::{
    parse_transactions, write_transactions, Transaction, TxFormat, TxIo, COINBASE,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate tx_id {tx_id:?}")]
    DuplicateTx { line: usize, tx_id: String },
    #[error("line {line}: non-positive value {value} for address {address:?}")]
    NonPositiveValue {
        line: usize,
        address: String,
        value: i64,
    },
    #[error("no exchange rate on or before {0}")]
    NoRate(NaiveDate),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable transaction store indexed by tx id and by address.
#[derive(Debug, Clone, Default)]
pub struct Ledger {
    txs: Vec<Transaction>,
    by_id: HashMap<String, usize>,
    by_address: HashMap<String, Vec<usize>>,
}

impl Ledger {
    pub fn new(txs: Vec<Transaction>) -> Result<Self, IngestError> {
        let mut by_id = HashMap::with_capacity(txs.len());
        let mut by_address: HashMap<String, Vec<usize>> = HashMap::new();
        for (idx, tx) in txs.iter().enumerate() {
            if by_id.insert(tx.tx_id.clone(), idx).is_some() {
                return Err(IngestError::DuplicateTx {
                    line: idx + 1,
                    tx_id: tx.tx_id.clone(),
                });
            }
            let mut mentioned = HashSet::new();
            for io in tx.inputs.iter().chain(&tx.outputs) {
                if mentioned.insert(io.address.as_str()) {
                    by_address.entry(io.address.clone()).or_default().push(idx);
                }
            }
        }
        Ok(Self {
            txs,
            by_id,
            by_address,
        })
    }

    pub fn len(&self) -> usize {
        self.txs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.txs.is_empty()
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.txs
    }

    pub fn get(&self, tx_id: &str) -> Option<&Transaction> {
        self.by_id.get(tx_id).map(|&i| &self.txs[i])
    }

    /// Transactions that mention `address` on either side, in ledger order.
    pub fn transactions_for<'a>(
        &'a self,
        address: &str,
    ) -> impl Iterator<Item = (usize, &'a Transaction)> + 'a {
        self.by_address
            .get(address)
            .map(Vec::as_slice)
            .unwrap_or_default()
            .iter()
            .map(move |&i| (i, &self.txs[i]))
    }

    pub fn contains_address(&self, address: &str) -> bool {
        self.by_address.contains_key(address)
    }

    /// Number of distinct addresses, including the coinbase marker if present.
    pub fn address_count(&self) -> usize {
        self.by_address.len()
    }

    pub fn addresses(&self) -> impl Iterator<Item = &str> {
        self.by_address.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveCases {
    pub active: Vec<CaseRecord>,
    /// Distinct perpetrator seed addresses that never appear in the ledger.
    pub inactive_addresses: usize,
}

/// Keeps cases with at least one perpetrator seed address that appears in
/// the ledger.
pub fn filter_active_cases(cases: &[CaseRecord], ledger: &Ledger) -> ActiveCases {
    let mut inactive = BTreeSet::new();
    let active = cases
        .iter()
        .filter(|case| {
            let mut any = false;
            for address in case.perpetrator_addresses() {
                if ledger.contains_address(address) {
                    any = true;
                } else {
                    inactive.insert(address);
                }
            }
            any
        })
        .cloned()
        .collect();
    ActiveCases {
        active,
        inactive_addresses: inactive.len(),
    }
}
