//! Inflow time series, payment value distributions and victim estimates.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{AddressId, EntityId};
use crate::graph::{EntityGraph, InflowTx};
use crate::ledger::{FxRates, IngestError, Ledger};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error(transparent)]
    Rate(#[from] IngestError),
    #[error("bucket edges must be finite and strictly increasing")]
    BadBuckets,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    /// Seed addresses as reported in the cases.
    Seed,
    /// Every address of the entities containing a seed.
    Expanded,
}

/// What an inflow series is computed over.
#[derive(Debug, Clone, Copy)]
pub enum InflowTarget<'a> {
    Seed(&'a BTreeSet<AddressId>),
    Expanded(&'a BTreeSet<EntityId>),
}

impl InflowTarget<'_> {
    pub fn scope(&self) -> Scope {
        match self {
            Self::Seed(_) => Scope::Seed,
            Self::Expanded(_) => Scope::Expanded,
        }
    }

    /// Receipts of the target in (timestamp, ledger) order.
    pub fn receipts(&self, graph: &EntityGraph, exclude_service: bool) -> Vec<InflowTx> {
        match self {
            Self::Seed(addresses) => graph.inflow_to_addresses(addresses, exclude_service),
            Self::Expanded(entities) => graph.inflow(entities, exclude_service),
        }
        .transactions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InflowPoint {
    pub timestamp: i64,
    pub cumulative_eur: f64,
    pub cumulative_satoshi: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InflowSeries {
    pub scope: Scope,
    pub points: Vec<InflowPoint>,
}

#[derive(Serialize)]
struct PlotPoint {
    t: i64,
    eur_cum: f64,
    sat_cum: u64,
}

impl InflowSeries {
    /// Cumulative (EUR, satoshi) received up to and including `timestamp`.
    pub fn value_at(&self, timestamp: i64) -> (f64, u64) {
        let idx = self.points.partition_point(|p| p.timestamp <= timestamp);
        match idx {
            0 => (0.0, 0),
            i => (
                self.points[i - 1].cumulative_eur,
                self.points[i - 1].cumulative_satoshi,
            ),
        }
    }

    pub fn total_satoshi(&self) -> u64 {
        self.points.last().map_or(0, |p| p.cumulative_satoshi)
    }

    /// CSV `t,eur_cum,sat_cum`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,eur_cum,sat_cum\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{:.2},{}\n",
                p.timestamp, p.cumulative_eur, p.cumulative_satoshi
            ));
        }
        out
    }

    /// Plot payload `{"scope": .., "points": [{"t","eur_cum","sat_cum"}]}`.
    pub fn plot_payload(&self) -> serde_json::Value {
        let points: Vec<PlotPoint> = self
            .points
            .iter()
            .map(|p| PlotPoint {
                t: p.timestamp,
                eur_cum: p.cumulative_eur,
                sat_cum: p.cumulative_satoshi,
            })
            .collect();
        serde_json::json!({ "scope": self.scope, "points": points })
    }
}

/// Cumulative inflow over time, valued in EUR at the daily rate of each
/// transaction. One point per receiving transaction.
pub fn inflow_series(
    graph: &EntityGraph,
    target: InflowTarget<'_>,
    rates: &FxRates,
    exclude_service: bool,
) -> Result<InflowSeries, StatsError> {
    let mut eur = 0.0;
    let mut sat = 0u64;
    let mut points = Vec::new();
    for receipt in target.receipts(graph, exclude_service) {
        eur += rates.to_eur(receipt.value, receipt.timestamp)?;
        sat += receipt.value;
        points.push(InflowPoint {
            timestamp: receipt.timestamp,
            cumulative_eur: eur,
            cumulative_satoshi: sat,
        });
    }
    Ok(InflowSeries {
        scope: target.scope(),
        points,
    })
}

/// Decade edges 10, 100, ..., 1,000,000 EUR.
pub fn default_buckets() -> Vec<f64> {
    (1..=6).map(|e| 10f64.powi(e)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PaymentDistribution {
    pub edges: Vec<f64>,
    /// `edges.len() + 1` counts: below the first edge, each `[edge_i, edge_i+1)`,
    /// then at or above the last edge.
    pub counts: Vec<usize>,
}

impl PaymentDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// CSV `lower_eur,upper_eur,count` with empty bounds for open ends.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower_eur,upper_eur,count\n");
        for (i, count) in self.counts.iter().enumerate() {
            let lower = i
                .checked_sub(1)
                .map(|j| self.edges[j].to_string())
                .unwrap_or_default();
            let upper = self.edges.get(i).map(|e| e.to_string()).unwrap_or_default();
            out.push_str(&format!("{lower},{upper},{count}\n"));
        }
        out
    }
}

pub fn bin_values(values: &[f64], edges: &[f64]) -> Result<PaymentDistribution, StatsError> {
    if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(StatsError::BadBuckets);
    }
    let mut counts = vec![0; edges.len() + 1];
    for v in values {
        counts[edges.partition_point(|e| e <= v)] += 1;
    }
    Ok(PaymentDistribution {
        edges: edges.to_vec(),
        counts,
    })
}

/// Histogram of incoming payment values in EUR.
pub fn value_distribution(
    payments: &[InflowTx],
    rates: &FxRates,
    edges: &[f64],
) -> Result<PaymentDistribution, StatsError> {
    let values = payments
        .iter()
        .map(|p| rates.to_eur(p.value, p.timestamp))
        .collect::<Result<Vec<_>, _>>()?;
    bin_values(&values, edges)
}

/// Unique-sender victim estimate alongside the number of incoming
/// payments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct VictimEstimate {
    pub unique_senders: usize,
    pub incoming_transactions: usize,
}

/// Counts distinct input addresses of transactions paying any seed address.
/// Addresses in `seeds` or `excluded` (typically the expanded set) are not
/// counted as senders, and transactions funded only by them are not
/// incoming.
pub fn victim_estimate<'a>(
    ledger: &Ledger,
    seeds: impl IntoIterator<Item = &'a str>,
    excluded: &BTreeSet<String>,
) -> VictimEstimate {
    let seeds: BTreeSet<&str> = seeds.into_iter().collect();
    let mut incoming = BTreeSet::new();
    let mut senders = BTreeSet::new();
    for seed in &seeds {
        for (idx, tx) in ledger.transactions_for(seed) {
            if tx.is_coinbase() || !tx.outputs.iter().any(|o| o.address == *seed) {
                continue;
            }
            let external: Vec<&str> = tx
                .distinct_inputs()
                .into_iter()
                .filter(|a| !seeds.contains(a) && !excluded.contains(*a))
                .collect();
            if !external.is_empty() {
                incoming.insert(idx);
                senders.extend(external);
            }
        }
    }
    VictimEstimate {
        unique_senders: senders.len(),
        incoming_transactions: incoming.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ledger::{parse_rates, Transaction, TxIo};

    fn rates() -> FxRates {
        parse_rates("date,eur_per_btc\n2022-01-01,20000\n".as_bytes()).unwrap()
    }

    #[test]
    fn binning_matches_direct_placement() {
        let d = bin_values(&[500.0, 1_500.0, 150_000.0], &[1_000.0, 100_000.0]).unwrap();
        assert_eq!(d.counts, vec![1, 1, 1]);
        assert_eq!(d.total(), 3);

        let empty = bin_values(&[], &default_buckets()).unwrap();
        assert_eq!(empty.counts, vec![0; 7]);

        // a value on an edge belongs to the bucket above it
        assert_eq!(
            bin_values(&[1_000.0], &[1_000.0]).unwrap().counts,
            vec![0, 1]
        );
    }

    #[test]
    fn rejects_unsorted_buckets() {
        assert!(matches!(
            bin_values(&[1.0], &[5.0, 5.0]),
            Err(StatsError::BadBuckets)
        ));
        assert!(matches!(
            bin_values(&[1.0], &[5.0, 1.0]),
            Err(StatsError::BadBuckets)
        ));
    }

    #[test]
    fn payments_convert_before_binning() {
        let one_btc = InflowTx {
            tx_index: 0,
            timestamp: 1_641_000_000,
            value: 100_000_000,
        };
        let d = value_distribution(&[one_btc], &rates(), &[10_000.0, 30_000.0]).unwrap();
        assert_eq!(d.counts, vec![0, 1, 0]);
        assert!(d
            .to_csv()
            .starts_with("lower_eur,upper_eur,count\n,10000,0\n"));
    }

    #[test]
    fn victims_are_unique_senders() {
        let pay = |id: &str, from: &[&str], to: &str| Transaction {
            tx_id: id.into(),
            timestamp: 0,
            inputs: from.iter().map(|a| TxIo::new(*a, 100)).collect(),
            outputs: vec![TxIo::new(to, 90)],
        };
        let ledger = Ledger::new(vec![
            pay("1", &["v1"], "p"),
            pay("2", &["v1"], "p"),
            pay("3", &["p"], "c"),
            pay("4", &["q"], "p"),
        ])
        .unwrap();
        let none = BTreeSet::new();
        assert_eq!(
            victim_estimate(&ledger, ["nobody"], &none),
            VictimEstimate {
                unique_senders: 0,
                incoming_transactions: 0
            }
        );
        let est = victim_estimate(&ledger, ["p"], &none);
        assert_eq!((est.unique_senders, est.incoming_transactions), (2, 3));
        // q belongs to the perpetrator's expanded set
        let est = victim_estimate(&ledger, ["p"], &["q".to_string()].into());
        assert_eq!((est.unique_senders, est.incoming_transactions), (1, 2));
    }

    #[test]
    fn series_helpers() {
        let series = InflowSeries {
            scope: Scope::Seed,
            points: vec![
                InflowPoint {
                    timestamp: 10,
                    cumulative_eur: 1.0,
                    cumulative_satoshi: 5,
                },
                InflowPoint {
                    timestamp: 20,
                    cumulative_eur: 3.0,
                    cumulative_satoshi: 15,
                },
            ],
        };
        assert_eq!(series.value_at(5), (0.0, 0));
        assert_eq!(series.value_at(10), (1.0, 5));
        assert_eq!(series.value_at(99), (3.0, 15));
        assert_eq!(
            series.to_csv(),
            "t,eur_cum,sat_cum\n10,1.00,5\n20,3.00,15\n"
        );
        let payload = series.plot_payload();
        assert_eq!(payload["scope"], "seed");
        assert_eq!(payload["points"][1]["sat_cum"], 15);
        assert_eq!(payload["points"][0]["t"], 10);
    }
}
