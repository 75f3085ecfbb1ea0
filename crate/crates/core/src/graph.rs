//! Directed value-flow graph between entities.
//!
//! For every non-coinbase, non-CoinJoin transaction, each output's value is
//! attributed from the spending entity to the entity owning the output.
//! Fees are attributed to nobody. Change paid back to the spending entity
//! becomes a self-edge, which is stored but left out of neighbour and
//! inflow queries unless [`GraphConfig::include_self_edges`] is set.
//! CoinJoin-flagged transactions are skipped entirely.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{AddressId, EntityId, EntityPartition};
use crate::coinjoin::Verdicts;
use crate::ledger::{AttributionTag, Ledger, TagCategory};

pub const DEFAULT_SERVICE_SIZE_THRESHOLD: usize = 10_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("unknown entity {0}")]
    UnknownEntity(EntityId),
    #[error("address {0:?} of transaction {1:?} is not in the partition")]
    UnpartitionedAddress(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GraphConfig {
    /// Entities with more addresses than this are treated as services.
    pub service_size_threshold: usize,
    pub include_self_edges: bool,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            service_size_threshold: DEFAULT_SERVICE_SIZE_THRESHOLD,
            include_self_edges: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntityEdge {
    pub source: EntityId,
    pub target: EntityId,
    pub total_value: u64,
    pub tx_count: u32,
    pub first_ts: i64,
    pub last_ts: i64,
}

impl EntityEdge {
    pub fn is_self_edge(&self) -> bool {
        self.source == self.target
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntityMeta {
    pub entity: EntityId,
    pub address_count: usize,
    pub tags: BTreeSet<TagCategory>,
    pub is_service_like: bool,
}

/// One output attributed to an entity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Receipt {
    pub tx_index: usize,
    pub timestamp: i64,
    pub source: EntityId,
    pub target: EntityId,
    pub address: AddressId,
    pub value: u64,
}

impl Receipt {
    pub fn is_self(&self) -> bool {
        self.source == self.target
    }
}

/// Value received in one transaction by the queried set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InflowTx {
    pub tx_index: usize,
    pub timestamp: i64,
    pub value: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Inflow {
    pub total_satoshi: u64,
    /// Per-transaction receipts ordered by (timestamp, ledger position).
    pub transactions: Vec<InflowTx>,
}

#[derive(Debug, Clone)]
pub struct EntityGraph {
    config: GraphConfig,
    labels: Vec<String>,
    edges: Vec<EntityEdge>,
    out_edges: Vec<Vec<usize>>,
    meta: Vec<EntityMeta>,
    receipts: Vec<Receipt>,
    receipts_by_entity: Vec<Vec<usize>>,
    receipts_by_address: HashMap<AddressId, Vec<usize>>,
}

impl EntityGraph {
    pub fn build(
        ledger: &Ledger,
        partition: &EntityPartition,
        verdicts: &Verdicts,
        tags: &[AttributionTag],
        config: GraphConfig,
    ) -> Result<Self, GraphError> {
        let entity_count = partition.entity_count();
        let lookup = |address: &str, tx_id: &str| {
            partition
                .address_id(address)
                .ok_or_else(|| GraphError::UnpartitionedAddress(address.into(), tx_id.into()))
        };

        let mut edges: BTreeMap<(EntityId, EntityId), EntityEdge> = BTreeMap::new();
        let mut receipts = Vec::new();
        for (tx_index, tx) in ledger.transactions().iter().enumerate() {
            if tx.is_coinbase() || verdicts.is_coinjoin(tx_index) {
                continue;
            }
            // all inputs share one entity once co-spends are clustered
            let source = partition.entity_of_id(lookup(&tx.inputs[0].address, &tx.tx_id)?);
            let mut per_target: BTreeMap<EntityId, u64> = BTreeMap::new();
            for out in &tx.outputs {
                let address = lookup(&out.address, &tx.tx_id)?;
                let target = partition.entity_of_id(address);
                *per_target.entry(target).or_default() += out.value;
                receipts.push(Receipt {
                    tx_index,
                    timestamp: tx.timestamp,
                    source,
                    target,
                    address,
                    value: out.value,
                });
            }
            for (target, value) in per_target {
                let edge = edges.entry((source, target)).or_insert(EntityEdge {
                    source,
                    target,
                    total_value: 0,
                    tx_count: 0,
                    first_ts: tx.timestamp,
                    last_ts: tx.timestamp,
                });
                edge.total_value += value;
                edge.tx_count += 1;
                edge.first_ts = edge.first_ts.min(tx.timestamp);
                edge.last_ts = edge.last_ts.max(tx.timestamp);
            }
        }

        let edges: Vec<EntityEdge> = edges.into_values().collect();
        let mut out_edges = vec![Vec::new(); entity_count];
        for (i, edge) in edges.iter().enumerate() {
            out_edges[edge.source.0 as usize].push(i);
        }

        let mut receipts_by_entity = vec![Vec::new(); entity_count];
        let mut receipts_by_address: HashMap<AddressId, Vec<usize>> = HashMap::new();
        for (i, r) in receipts.iter().enumerate() {
            receipts_by_entity[r.target.0 as usize].push(i);
            receipts_by_address.entry(r.address).or_default().push(i);
        }

        let mut entity_tags: Vec<BTreeSet<TagCategory>> = vec![BTreeSet::new(); entity_count];
        let mut tagged_service = vec![false; entity_count];
        for tag in tags {
            if let Some(entity) = partition.entity_of(&tag.address) {
                entity_tags[entity.0 as usize].insert(tag.category);
                tagged_service[entity.0 as usize] |= tag.marks_service();
            }
        }
        let meta = partition
            .entities()
            .zip(entity_tags)
            .map(|(entity, tags)| {
                let address_count = partition.member_count(entity);
                EntityMeta {
                    entity,
                    address_count,
                    is_service_like: tagged_service[entity.0 as usize]
                        || address_count > config.service_size_threshold,
                    tags,
                }
            })
            .collect();

        Ok(Self {
            config,
            labels: partition
                .entities()
                .map(|e| partition.representative(e).to_string())
                .collect(),
            edges,
            out_edges,
            meta,
            receipts,
            receipts_by_entity,
            receipts_by_address,
        })
    }

    pub fn config(&self) -> &GraphConfig {
        &self.config
    }

    pub fn entity_count(&self) -> usize {
        self.meta.len()
    }

    /// All edges, sorted by (source, target). Includes self-edges.
    pub fn edges(&self) -> &[EntityEdge] {
        &self.edges
    }

    pub fn label(&self, entity: EntityId) -> &str {
        &self.labels[entity.0 as usize]
    }

    pub fn meta(&self, entity: EntityId) -> Result<&EntityMeta, GraphError> {
        self.meta
            .get(entity.0 as usize)
            .ok_or(GraphError::UnknownEntity(entity))
    }

    pub fn is_service_like(&self, entity: EntityId) -> bool {
        self.meta
            .get(entity.0 as usize)
            .is_some_and(|m| m.is_service_like)
    }

    pub fn receipts(&self) -> &[Receipt] {
        &self.receipts
    }

    fn counts(&self, receipt: &Receipt) -> bool {
        self.config.include_self_edges || !receipt.is_self()
    }

    /// Entities receiving value directly from `entity`.
    pub fn out_neighbors(
        &self,
        entity: EntityId,
    ) -> Result<Vec<(EntityId, &EntityEdge)>, GraphError> {
        let out = self
            .out_edges
            .get(entity.0 as usize)
            .ok_or(GraphError::UnknownEntity(entity))?;
        Ok(out
            .iter()
            .map(|&i| &self.edges[i])
            .filter(|e| self.config.include_self_edges || !e.is_self_edge())
            .map(|e| (e.target, e))
            .collect())
    }

    /// Value paid into `entities`. With `exclude_service`, receipts of
    /// service-like entities are dropped.
    pub fn inflow(&self, entities: &BTreeSet<EntityId>, exclude_service: bool) -> Inflow {
        let picked = entities
            .iter()
            .filter(|e| !(exclude_service && self.is_service_like(**e)))
            .filter_map(|e| self.receipts_by_entity.get(e.0 as usize))
            .flatten()
            .copied();
        self.collect_inflow(picked)
    }

    /// Value paid into specific addresses, with the same self-edge and
    /// service rules as [`EntityGraph::inflow`].
    pub fn inflow_to_addresses(
        &self,
        addresses: &BTreeSet<AddressId>,
        exclude_service: bool,
    ) -> Inflow {
        let picked = addresses
            .iter()
            .filter_map(|a| self.receipts_by_address.get(a))
            .flatten()
            .copied()
            .filter(|&i| !(exclude_service && self.is_service_like(self.receipts[i].target)));
        self.collect_inflow(picked)
    }

    fn collect_inflow(&self, receipt_indices: impl Iterator<Item = usize>) -> Inflow {
        let mut per_tx: BTreeMap<(i64, usize), u64> = BTreeMap::new();
        for i in receipt_indices {
            let r = &self.receipts[i];
            if self.counts(r) {
                *per_tx.entry((r.timestamp, r.tx_index)).or_default() += r.value;
            }
        }
        let transactions: Vec<InflowTx> = per_tx
            .into_iter()
            .map(|((timestamp, tx_index), value)| InflowTx {
                tx_index,
                timestamp,
                value,
            })
            .collect();
        Inflow {
            total_satoshi: transactions.iter().map(|t| t.value).sum(),
            transactions,
        }
    }

    /// Sum of all edge values, self-edges included.
    pub fn total_edge_value(&self) -> u64 {
        self.edges.iter().map(|e| e.total_value).sum()
    }

    /// CSV `source,target,total_value,tx_count,first_ts,last_ts` using
    /// representative addresses.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("source,target,total_value,tx_count,first_ts,last_ts\n");
        for e in &self.edges {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.label(e.source),
                self.label(e.target),
                e.total_value,
                e.tx_count,
                e.first_ts,
                e.last_ts
            ));
        }
        out
    }
}
