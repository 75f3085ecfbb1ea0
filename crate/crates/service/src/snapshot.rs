//! Case clusterings as of the last relink, and their per-zone projection.
//!
//! Linking always runs over every stored case. A zone then sees the
//! clusters containing at least one case it may read. Linked cases it may
//! not read are reported only as a count of anonymized stubs.

use std::collections::{BTreeMap, BTreeSet};

use caselink_core::graph::GraphError;
use caselink_core::AttributionTag;
use caselink_core::{
    CaseCategory, CaseClustering, CaseLinker, CaseNetwork, CaseRecord, CoinJoinPolicy, EntityGraph,
    EntityPartition, FileNumber, GraphConfig, Ledger, LinkConfig, LinkLevel, SeedAddress, Verdicts,
};
use serde::Serialize;

use crate::store::{CaseAnnotation, StoredCase};

/// On-chain data the service links against. Without a ledger only
/// address-level evidence can connect cases.
#[derive(Debug)]
pub struct ChainContext {
    pub ledger: Ledger,
    pub partition: EntityPartition,
    pub graph: EntityGraph,
}

impl ChainContext {
    pub fn new(
        ledger: Ledger,
        tags: &[AttributionTag],
        policy: &CoinJoinPolicy,
        config: GraphConfig,
    ) -> Result<Self, GraphError> {
        let verdicts = Verdicts::classify_ledger(&ledger, policy);
        let partition = EntityPartition::build(&ledger, &verdicts);
        let graph = EntityGraph::build(&ledger, &partition, &verdicts, tags, config)?;
        Ok(Self {
            ledger,
            partition,
            graph,
        })
    }

    pub fn empty() -> Self {
        Self::new(
            Ledger::new(Vec::new()).expect("empty ledger is valid"),
            &[],
            &CoinJoinPolicy::default(),
            GraphConfig::default(),
        )
        .expect("empty graph builds")
    }
}

/// Joins stored cases with their annotations.
pub fn case_records(cases: &[StoredCase], annotations: &[CaseAnnotation]) -> Vec<CaseRecord> {
    let mut seeds: BTreeMap<FileNumber, Vec<SeedAddress>> = BTreeMap::new();
    for a in annotations {
        seeds.entry(a.case_id).or_default().push(SeedAddress {
            address: a.address.clone(),
            role: a.role,
        });
    }
    cases
        .iter()
        .map(|c| CaseRecord {
            case_id: c.case_id,
            category: c.category,
            seed_addresses: seeds.remove(&c.case_id).unwrap_or_default(),
            zone_id: c.zone_id.clone(),
        })
        .collect()
}

#[derive(Debug)]
pub struct Snapshot {
    /// Write generation the snapshot was computed from.
    pub generation: u64,
    pub cases: Vec<CaseRecord>,
    pub clusterings: BTreeMap<LinkLevel, CaseClustering>,
    pub config: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterCard {
    /// Readable member cases.
    pub cases: Vec<FileNumber>,
    pub categories: BTreeSet<CaseCategory>,
    /// Full cluster size, readable members plus stubs.
    pub size: usize,
    pub anonymized_stubs: usize,
    /// Inflow into the readable members' perpetrator addresses or entities.
    pub inflow_satoshi: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClusterView {
    pub level: LinkLevel,
    pub stale: bool,
    pub clusters: Vec<ClusterCard>,
}

impl Snapshot {
    pub fn compute(
        chain: &ChainContext,
        cases: Vec<CaseRecord>,
        config: LinkConfig,
        generation: u64,
    ) -> Self {
        let linker = CaseLinker::new(&cases, &chain.partition, &chain.graph, config);
        let clusterings = LinkLevel::ALL
            .into_iter()
            .map(|l| (l, linker.link(l)))
            .collect();
        Self {
            generation,
            cases,
            clusterings,
            config,
        }
    }

    fn zone_of(&self) -> BTreeMap<FileNumber, &str> {
        self.cases
            .iter()
            .map(|c| (c.case_id, c.zone_id.as_str()))
            .collect()
    }

    fn inflow(&self, chain: &ChainContext, level: LinkLevel, members: &[FileNumber]) -> u64 {
        let members: BTreeSet<&FileNumber> = members.iter().collect();
        let addresses: BTreeSet<_> = self
            .cases
            .iter()
            .filter(|c| members.contains(&c.case_id))
            .flat_map(|c| c.perpetrator_addresses())
            .filter_map(|a| chain.partition.address_id(a))
            .collect();
        if level == LinkLevel::Address {
            chain
                .graph
                .inflow_to_addresses(&addresses, false)
                .total_satoshi
        } else {
            let entities = addresses
                .iter()
                .map(|id| chain.partition.entity_of_id(*id))
                .collect();
            chain.graph.inflow(&entities, false).total_satoshi
        }
    }

    /// Clusters as seen by a zone that may read the cases of `readable`.
    pub fn view(
        &self,
        chain: &ChainContext,
        level: LinkLevel,
        readable: &BTreeSet<String>,
        stale: bool,
    ) -> ClusterView {
        let zone_of = self.zone_of();
        let categories: BTreeMap<FileNumber, CaseCategory> =
            self.cases.iter().map(|c| (c.case_id, c.category)).collect();
        let clusters = self.clusterings[&level]
            .clusters
            .iter()
            .filter_map(|cluster| {
                let (visible, hidden): (Vec<FileNumber>, Vec<FileNumber>) = cluster
                    .cases
                    .iter()
                    .partition(|id| readable.contains(zone_of[*id]));
                if visible.is_empty() {
                    return None;
                }
                Some(ClusterCard {
                    categories: visible.iter().map(|id| categories[id]).collect(),
                    size: cluster.cases.len(),
                    anonymized_stubs: hidden.len(),
                    inflow_satoshi: self.inflow(chain, level, &visible),
                    cases: visible,
                })
            })
            .collect();
        ClusterView {
            level,
            stale,
            clusters,
        }
    }

    /// Case network restricted to readable cases.
    pub fn network(
        &self,
        chain: &ChainContext,
        level: LinkLevel,
        readable: &BTreeSet<String>,
    ) -> CaseNetwork {
        let zone_of = self.zone_of();
        let mut projected = self.clusterings[&level].clone();
        for cluster in &mut projected.clusters {
            cluster.cases.retain(|id| readable.contains(zone_of[id]));
        }
        projected.clusters.retain(|c| !c.cases.is_empty());
        CaseLinker::new(&self.cases, &chain.partition, &chain.graph, self.config)
            .network(&projected)
    }
}
