//! Linking cases into case clusters.
//!
//! Three heuristics of increasing reach are available:
//!
//! * **address**: cases sharing a perpetrator seed address,
//! * **entity**: additionally, cases whose perpetrator addresses fall into
//!   the same non-service entity,
//! * **collector**: additionally, cases whose non-service perpetrator
//!   entities forward funds one hop to the same non-service entity.
//!
//! Each level includes the links of the previous one, so the clusterings
//! form a coarsening chain. Victim-role addresses never contribute evidence.

mod network;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::cluster::{AddressId, EntityId, EntityPartition, UnionFind};
use crate::graph::EntityGraph;
use crate::ledger::{CaseCategory, CaseRecord, FileNumber};

pub use network::{CaseNetwork, EdgeKind, NetworkEdge, NetworkFormat, NetworkNode, NodeKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LinkError {
    #[error("unknown link level {0:?}, expected address, entity or collector")]
    UnknownLevel(String),
    #[error("unknown network format {0:?}, expected dot or json")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkLevel {
    Address,
    Entity,
    Collector,
}

impl LinkLevel {
    pub const ALL: [LinkLevel; 3] = [Self::Address, Self::Entity, Self::Collector];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Address => "address",
            Self::Entity => "entity",
            Self::Collector => "collector",
        }
    }
}

impl fmt::Display for LinkLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LinkLevel {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "address" => Ok(Self::Address),
            "entity" => Ok(Self::Entity),
            "collector" => Ok(Self::Collector),
            other => Err(LinkError::UnknownLevel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LinkConfig {
    /// Distinct perpetrator entities that must pay into a collector before
    /// it may link cases.
    pub min_collector_sources: usize,
}

impl Default for LinkConfig {
    fn default() -> Self {
        Self {
            min_collector_sources: 1,
        }
    }
}

/// A piece of shared evidence. Entities are named by representative address.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum Evidence {
    Address(String),
    Entity(String),
    Collector(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseCluster {
    /// Member cases in ascending order.
    pub cases: Vec<FileNumber>,
    pub categories: BTreeSet<CaseCategory>,
    /// Evidence held by at least two member cases.
    pub shared_evidence: BTreeSet<Evidence>,
    pub inflow_satoshi: u64,
    /// Some perpetrator address of a member lies in a service-like entity.
    pub contains_service_evidence: bool,
}

impl CaseCluster {
    pub fn size(&self) -> usize {
        self.cases.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CaseClustering {
    pub level: LinkLevel,
    /// Sorted by size descending, then by smallest case id.
    pub clusters: Vec<CaseCluster>,
}

/// Fraction of cases that belong to a cluster of size two or more.
pub fn linkage_rate(total_cases: usize, singletons: usize) -> f64 {
    if total_cases == 0 {
        return 0.0;
    }
    (total_cases - singletons) as f64 / total_cases as f64
}

impl CaseClustering {
    pub fn case_count(&self) -> usize {
        self.clusters.iter().map(CaseCluster::size).sum()
    }

    pub fn singleton_count(&self) -> usize {
        self.clusters.iter().filter(|c| c.size() == 1).count()
    }

    pub fn linkage_rate(&self) -> f64 {
        linkage_rate(self.case_count(), self.singleton_count())
    }

    /// Cluster index of every case.
    pub fn cluster_index(&self) -> HashMap<FileNumber, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.cases.iter().map(move |id| (*id, i)))
            .collect()
    }

    pub fn cluster_of(&self, case: &FileNumber) -> Option<&CaseCluster> {
        self.clusters
            .iter()
            .find(|c| c.cases.binary_search(case).is_ok())
    }

    /// True when every cluster of `self` lies wholly inside one cluster of
    /// `coarser` and both cover the same cases.
    pub fn refines(&self, coarser: &CaseClustering) -> bool {
        let index = coarser.cluster_index();
        self.case_count() == coarser.case_count()
            && self.clusters.iter().all(|c| {
                let mut targets = c.cases.iter().map(|id| index.get(id));
                match targets.next() {
                    Some(Some(first)) => targets.all(|t| t == Some(first)),
                    _ => false,
                }
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClusterPoint {
    pub inflow_satoshi: u64,
    pub contains_service_evidence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BreakdownRow {
    pub cluster_size: usize,
    pub count: usize,
    pub total_inflow_satoshi: u64,
    pub any_service: bool,
    pub clusters: Vec<ClusterPoint>,
}

/// Histogram of cluster sizes, smallest size first, with the inflow and
/// service flag of every cluster in each bar.
pub fn cluster_breakdown(clustering: &CaseClustering) -> Vec<BreakdownRow> {
    let mut by_size: BTreeMap<usize, Vec<ClusterPoint>> = BTreeMap::new();
    for c in &clustering.clusters {
        by_size.entry(c.size()).or_default().push(ClusterPoint {
            inflow_satoshi: c.inflow_satoshi,
            contains_service_evidence: c.contains_service_evidence,
        });
    }
    by_size
        .into_iter()
        .map(|(cluster_size, clusters)| BreakdownRow {
            cluster_size,
            count: clusters.len(),
            total_inflow_satoshi: clusters.iter().map(|c| c.inflow_satoshi).sum(),
            any_service: clusters.iter().any(|c| c.contains_service_evidence),
            clusters,
        })
        .collect()
}

/// Precomputed evidence of one case.
#[derive(Debug, Clone)]
struct CaseEvidence<'a> {
    record: &'a CaseRecord,
    addresses: BTreeSet<&'a str>,
    address_ids: BTreeSet<AddressId>,
    /// Non-service entities of the perpetrator addresses.
    entities: BTreeSet<EntityId>,
    /// Every entity of the perpetrator addresses, services included.
    all_entities: BTreeSet<EntityId>,
    /// (perpetrator entity, collector) pairs.
    collector_flows: BTreeSet<(EntityId, EntityId)>,
    touches_service: bool,
}

impl CaseEvidence<'_> {
    fn collectors(&self) -> BTreeSet<EntityId> {
        self.collector_flows.iter().map(|(_, c)| *c).collect()
    }
}

/// Links a fixed set of (active) cases against a partition and graph.
pub struct CaseLinker<'a> {
    partition: &'a EntityPartition,
    graph: &'a EntityGraph,
    config: LinkConfig,
    cases: Vec<CaseEvidence<'a>>,
    by_id: HashMap<FileNumber, usize>,
}

impl<'a> CaseLinker<'a> {
    pub fn new(
        cases: &'a [CaseRecord],
        partition: &'a EntityPartition,
        graph: &'a EntityGraph,
        config: LinkConfig,
    ) -> Self {
        let mut evidence: Vec<CaseEvidence<'a>> = cases
            .iter()
            .map(|record| {
                let addresses: BTreeSet<&str> = record.perpetrator_addresses().collect();
                let address_ids: BTreeSet<AddressId> = addresses
                    .iter()
                    .filter_map(|a| partition.address_id(a))
                    .collect();
                let all_entities: BTreeSet<EntityId> = address_ids
                    .iter()
                    .map(|id| partition.entity_of_id(*id))
                    .collect();
                let entities: BTreeSet<EntityId> = all_entities
                    .iter()
                    .copied()
                    .filter(|e| !graph.is_service_like(*e))
                    .collect();
                CaseEvidence {
                    record,
                    touches_service: entities.len() != all_entities.len(),
                    addresses,
                    address_ids,
                    entities,
                    all_entities,
                    collector_flows: BTreeSet::new(),
                }
            })
            .collect();

        // distinct perpetrator entities paying into each candidate collector
        let mut sources: BTreeMap<EntityId, BTreeSet<EntityId>> = BTreeMap::new();
        for case in &evidence {
            for &entity in &case.entities {
                for (target, _) in graph.out_neighbors(entity).unwrap_or_default() {
                    if !graph.is_service_like(target) {
                        sources.entry(target).or_default().insert(entity);
                    }
                }
            }
        }
        for case in &mut evidence {
            for &entity in &case.entities {
                for (target, _) in graph.out_neighbors(entity).unwrap_or_default() {
                    let qualifies = sources
                        .get(&target)
                        .is_some_and(|s| s.len() >= config.min_collector_sources);
                    if qualifies {
                        case.collector_flows.insert((entity, target));
                    }
                }
            }
        }

        let by_id = evidence
            .iter()
            .enumerate()
            .map(|(i, c)| (c.record.case_id, i))
            .collect();
        Self {
            partition,
            graph,
            config,
            cases: evidence,
            by_id,
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    fn label(&self, entity: EntityId) -> String {
        self.partition.representative(entity).to_string()
    }

    /// Evidence of one case at `level`; each level includes the ones below.
    fn tokens(&self, case: &CaseEvidence<'_>, level: LinkLevel) -> BTreeSet<Evidence> {
        let mut tokens: BTreeSet<Evidence> = case
            .addresses
            .iter()
            .map(|a| Evidence::Address(a.to_string()))
            .collect();
        if level >= LinkLevel::Entity {
            tokens.extend(
                case.entities
                    .iter()
                    .map(|e| Evidence::Entity(self.label(*e))),
            );
        }
        if level >= LinkLevel::Collector {
            tokens.extend(
                case.collectors()
                    .into_iter()
                    .map(|e| Evidence::Collector(self.label(e))),
            );
        }
        tokens
    }

    pub fn link(&self, level: LinkLevel) -> CaseClustering {
        let tokens: Vec<BTreeSet<Evidence>> =
            self.cases.iter().map(|c| self.tokens(c, level)).collect();

        let mut uf = UnionFind::new(self.cases.len());
        let mut first_holder: HashMap<&Evidence, u32> = HashMap::new();
        for (i, set) in tokens.iter().enumerate() {
            for token in set {
                let holder = *first_holder.entry(token).or_insert(i as u32);
                uf.union(holder, i as u32);
            }
        }

        let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for i in 0..self.cases.len() {
            groups.entry(uf.find(i as u32)).or_default().push(i);
        }

        let mut clusters: Vec<CaseCluster> = groups
            .into_values()
            .map(|members| self.make_cluster(level, &members, &tokens))
            .collect();
        clusters.sort_by(|a, b| {
            b.size()
                .cmp(&a.size())
                .then_with(|| a.cases[0].cmp(&b.cases[0]))
        });
        CaseClustering { level, clusters }
    }

    fn make_cluster(
        &self,
        level: LinkLevel,
        members: &[usize],
        tokens: &[BTreeSet<Evidence>],
    ) -> CaseCluster {
        let mut counts: BTreeMap<&Evidence, usize> = BTreeMap::new();
        for &i in members {
            for token in &tokens[i] {
                *counts.entry(token).or_default() += 1;
            }
        }
        let shared_evidence = counts
            .into_iter()
            .filter(|(_, n)| *n >= 2)
            .map(|(t, _)| t.clone())
            .collect();

        let inflow_satoshi = match level {
            LinkLevel::Address => {
                let ids: BTreeSet<AddressId> = members
                    .iter()
                    .flat_map(|&i| self.cases[i].address_ids.iter().copied())
                    .collect();
                self.graph.inflow_to_addresses(&ids, false).total_satoshi
            }
            LinkLevel::Entity | LinkLevel::Collector => {
                let entities: BTreeSet<EntityId> = members
                    .iter()
                    .flat_map(|&i| self.cases[i].all_entities.iter().copied())
                    .collect();
                self.graph.inflow(&entities, false).total_satoshi
            }
        };

        let mut cases: Vec<FileNumber> = members
            .iter()
            .map(|&i| self.cases[i].record.case_id)
            .collect();
        cases.sort();
        CaseCluster {
            cases,
            categories: members
                .iter()
                .map(|&i| self.cases[i].record.category)
                .collect(),
            shared_evidence,
            inflow_satoshi,
            contains_service_evidence: members.iter().any(|&i| self.cases[i].touches_service),
        }
    }

    pub fn link_by_address(&self) -> CaseClustering {
        self.link(LinkLevel::Address)
    }

    pub fn link_by_entity(&self) -> CaseClustering {
        self.link(LinkLevel::Entity)
    }

    pub fn link_by_collector(&self) -> CaseClustering {
        self.link(LinkLevel::Collector)
    }

    /// Collector entities that link at least one case, by representative.
    pub fn collectors(&self) -> BTreeSet<String> {
        self.cases
            .iter()
            .flat_map(|c| c.collectors())
            .map(|e| self.label(e))
            .collect()
    }

    /// Case network for the cases of `clustering` at its level.
    ///
    /// Address level shows cases and their perpetrator addresses. Entity
    /// level adds the non-service entity of each address. Collector level
    /// adds collector entities with a flow edge from each paying entity.
    pub fn network(&self, clustering: &CaseClustering) -> CaseNetwork {
        let level = clustering.level;
        let mut members: Vec<&CaseEvidence<'_>> = clustering
            .clusters
            .iter()
            .flat_map(|c| &c.cases)
            .filter_map(|id| self.by_id.get(id).map(|&i| &self.cases[i]))
            .collect();
        members.sort_by_key(|c| c.record.case_id);

        let mut addresses: BTreeSet<&str> = BTreeSet::new();
        let mut annotations: BTreeSet<(String, String)> = BTreeSet::new();
        let mut memberships: BTreeSet<(String, String)> = BTreeSet::new();
        let mut entities: BTreeSet<String> = BTreeSet::new();
        let mut collectors: BTreeSet<String> = BTreeSet::new();
        let mut flows: BTreeSet<(String, String)> = BTreeSet::new();

        for case in &members {
            let case_id = case.record.case_id.to_string();
            for address in &case.addresses {
                addresses.insert(address);
                annotations.insert((case_id.clone(), address.to_string()));
                if level >= LinkLevel::Entity {
                    if let Some(entity) = self.partition.entity_of(address) {
                        if case.entities.contains(&entity) {
                            let label = self.label(entity);
                            entities.insert(label.clone());
                            memberships.insert((address.to_string(), label));
                        }
                    }
                }
            }
            if level >= LinkLevel::Collector {
                for (source, collector) in &case.collector_flows {
                    let target = self.label(*collector);
                    collectors.insert(target.clone());
                    flows.insert((self.label(*source), target));
                }
            }
        }

        let node = |kind: NodeKind, label: &str| NetworkNode {
            id: kind.node_id(label),
            kind,
            label: label.to_string(),
        };
        let edge = |kind: EdgeKind, src: (NodeKind, &str), dst: (NodeKind, &str)| NetworkEdge {
            src: src.0.node_id(src.1),
            dst: dst.0.node_id(dst.1),
            kind,
        };

        let mut net = CaseNetwork::default();
        net.nodes.extend(
            members
                .iter()
                .map(|c| node(NodeKind::Case, &c.record.case_id.to_string())),
        );
        net.nodes
            .extend(addresses.iter().map(|a| node(NodeKind::Address, a)));
        net.nodes
            .extend(entities.iter().map(|e| node(NodeKind::Entity, e)));
        net.nodes
            .extend(collectors.iter().map(|e| node(NodeKind::Collector, e)));

        net.edges.extend(annotations.iter().map(|(c, a)| {
            edge(
                EdgeKind::Annotation,
                (NodeKind::Case, c),
                (NodeKind::Address, a),
            )
        }));
        net.edges.extend(memberships.iter().map(|(a, e)| {
            edge(
                EdgeKind::Membership,
                (NodeKind::Address, a),
                (NodeKind::Entity, e),
            )
        }));
        net.edges.extend(flows.iter().map(|(e, c)| {
            edge(
                EdgeKind::Flow,
                (NodeKind::Entity, e),
                (NodeKind::Collector, c),
            )
        }));
        net
    }

    pub fn export_network(&self, clustering: &CaseClustering, format: NetworkFormat) -> Vec<u8> {
        self.network(clustering).export(format)
    }
}
