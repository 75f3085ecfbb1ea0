//! Address clustering with the multi-input heuristic.
//!
//! All input addresses of a non-CoinJoin transaction are assumed to be
//! controlled by one actor. The transitive closure of that relation is an
//! [`EntityPartition`]. Coinbase and single-input transactions contribute
//! nothing; change-address heuristics are deliberately not implemented.

mod union_find;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coinjoin::Verdicts;
use crate::ledger::{Ledger, COINBASE};

pub use union_find::UnionFind;

/// Dense id of an address. Ids follow the lexicographic order of addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AddressId(pub u32);

/// Dense id of an entity. Ids follow the lexicographic order of the
/// entities' representative addresses, so they are stable across runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "E{}", self.0)
    }
}

/// Partition of every ledger address into entities.
///
/// The representative of an entity is its lexicographically smallest
/// member address.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPartition {
    addresses: Vec<String>,
    index: HashMap<String, AddressId>,
    entity_of: Vec<EntityId>,
    members: Vec<Vec<AddressId>>,
}

impl EntityPartition {
    /// Clusters the ledger, skipping transactions flagged in `verdicts`.
    ///
    /// Co-spend sets are extracted in parallel; unions run on one thread.
    /// The result does not depend on transaction order or thread count.
    pub fn build(ledger: &Ledger, verdicts: &Verdicts) -> Self {
        assert_eq!(
            ledger.len(),
            verdicts.len(),
            "verdicts must cover every transaction"
        );
        let mut addresses: Vec<&str> = ledger.addresses().filter(|a| *a != COINBASE).collect();
        addresses.par_sort_unstable();
        let index: HashMap<&str, u32> = addresses
            .iter()
            .enumerate()
            .map(|(i, a)| (*a, i as u32))
            .collect();

        let cospends: Vec<Vec<u32>> = ledger
            .transactions()
            .par_iter()
            .enumerate()
            .filter(|(i, tx)| !tx.is_coinbase() && !verdicts.is_coinjoin(*i))
            .filter_map(|(_, tx)| {
                let ids: Vec<u32> = tx.distinct_inputs().into_iter().map(|a| index[a]).collect();
                (ids.len() >= 2).then_some(ids)
            })
            .collect();

        let mut uf = UnionFind::new(addresses.len());
        for ids in &cospends {
            for pair in ids.windows(2) {
                uf.union(pair[0], pair[1]);
            }
        }
        Self::from_union_find(addresses.into_iter().map(str::to_string).collect(), &mut uf)
    }

    /// `addresses` must be sorted and `uf` indexed by position in it.
    fn from_union_find(addresses: Vec<String>, uf: &mut UnionFind) -> Self {
        let mut root_to_entity: HashMap<u32, EntityId> = HashMap::new();
        let mut entity_of = Vec::with_capacity(addresses.len());
        let mut members: Vec<Vec<AddressId>> = Vec::new();
        // walking addresses in sorted order makes the first member seen the
        // smallest one, and numbers entities by representative
        for id in 0..addresses.len() as u32 {
            let root = uf.find(id);
            let entity = *root_to_entity.entry(root).or_insert_with(|| {
                members.push(Vec::new());
                EntityId(members.len() as u32 - 1)
            });
            members[entity.0 as usize].push(AddressId(id));
            entity_of.push(entity);
        }
        let index = addresses
            .iter()
            .enumerate()
            .map(|(i, a)| (a.clone(), AddressId(i as u32)))
            .collect();
        Self {
            addresses,
            index,
            entity_of,
            members,
        }
    }

    pub fn address_count(&self) -> usize {
        self.addresses.len()
    }

    pub fn entity_count(&self) -> usize {
        self.members.len()
    }

    pub fn address_id(&self, address: &str) -> Option<AddressId> {
        self.index.get(address).copied()
    }

    pub fn address(&self, id: AddressId) -> &str {
        &self.addresses[id.0 as usize]
    }

    pub fn entity_of(&self, address: &str) -> Option<EntityId> {
        self.address_id(address).map(|id| self.entity_of_id(id))
    }

    pub fn entity_of_id(&self, id: AddressId) -> EntityId {
        self.entity_of[id.0 as usize]
    }

    pub fn members(&self, entity: EntityId) -> &[AddressId] {
        &self.members[entity.0 as usize]
    }

    pub fn member_count(&self, entity: EntityId) -> usize {
        self.members[entity.0 as usize].len()
    }

    pub fn representative(&self, entity: EntityId) -> &str {
        self.address(self.members[entity.0 as usize][0])
    }

    pub fn contains_entity(&self, entity: EntityId) -> bool {
        (entity.0 as usize) < self.members.len()
    }

    pub fn entities(&self) -> impl Iterator<Item = EntityId> {
        (0..self.members.len() as u32).map(EntityId)
    }

    pub fn same_entity(&self, a: &str, b: &str) -> bool {
        match (self.entity_of(a), self.entity_of(b)) {
            (Some(x), Some(y)) => x == y,
            _ => a == b,
        }
    }

    /// All members of the entities hit by `seeds`. Seeds unknown to the
    /// ledger stay in the result as their own singletons.
    pub fn expand<'a, I>(&self, seeds: I) -> ExpansionResult
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut result = ExpansionResult::default();
        for seed in seeds {
            result.seed_addresses.insert(seed.to_string());
            match self.entity_of(seed) {
                Some(entity) => {
                    if result.entities.insert(entity) {
                        result.expanded_addresses.extend(
                            self.members(entity)
                                .iter()
                                .map(|id| self.address(*id).to_string()),
                        );
                    }
                }
                None => {
                    result.unknown_seeds.insert(seed.to_string());
                    result.expanded_addresses.insert(seed.to_string());
                }
            }
        }
        result
    }

    /// CSV `address,entity_representative`, sorted by address.
    pub fn dump_csv(&self) -> String {
        let mut out = String::from("address,entity_representative\n");
        for (id, address) in self.addresses.iter().enumerate() {
            let entity = self.entity_of[id];
            out.push_str(address);
            out.push(',');
            out.push_str(self.representative(entity));
            out.push('\n');
        }
        out
    }

    /// Entities as sorted address sets, ordered by representative.
    pub fn groups(&self) -> Vec<BTreeSet<&str>> {
        self.members
            .iter()
            .map(|m| m.iter().map(|id| self.address(*id)).collect())
            .collect()
    }

    /// True when every entity of `self` lies inside one entity of `coarser`.
    pub fn refines(&self, coarser: &EntityPartition) -> bool {
        self.members.iter().all(|members| {
            let targets: HashSet<Option<EntityId>> = members
                .iter()
                .map(|id| coarser.entity_of(self.address(*id)))
                .collect();
            targets.len() == 1 && !targets.contains(&None)
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExpansionResult {
    pub seed_addresses: BTreeSet<String>,
    pub expanded_addresses: BTreeSet<String>,
    pub entities: BTreeSet<EntityId>,
    /// Seeds that never appear in the ledger.
    pub unknown_seeds: BTreeSet<String>,
}
