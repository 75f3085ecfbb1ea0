//! Fixtures and brute-force reference implementations shared by the
//! integration tests. Nothing here calls the clustering, graph or linking
//! code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use caselink_core::ledger::{FxRate, COINBASE};
use caselink_core::{
    AttributionTag, CaseCategory, CaseRecord, FxRates, Ledger, Role, SeedAddress, TagCategory,
    Transaction, TxIo,
};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const FIXTURE_START: i64 = 1_640_995_200;

fn tx(n: usize, inputs: &[(&str, u64)], outputs: &[(&str, u64)]) -> Transaction {
    Transaction {
        tx_id: format!("t{n:02}"),
        timestamp: FIXTURE_START + (n as i64 - 1) * 43_200,
        inputs: inputs.iter().map(|(a, v)| TxIo::new(*a, *v)).collect(),
        outputs: outputs.iter().map(|(a, v)| TxIo::new(*a, *v)).collect(),
    }
}

/// Twelve transactions: seven victims pay three perpetrator addresses that
/// are later co-spent into a collector, which forwards to an exchange.
pub fn fixture_transactions() -> Vec<Transaction> {
    vec![
        tx(1, &[("v1", 30_500)], &[("p1", 30_000)]),
        tx(2, &[("v2", 40_500)], &[("p1", 40_000)]),
        tx(3, &[("v3", 50_500)], &[("p2", 50_000)]),
        tx(4, &[("v1", 20_500)], &[("p2", 20_000)]),
        tx(5, &[("v4", 25_500)], &[("p3", 25_000)]),
        tx(6, &[("v5", 15_500)], &[("p3", 15_000)]),
        tx(7, &[("v1", 10_500)], &[("p3", 10_000)]),
        tx(8, &[("v6", 60_500)], &[("p1", 60_000)]),
        tx(9, &[("v7", 40_500)], &[("p2", 35_000), ("v7", 5_000)]),
        tx(
            10,
            &[("p1", 130_000), ("p2", 105_000), ("p3", 50_000)],
            &[("c1", 280_000), ("p2", 4_000)],
        ),
        tx(11, &[("c1", 280_000)], &[("x2", 279_000)]),
        tx(12, &[(COINBASE, 625_000_000)], &[("m1", 625_000_000)]),
    ]
}

pub fn fixture_tags() -> Vec<AttributionTag> {
    vec![
        AttributionTag {
            address: "x2".into(),
            label: "Example Exchange".into(),
            category: TagCategory::Exchange,
            is_service: true,
        },
        AttributionTag {
            address: "c1".into(),
            label: "spam wave".into(),
            category: TagCategory::SpamCampaign,
            is_service: false,
        },
    ]
}

pub fn fixture_rates() -> FxRates {
    let day = |d: u32| chrono::NaiveDate::from_ymd_opt(2022, 1, d).unwrap();
    FxRates::from_rates([
        FxRate {
            date: day(1),
            eur_per_btc: 40_000.0,
        },
        FxRate {
            date: day(3),
            eur_per_btc: 42_000.0,
        },
        FxRate {
            date: day(6),
            eur_per_btc: 38_000.5,
        },
    ])
    .unwrap()
}

pub fn case(id: &str, category: CaseCategory, seeds: &[(&str, Role)]) -> CaseRecord {
    CaseRecord {
        case_id: id.parse().unwrap(),
        category,
        seed_addresses: seeds
            .iter()
            .map(|(a, r)| SeedAddress {
                address: a.to_string(),
                role: *r,
            })
            .collect(),
        zone_id: "zone-a".into(),
    }
}

pub fn fixture_cases() -> Vec<CaseRecord> {
    vec![
        case(
            "BY1234-010123-22/6",
            CaseCategory::Sextortion,
            &[("p1", Role::Perpetrator), ("v1", Role::Victim)],
        ),
        case(
            "BY1234-010124-22/3",
            CaseCategory::Sextortion,
            &[("p3", Role::Perpetrator)],
        ),
        case(
            "BY5678-000001-23/1",
            CaseCategory::Cyberfraud,
            &[("zz_absent", Role::Perpetrator)],
        ),
    ]
}

/// Random ledger over `a0..a{n}` with occasional coinbase and
/// equal-output transactions.
pub fn random_ledger<R: Rng>(rng: &mut R, max_txs: usize, max_addresses: usize) -> Ledger {
    let n_addr = rng.random_range(2..=max_addresses);
    let addresses: Vec<String> = (0..n_addr).map(|i| format!("a{i}")).collect();
    let n_tx = rng.random_range(1..=max_txs);
    let mut txs = Vec::with_capacity(n_tx);
    for i in 0..n_tx {
        let roll: f64 = rng.random();
        let (inputs, outputs) = if roll < 0.05 {
            let to = addresses.choose(rng).unwrap().clone();
            (vec![TxIo::new(COINBASE, 5_000)], vec![TxIo::new(to, 5_000)])
        } else if roll < 0.15 {
            let k = rng.random_range(2..=4.min(n_addr));
            let ins: Vec<TxIo> = addresses
                .choose_multiple(rng, k)
                .map(|a| TxIo::new(a.clone(), 60_000))
                .collect();
            let outs = (0..k)
                .map(|_| TxIo::new(addresses.choose(rng).unwrap().clone(), 50_000))
                .collect();
            (ins, outs)
        } else {
            let n_in = rng.random_range(1..=4);
            let n_out = rng.random_range(1..=4);
            let outs: Vec<TxIo> = (0..n_out)
                .map(|_| {
                    TxIo::new(
                        addresses.choose(rng).unwrap().clone(),
                        rng.random_range(600..90_000),
                    )
                })
                .collect();
            let total: u64 = outs.iter().map(|o| o.value).sum::<u64>() + 300;
            let ins: Vec<TxIo> = (0..n_in)
                .map(|k| {
                    let share = total / n_in as u64 + u64::from(k == 0) * (total % n_in as u64);
                    TxIo::new(addresses.choose(rng).unwrap().clone(), share.max(1))
                })
                .collect();
            (ins, outs)
        };
        txs.push(Transaction {
            tx_id: format!("r{i:04}"),
            timestamp: FIXTURE_START + i as i64 * 600,
            inputs,
            outputs,
        });
    }
    Ledger::new(txs).unwrap()
}

/// Reference coinjoin rule, written out longhand.
pub fn oracle_is_coinjoin(tx: &Transaction) -> bool {
    if tx.inputs.iter().any(|i| i.address == COINBASE) {
        return false;
    }
    let distinct: BTreeSet<&str> = tx.inputs.iter().map(|i| i.address.as_str()).collect();
    if distinct.len() < 2 {
        return false;
    }
    let mut freq: BTreeMap<u64, usize> = BTreeMap::new();
    for o in tx.outputs.iter().filter(|o| o.value >= 546) {
        *freq.entry(o.value).or_default() += 1;
    }
    let best = freq.values().copied().max().unwrap_or(0);
    best >= 2 && distinct.len() >= best && tx.outputs.len() >= best
}

/// Connected components of the co-spend graph by depth-first search.
/// Returns address -> sorted member list of its component.
pub fn oracle_components(
    ledger: &Ledger,
    skip: impl Fn(&Transaction) -> bool,
) -> BTreeMap<String, Vec<String>> {
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for tx in ledger.transactions() {
        for io in tx.inputs.iter().chain(&tx.outputs) {
            if io.address != COINBASE {
                adj.entry(io.address.as_str()).or_default();
            }
        }
        if tx.is_coinbase() || skip(tx) {
            continue;
        }
        for a in &tx.inputs {
            for b in &tx.inputs {
                if a.address != b.address {
                    adj.get_mut(a.address.as_str())
                        .unwrap()
                        .insert(b.address.as_str());
                }
            }
        }
    }
    let mut out = BTreeMap::new();
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut stack = vec![start];
        let mut comp = vec![start];
        while let Some(x) = stack.pop() {
            for &y in &adj[x] {
                if seen.insert(y) {
                    stack.push(y);
                    comp.push(y);
                }
            }
        }
        comp.sort_unstable();
        let members: Vec<String> = comp.iter().map(|s| s.to_string()).collect();
        for a in &comp {
            out.insert(a.to_string(), members.clone());
        }
    }
    out
}

/// Partition as a set of sorted groups.
pub fn groups_of(components: &BTreeMap<String, Vec<String>>) -> BTreeSet<Vec<String>> {
    components.values().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Address,
    Entity,
    Collector,
}

/// Brute-force case clustering: cases are adjacent when their evidence
/// sets intersect, clusters are connected components of that relation.
pub fn oracle_case_clusters(
    ledger: &Ledger,
    cases: &[CaseRecord],
    tags: &[AttributionTag],
    service_threshold: usize,
    min_sources: usize,
    level: Level,
) -> BTreeSet<Vec<String>> {
    let comps = oracle_components(ledger, oracle_is_coinjoin);
    let rep = |a: &str| comps.get(a).map(|m| m[0].clone());
    let tagged: BTreeSet<&str> = tags
        .iter()
        .filter(|t| {
            t.is_service || matches!(t.category, TagCategory::Exchange | TagCategory::Service)
        })
        .map(|t| t.address.as_str())
        .collect();
    let is_service = |r: &str| {
        let members = &comps[r];
        members.len() > service_threshold || members.iter().any(|m| tagged.contains(m.as_str()))
    };

    // entity -> entities it pays, ignoring self payments
    let mut pays: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for tx in ledger.transactions() {
        if tx.is_coinbase() || oracle_is_coinjoin(tx) {
            continue;
        }
        let src = rep(&tx.inputs[0].address).unwrap();
        for o in &tx.outputs {
            let dst = rep(&o.address).unwrap();
            if dst != src {
                pays.entry(src.clone()).or_default().insert(dst);
            }
        }
    }

    let perp_entities = |c: &CaseRecord| -> BTreeSet<String> {
        c.perpetrator_addresses()
            .filter_map(rep)
            .filter(|r| !is_service(r))
            .collect()
    };
    let mut sources: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for c in cases {
        for e in perp_entities(c) {
            for t in pays.get(&e).into_iter().flatten() {
                if !is_service(t) {
                    sources.entry(t.clone()).or_default().insert(e.clone());
                }
            }
        }
    }

    let tokens: Vec<BTreeSet<String>> = cases
        .iter()
        .map(|c| {
            let mut t: BTreeSet<String> = c
                .perpetrator_addresses()
                .map(|a| format!("A:{a}"))
                .collect();
            if level >= Level::Entity {
                t.extend(perp_entities(c).into_iter().map(|e| format!("E:{e}")));
            }
            if level >= Level::Collector {
                for e in perp_entities(c) {
                    for target in pays.get(&e).into_iter().flatten() {
                        if sources.get(target).is_some_and(|s| s.len() >= min_sources) {
                            t.insert(format!("C:{target}"));
                        }
                    }
                }
            }
            t
        })
        .collect();

    let n = cases.len();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut comp = Vec::new();
        while let Some(i) = queue.pop_front() {
            comp.push(cases[i].case_id.to_string());
            for j in 0..n {
                if !seen[j] && !tokens[i].is_disjoint(&tokens[j]) {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        comp.sort();
        out.insert(comp);
    }
    out
}

/// Random active cases over the ledger's addresses, with a few absent seeds.
pub fn random_cases<R: Rng>(rng: &mut R, ledger: &Ledger, n: usize) -> Vec<CaseRecord> {
    let addresses: Vec<&str> = ledger.addresses().filter(|a| *a != COINBASE).collect();
    (0..n)
        .map(|i| {
            let mut seeds: Vec<SeedAddress> = (0..rng.random_range(1..=3))
                .map(|_| SeedAddress {
                    address: addresses.choose(rng).unwrap().to_string(),
                    role: if rng.random_bool(0.8) {
                        Role::Perpetrator
                    } else {
                        Role::Victim
                    },
                })
                .collect();
            seeds.sort_by(|a, b| a.address.cmp(&b.address));
            seeds.dedup_by(|a, b| a.address == b.address);
            if !seeds.iter().any(|s| s.role == Role::Perpetrator) {
                seeds[0].role = Role::Perpetrator;
            }
            if rng.random_bool(0.1) {
                seeds.push(SeedAddress {
                    address: format!("absent{i}"),
                    role: Role::Perpetrator,
                });
            }
            CaseRecord {
                case_id: format!("RN{:04}-{:06}-22/0", 1000 + i % 7, i)
                    .parse()
                    .unwrap(),
                category: if i % 3 == 0 {
                    CaseCategory::Cyberfraud
                } else {
                    CaseCategory::Sextortion
                },
                seed_addresses: seeds,
                zone_id: "zone-a".into(),
            }
        })
        .collect()
}

pub fn random_tags<R: Rng>(rng: &mut R, ledger: &Ledger) -> Vec<AttributionTag> {
    ledger
        .addresses()
        .filter(|a| *a != COINBASE && rng.random_bool(0.05))
        .map(|a| AttributionTag {
            address: a.to_string(),
            label: format!("service {a}"),
            category: TagCategory::Exchange,
            is_service: true,
        })
        .collect()
}
