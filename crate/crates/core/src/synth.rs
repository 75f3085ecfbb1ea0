//! Synthetic scenarios with known ground truth.
//!
//! Topology per campaign: victims pay perpetrator receiving addresses, the
//! campaign wallet sweeps those addresses into a collector shared by up to
//! `collector_fanin` campaigns. Sweeps are batched: each further receiving
//! address joins the current sweep with probability `wallet_cospend_prob`,
//! otherwise a new sweep starts. Every sweep but the last returns change
//! to its first input address and the next sweep spends that change, so
//! one campaign's addresses always form one entity under the multi-input
//! heuristic.
//!
//! With `custodial_reuse_prob`, a case's perpetrator address is a deposit
//! address at an exchange instead; the exchange later consolidates all its
//! deposits in one transaction. With `coinjoin_noise_prob`, equal-output
//! mixes that co-spend perpetrator addresses of different campaigns are
//! appended after all other activity. Noise is drawn from a separate RNG
//! stream, so the rest of the scenario is identical with or without it.
//!
//! The RNG is ChaCha20 (`rand_chacha`), seeded with `seed_from_u64`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::Datelike;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::ledger::{
    utc_day, write_cases, write_rates, write_tags, write_transactions, AttributionTag,
    CaseCategory, CaseRecord, FileNumber, FxRate, FxRates, Ledger, Role, SeedAddress, TagCategory,
    Transaction, TxFormat, TxIo, SATOSHI_PER_BTC,
};

pub const GENERATOR: &str = "ChaCha20Rng (rand_chacha 0.9, seed_from_u64)";

/// 2021-01-01T00:00:00Z
const START_TS: i64 = 1_609_459_200;
const FEE: u64 = 500;
const MIX_DENOMINATION: u64 = 100_000;
const NOISE_STREAM: u64 = 1;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{field} must be within [0, 1], found {value}")]
    Probability { field: &'static str, value: f64 },
    #[error("{0}")]
    Invalid(String),
    #[error("spec file: {0}")]
    Kv(#[from] KvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaymentModel {
    /// Log-normal around a few hundred EUR, capped below 1,000 EUR.
    SextortionLike,
    /// Log-normal with mode near 2,000 EUR and about 1% above 100,000 EUR.
    FraudLike,
}

impl PaymentModel {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SextortionLike => "sextortion_like",
            Self::FraudLike => "fraud_like",
        }
    }

    pub fn category(&self) -> CaseCategory {
        match self {
            Self::SextortionLike => CaseCategory::Sextortion,
            Self::FraudLike => CaseCategory::Cyberfraud,
        }
    }

    /// Prefix for every generated identifier, keeping scenarios of
    /// different models disjoint.
    fn prefix(&self) -> &'static str {
        match self {
            Self::SextortionLike => "sx",
            Self::FraudLike => "cf",
        }
    }

    fn county(&self) -> &'static str {
        match self {
            Self::SextortionLike => "SX",
            Self::FraudLike => "CF",
        }
    }

    /// Draws one payment in EUR.
    pub fn sample_eur<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::SextortionLike => {
                let d = LogNormal::new(350f64.ln(), 0.6).expect("valid log-normal");
                let eur: f64 = d.sample(rng);
                eur.clamp(20.0, 999.0)
            }
            Self::FraudLike => {
                // mode = exp(mu - sigma^2) = 2000 and P(X > 100k) = 1%
                let d = LogNormal::new(8.8815, 1.1316).expect("valid log-normal");
                let eur: f64 = d.sample(rng);
                eur.max(50.0)
            }
        }
    }
}

impl FromStr for PaymentModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sextortion_like" => Ok(Self::SextortionLike),
            "fraud_like" => Ok(Self::FraudLike),
            other => Err(format!("unknown payment model {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub seed: u64,
    pub n_campaigns: usize,
    pub cases_per_campaign: usize,
    pub address_reuse_prob: f64,
    pub wallet_cospend_prob: f64,
    pub collector_fanin: usize,
    pub payment_value_model: PaymentModel,
    pub custodial_reuse_prob: f64,
    pub coinjoin_noise_prob: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_campaigns: 5,
            cases_per_campaign: 10,
            address_reuse_prob: 0.5,
            wallet_cospend_prob: 0.5,
            collector_fanin: 1,
            payment_value_model: PaymentModel::SextortionLike,
            custodial_reuse_prob: 0.0,
            coinjoin_noise_prob: 0.0,
        }
    }
}

const SPEC_KEYS: [&str; 9] = [
    "seed",
    "n_campaigns",
    "cases_per_campaign",
    "address_reuse_prob",
    "wallet_cospend_prob",
    "collector_fanin",
    "payment_value_model",
    "custodial_reuse_prob",
    "coinjoin_noise_prob",
];

impl ScenarioSpec {
    /// Reads a flat `key=value` spec; `seed` is required, other keys default.
    pub fn from_kv_text(text: &str) -> Result<Self, SynthError> {
        let kv = KvMap::parse(text)?;
        kv.reject_unknown(&SPEC_KEYS)?;
        let d = Self::default();
        let spec = Self {
            seed: kv
                .parsed("seed")?
                .ok_or_else(|| SynthError::Invalid("spec requires a seed".into()))?,
            n_campaigns: kv.parsed("n_campaigns")?.unwrap_or(d.n_campaigns),
            cases_per_campaign: kv
                .parsed("cases_per_campaign")?
                .unwrap_or(d.cases_per_campaign),
            address_reuse_prob: kv
                .parsed("address_reuse_prob")?
                .unwrap_or(d.address_reuse_prob),
            wallet_cospend_prob: kv
                .parsed("wallet_cospend_prob")?
                .unwrap_or(d.wallet_cospend_prob),
            collector_fanin: kv.parsed("collector_fanin")?.unwrap_or(d.collector_fanin),
            payment_value_model: kv
                .parsed("payment_value_model")?
                .unwrap_or(d.payment_value_model),
            custodial_reuse_prob: kv
                .parsed("custodial_reuse_prob")?
                .unwrap_or(d.custodial_reuse_prob),
            coinjoin_noise_prob: kv
                .parsed("coinjoin_noise_prob")?
                .unwrap_or(d.coinjoin_noise_prob),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv_text(&self) -> String {
        let mut kv = KvMap::default();
        kv.insert("seed", self.seed.to_string());
        kv.insert("n_campaigns", self.n_campaigns.to_string());
        kv.insert("cases_per_campaign", self.cases_per_campaign.to_string());
        kv.insert("address_reuse_prob", self.address_reuse_prob.to_string());
        kv.insert("wallet_cospend_prob", self.wallet_cospend_prob.to_string());
        kv.insert("collector_fanin", self.collector_fanin.to_string());
        kv.insert("payment_value_model", self.payment_value_model.as_str());
        kv.insert(
            "custodial_reuse_prob",
            self.custodial_reuse_prob.to_string(),
        );
        kv.insert("coinjoin_noise_prob", self.coinjoin_noise_prob.to_string());
        kv.render()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (field, value) in [
            ("address_reuse_prob", self.address_reuse_prob),
            ("wallet_cospend_prob", self.wallet_cospend_prob),
            ("custodial_reuse_prob", self.custodial_reuse_prob),
            ("coinjoin_noise_prob", self.coinjoin_noise_prob),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Probability { field, value });
            }
        }
        if self.collector_fanin == 0 {
            return Err(SynthError::Invalid(
                "collector_fanin must be at least 1".into(),
            ));
        }
        self.layout().validate()
    }

    /// Campaign-by-campaign plan equivalent to this spec. Campaign `i`
    /// drains into collector `i / collector_fanin`.
    pub fn layout(&self) -> ScenarioLayout {
        let fanin = self.collector_fanin.max(1);
        ScenarioLayout {
            seed: self.seed,
            payment_value_model: self.payment_value_model,
            custodial_reuse_prob: self.custodial_reuse_prob,
            coinjoin_noise_prob: self.coinjoin_noise_prob,
            campaigns: (0..self.n_campaigns)
                .map(|i| CampaignPlan {
                    cases: self.cases_per_campaign,
                    address_reuse_prob: self.address_reuse_prob,
                    wallet_cospend_prob: self.wallet_cospend_prob,
                    collector: i / fanin,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPlan {
    pub cases: usize,
    pub address_reuse_prob: f64,
    pub wallet_cospend_prob: f64,
    /// Index of the collector this campaign drains into.
    pub collector: usize,
}

/// Explicit per-campaign layout, for scenarios a flat spec cannot express.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioLayout {
    pub seed: u64,
    pub payment_value_model: PaymentModel,
    pub custodial_reuse_prob: f64,
    pub coinjoin_noise_prob: f64,
    pub campaigns: Vec<CampaignPlan>,
}

impl ScenarioLayout {
    pub fn validate(&self) -> Result<(), SynthError> {
        let mut probs = vec![
            ("custodial_reuse_prob", self.custodial_reuse_prob),
            ("coinjoin_noise_prob", self.coinjoin_noise_prob),
        ];
        for c in &self.campaigns {
            probs.push(("address_reuse_prob", c.address_reuse_prob));
            probs.push(("wallet_cospend_prob", c.wallet_cospend_prob));
        }
        for (field, value) in probs {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Probability { field, value });
            }
        }
        let total: usize = self.campaigns.iter().map(|c| c.cases).sum();
        if total > 999_999 {
            return Err(SynthError::Invalid(format!(
                "at most 999999 cases fit the file number format, requested {total}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthCollector {
    pub address: String,
    /// Campaigns whose wallets actually paid into the collector.
    pub campaigns: Vec<usize>,
}

impl TruthCollector {
    pub fn fanin(&self) -> usize {
        self.campaigns.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// address -> owning wallet (`campaign-N`, `victim-N`, `collector-N`, `exchange`)
    pub address_wallet: BTreeMap<String, String>,
    pub case_campaign: BTreeMap<FileNumber, usize>,
    pub collectors: Vec<TruthCollector>,
}

impl GroundTruth {
    /// Cases grouped by campaign, each group sorted; groups ordered by campaign.
    pub fn campaign_partition(&self) -> Vec<Vec<FileNumber>> {
        let mut groups: BTreeMap<usize, Vec<FileNumber>> = BTreeMap::new();
        for (case, campaign) in &self.case_campaign {
            groups.entry(*campaign).or_default().push(*case);
        }
        groups.into_values().collect()
    }

    /// Addresses owned by one wallet.
    pub fn wallet_members(&self, wallet: &str) -> Vec<&str> {
        self.address_wallet
            .iter()
            .filter(|(_, w)| w.as_str() == wallet)
            .map(|(a, _)| a.as_str())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetadata {
    pub generator: String,
    pub seed: u64,
    pub layout: ScenarioLayout,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub transactions: Vec<Transaction>,
    pub cases: Vec<CaseRecord>,
    pub tags: Vec<AttributionTag>,
    pub rates: FxRates,
    pub truth: GroundTruth,
    pub metadata: ScenarioMetadata,
}

impl Scenario {
    pub fn ledger(&self) -> Ledger {
        Ledger::new(self.transactions.clone()).expect("generated tx ids are unique")
    }

    /// Writes `transactions.jsonl`, `cases.csv`, `tags.csv`, `rates.csv`,
    /// `truth.json` and `metadata.json` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        let mut buf = Vec::new();
        write_transactions(&self.transactions, TxFormat::Jsonl, &mut buf)?;
        fs::write(dir.join("transactions.jsonl"), &buf)?;

        buf.clear();
        write_cases(&self.cases, &mut buf)?;
        if self.cases.is_empty() {
            buf.extend_from_slice(b"case_id,category,zone_id,address,role\n");
        }
        fs::write(dir.join("cases.csv"), &buf)?;

        buf.clear();
        write_tags(&self.tags, &mut buf)?;
        if self.tags.is_empty() {
            buf.extend_from_slice(b"address,label,category,is_service\n");
        }
        fs::write(dir.join("tags.csv"), &buf)?;

        buf.clear();
        write_rates(&self.rates, &mut buf)?;
        fs::write(dir.join("rates.csv"), &buf)?;

        fs::write(
            dir.join("truth.json"),
            serde_json::to_string_pretty(&self.truth).expect("truth serialises"),
        )?;
        fs::write(
            dir.join("metadata.json"),
            serde_json::to_string_pretty(&self.metadata).expect("metadata serialises"),
        )?;
        Ok(())
    }
}

/// Deterministic daily rate: a seasonal wave around 30,000 EUR/BTC.
fn rate_for_day(day_index: i64) -> f64 {
    let wave = (2.0 * std::f64::consts::PI * day_index as f64 / 365.0).sin();
    ((30_000.0 + 8_000.0 * wave) * 100.0).round() / 100.0
}

fn day_index(ts: i64) -> i64 {
    (ts - START_TS).div_euclid(86_400)
}

struct Builder<'a> {
    layout: &'a ScenarioLayout,
    prefix: &'static str,
    rng: ChaCha20Rng,
    clock: i64,
    txs: Vec<Transaction>,
    truth: GroundTruth,
    /// Unspent outputs per address, in receipt order.
    utxos: BTreeMap<String, Vec<u64>>,
    victims: Vec<String>,
    /// (campaign, receiving addresses spent) per sweep.
    sweeps: Vec<(usize, Vec<String>)>,
    deposits: Vec<String>,
    counters: BTreeMap<&'static str, usize>,
}

impl Builder<'_> {
    fn tick(&mut self) -> i64 {
        self.clock += self.rng.random_range(600..7_200);
        self.clock
    }

    fn next_id(&mut self, kind: &'static str) -> usize {
        let n = self.counters.entry(kind).or_default();
        *n += 1;
        *n - 1
    }

    fn tx_id(&mut self) -> String {
        let n = self.next_id("tx");
        format!("{}-tx-{n:06}", self.prefix)
    }

    fn own(&mut self, address: &str, wallet: String) {
        self.truth
            .address_wallet
            .insert(address.to_string(), wallet);
    }

    fn push(&mut self, timestamp: i64, inputs: Vec<TxIo>, outputs: Vec<TxIo>) {
        let tx_id = self.tx_id();
        for out in &outputs {
            self.utxos
                .entry(out.address.clone())
                .or_default()
                .push(out.value);
        }
        self.txs.push(Transaction {
            tx_id,
            timestamp,
            inputs,
            outputs,
        });
    }

    /// Spends every unspent output of `addresses`.
    fn take_inputs(&mut self, addresses: &[String]) -> Vec<TxIo> {
        addresses
            .iter()
            .flat_map(|a| {
                self.utxos
                    .remove(a)
                    .unwrap_or_default()
                    .into_iter()
                    .map(move |v| TxIo::new(a.clone(), v))
            })
            .collect()
    }

    fn campaign(&mut self, c: usize, plan: &CampaignPlan) -> Vec<CaseRecord> {
        let model = self.layout.payment_value_model;
        let collector = format!("{}-collector-{:03}", self.prefix, plan.collector);
        self.own(&collector, format!("collector-{}", plan.collector));
        let station = 1_000 + (c % 9_000) as u16;

        let mut receiving: Vec<String> = Vec::new();
        let mut cases = Vec::new();
        for j in 0..plan.cases {
            let reuse =
                j > 0 && !receiving.is_empty() && self.rng.random_bool(plan.address_reuse_prob);
            let perp = if reuse {
                receiving.choose(&mut self.rng).expect("non-empty").clone()
            } else if self.rng.random_bool(self.layout.custodial_reuse_prob) {
                let n = self.next_id("deposit");
                let a = format!("{}-deposit-{n:05}", self.prefix);
                self.own(&a, "exchange".into());
                self.deposits.push(a.clone());
                receiving.push(a.clone());
                a
            } else {
                let a = format!("{}-perp-{c:04}-{:04}", self.prefix, receiving.len());
                self.own(&a, format!("campaign-{c}"));
                receiving.push(a.clone());
                a
            };

            let n = self.next_id("case");
            let victim = format!("{}-victim-{n:06}", self.prefix);
            self.own(&victim, format!("victim-{n}"));
            self.victims.push(victim.clone());

            let ts = self.tick();
            let eur = model.sample_eur(&mut self.rng);
            let rate = rate_for_day(day_index(ts));
            let value = ((eur / rate * SATOSHI_PER_BTC).round() as u64).max(1_000);
            self.push(
                ts,
                vec![TxIo::new(victim.clone(), value + FEE)],
                vec![TxIo::new(perp.clone(), value)],
            );

            let year = (utc_day(ts).year() % 100) as u8;
            let case_id = FileNumber::new(model.county(), station, n as u32, year, (n % 10) as u8)
                .expect("generated file numbers are well-formed");
            self.truth.case_campaign.insert(case_id, c);
            cases.push(CaseRecord {
                case_id,
                category: model.category(),
                seed_addresses: vec![
                    SeedAddress {
                        address: perp,
                        role: Role::Perpetrator,
                    },
                    SeedAddress {
                        address: victim,
                        role: Role::Victim,
                    },
                ],
                zone_id: "synthetic".into(),
            });
        }

        // sweep the wallet's own receiving addresses in batches
        let own: Vec<String> = receiving
            .into_iter()
            .filter(|a| !self.deposits.contains(a))
            .collect();
        let mut batches: Vec<Vec<String>> = Vec::new();
        for address in own {
            match batches.last_mut() {
                Some(batch) if self.rng.random_bool(plan.wallet_cospend_prob) => {
                    batch.push(address)
                }
                _ => batches.push(vec![address]),
            }
        }
        let mut change: Option<String> = None;
        let count = batches.len();
        for (b, batch) in batches.into_iter().enumerate() {
            let mut spend = batch.clone();
            if let Some(prev) = change.take() {
                if !spend.contains(&prev) {
                    spend.insert(0, prev);
                }
            }
            let inputs = self.take_inputs(&spend);
            let total: u64 = inputs.iter().map(|i| i.value).sum();
            let mut outputs = Vec::new();
            let mut to_collector = total - FEE;
            if b + 1 < count {
                let back = total / 10;
                to_collector -= back;
                outputs.push(TxIo::new(batch[0].clone(), back));
                change = Some(batch[0].clone());
            }
            outputs.insert(0, TxIo::new(collector.clone(), to_collector));
            let ts = self.tick();
            self.push(ts, inputs, outputs);
            self.sweeps.push((c, batch));
            if b == 0 {
                match self
                    .truth
                    .collectors
                    .iter_mut()
                    .find(|t| t.address == collector)
                {
                    Some(t) => t.campaigns.push(c),
                    None => self.truth.collectors.push(TruthCollector {
                        address: collector.clone(),
                        campaigns: vec![c],
                    }),
                }
            }
        }
        cases
    }

    fn consolidate_deposits(&mut self) {
        if self.deposits.is_empty() {
            return;
        }
        let deposits = self.deposits.clone();
        let inputs = self.take_inputs(&deposits);
        let total: u64 = inputs.iter().map(|i| i.value).sum();
        let hot = format!("{}-exchange-hot", self.prefix);
        self.own(&hot, "exchange".into());
        let ts = self.tick();
        self.push(
            ts,
            inputs,
            vec![TxIo::new(hot, total.saturating_sub(FEE).max(1))],
        );
    }

    /// Equal-output mixes, drawn from an independent RNG stream.
    fn coinjoin_noise(&mut self) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.layout.seed);
        rng.set_stream(NOISE_STREAM);
        let mut ts = self.clock;
        let sweeps = self.sweeps.clone();
        for (campaign, batch) in &sweeps {
            if !rng.random_bool(self.layout.coinjoin_noise_prob) {
                continue;
            }
            let foreign: Vec<&String> = sweeps
                .iter()
                .filter(|(c, _)| c != campaign)
                .flat_map(|(_, b)| b)
                .collect();
            let local: Vec<&String> = batch.iter().skip(1).collect();
            let pool = if foreign.is_empty() { local } else { foreign };
            let Some(partner) = pool.choose(&mut rng) else {
                continue;
            };
            let participants = [batch[0].clone(), (*partner).clone()];
            let outputs: Vec<TxIo> = participants
                .iter()
                .map(|_| {
                    let to = self
                        .victims
                        .choose(&mut rng)
                        .expect("victims exist")
                        .clone();
                    TxIo::new(to, MIX_DENOMINATION)
                })
                .collect();
            let inputs = participants
                .iter()
                .map(|a| {
                    TxIo::new(
                        a.clone(),
                        MIX_DENOMINATION + FEE + rng.random_range(0..5_000),
                    )
                })
                .collect();
            ts += 60;
            let n = self.next_id("mix");
            self.txs.push(Transaction {
                tx_id: format!("{}-mix-{n:05}", self.prefix),
                timestamp: ts,
                inputs,
                outputs,
            });
        }
    }
}

pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, SynthError> {
    spec.validate()?;
    generate_layout(&spec.layout())
}

pub fn generate_layout(layout: &ScenarioLayout) -> Result<Scenario, SynthError> {
    layout.validate()?;
    let model = layout.payment_value_model;
    let mut b = Builder {
        layout,
        prefix: model.prefix(),
        rng: ChaCha20Rng::seed_from_u64(layout.seed),
        clock: START_TS,
        txs: Vec::new(),
        truth: GroundTruth::default(),
        utxos: BTreeMap::new(),
        victims: Vec::new(),
        sweeps: Vec::new(),
        deposits: Vec::new(),
        counters: BTreeMap::new(),
    };

    let mut cases = Vec::new();
    for (c, plan) in layout.campaigns.iter().enumerate() {
        cases.extend(b.campaign(c, plan));
    }
    b.consolidate_deposits();
    let last_day = day_index(b.clock);
    b.coinjoin_noise();

    let mut tags = Vec::new();
    if let Some(first) = b.deposits.first() {
        for address in [first.clone(), format!("{}-exchange-hot", b.prefix)] {
            tags.push(AttributionTag {
                address,
                label: "Synthetic Exchange".into(),
                category: TagCategory::Exchange,
                is_service: true,
            });
        }
    }
    if model == PaymentModel::SextortionLike {
        for collector in &b.truth.collectors {
            tags.push(AttributionTag {
                address: collector.address.clone(),
                label: "sextortion spam campaign".into(),
                category: TagCategory::SpamCampaign,
                is_service: false,
            });
        }
    }

    let start_day = utc_day(START_TS);
    let rates = FxRates::from_rates((0..=last_day).map(|d| FxRate {
        date: start_day + chrono::Days::new(d as u64),
        eur_per_btc: rate_for_day(d),
    }))
    .expect("generated rates are positive and unique");

    Ok(Scenario {
        transactions: b.txs,
        cases,
        tags,
        rates,
        truth: b.truth,
        metadata: ScenarioMetadata {
            generator: GENERATOR.into(),
            seed: layout.seed,
            layout: layout.clone(),
        },
    })
}

/// Human-readable one-line summary of a scenario.
pub fn summary(s: &Scenario) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "{} transactions, {} cases, {} campaigns, {} collectors",
        s.transactions.len(),
        s.cases.len(),
        s.truth.campaign_partition().len(),
        s.truth.collectors.len()
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> ScenarioSpec {
        ScenarioSpec {
            seed: 7,
            n_campaigns: 1,
            cases_per_campaign: 1,
            address_reuse_prob: 0.0,
            wallet_cospend_prob: 0.0,
            collector_fanin: 1,
            payment_value_model: PaymentModel::SextortionLike,
            custodial_reuse_prob: 0.0,
            coinjoin_noise_prob: 0.0,
        }
    }

    #[test]
    fn minimal_scenario_is_two_transactions() {
        let s = generate(&minimal()).unwrap();
        assert_eq!(s.transactions.len(), 2);
        let (pay, sweep) = (&s.transactions[0], &s.transactions[1]);
        let perp = &pay.outputs[0].address;
        assert!(s.truth.address_wallet[&pay.inputs[0].address].starts_with("victim-"));
        assert_eq!(&sweep.inputs[0].address, perp);
        assert_eq!(sweep.outputs[0].address, s.truth.collectors[0].address);
        assert_eq!(s.cases.len(), 1);
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = ScenarioSpec {
            seed: 11,
            custodial_reuse_prob: 0.2,
            coinjoin_noise_prob: 0.3,
            ..ScenarioSpec::default()
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&spec).unwrap().write_to_dir(a.path()).unwrap();
        generate(&spec).unwrap().write_to_dir(b.path()).unwrap();
        for f in [
            "transactions.jsonl",
            "cases.csv",
            "tags.csv",
            "rates.csv",
            "truth.json",
            "metadata.json",
        ] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap(),
                "{f} differs"
            );
        }
    }

    #[test]
    fn values_are_positive_and_sweeps_balance() {
        let spec = ScenarioSpec {
            seed: 3,
            n_campaigns: 4,
            cases_per_campaign: 12,
            wallet_cospend_prob: 0.4,
            payment_value_model: PaymentModel::FraudLike,
            ..ScenarioSpec::default()
        };
        let s = generate(&spec).unwrap();
        for tx in &s.transactions {
            assert!(tx.inputs.iter().chain(&tx.outputs).all(|io| io.value > 0));
            assert!(
                tx.input_value() >= tx.output_value(),
                "{} creates value",
                tx.tx_id
            );
        }
        // every received output is eventually spent except at collectors
        assert!(s.ledger().len() == s.transactions.len());
    }

    #[test]
    fn noise_does_not_perturb_the_clean_part() {
        let clean = ScenarioSpec {
            seed: 5,
            ..ScenarioSpec::default()
        };
        let noisy = ScenarioSpec {
            coinjoin_noise_prob: 0.5,
            ..clean.clone()
        };
        let a = generate(&clean).unwrap();
        let b = generate(&noisy).unwrap();
        assert!(b.transactions.len() > a.transactions.len());
        assert_eq!(
            &b.transactions[..a.transactions.len()],
            a.transactions.as_slice()
        );
        assert_eq!(a.cases, b.cases);
    }

    #[test]
    fn spec_files_round_trip() {
        let spec = ScenarioSpec {
            seed: 99,
            payment_value_model: PaymentModel::FraudLike,
            coinjoin_noise_prob: 0.25,
            ..ScenarioSpec::default()
        };
        assert_eq!(
            ScenarioSpec::from_kv_text(&spec.to_kv_text()).unwrap(),
            spec
        );
        assert!(ScenarioSpec::from_kv_text("n_campaigns=2").is_err());
        assert!(matches!(
            ScenarioSpec::from_kv_text("seed=1\naddress_reuse_prob=1.5"),
            Err(SynthError::Probability { .. })
        ));
        assert!(ScenarioSpec::from_kv_text("seed=1\ncollector_fanin=0").is_err());
        assert!(ScenarioSpec::from_kv_text("seed=1\nmystery=1").is_err());
    }

    #[test]
    fn sextortion_payments_stay_below_1000_eur() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!((0..10_000).all(|_| PaymentModel::SextortionLike.sample_eur(&mut rng) < 1_000.0));
    }

    #[test]
    fn fraud_payments_have_a_heavy_tail() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| PaymentModel::FraudLike.sample_eur(&mut rng))
            .collect();
        let tail = draws.iter().filter(|v| **v > 100_000.0).count() as f64 / draws.len() as f64;
        assert!((0.007..0.013).contains(&tail), "tail share {tail}");
        // the mode sits near 2,000 EUR: the 1-2k decade-half bucket beats its neighbours
        let in_range = |lo: f64, hi: f64| draws.iter().filter(|v| **v >= lo && **v < hi).count();
        assert!(in_range(1_500.0, 2_500.0) > in_range(500.0, 1_500.0) / 2);
        assert!(in_range(1_500.0, 2_500.0) > in_range(2_500.0, 3_500.0));
    }
}
