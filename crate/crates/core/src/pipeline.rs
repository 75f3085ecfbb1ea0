//! End-to-end run driven by a flat `key=value` config file.
//!
//! Stages run in a fixed order: ingest, coinjoin filter, clustering, entity
//! graph, case linking, flow statistics and export. Every dump lands in the
//! output directory together with `manifest.json`, which records SHA-256
//! digests of all inputs and outputs plus the effective configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{AddressId, EntityPartition};
use crate::coinjoin::{CoinJoinPolicy, Verdicts};
use crate::graph::{EntityGraph, GraphConfig, DEFAULT_SERVICE_SIZE_THRESHOLD};
use crate::kv::KvMap;
use crate::ledger::{
    filter_active_cases, parse_cases, parse_rates, parse_tags, parse_transactions, ActiveCases,
    AttributionTag, CaseCategory, CaseRecord, FxRates, Ledger, TxFormat,
};
use crate::link::{cluster_breakdown, CaseLinker, LinkConfig, LinkLevel, NetworkFormat};
use crate::stats::{
    default_buckets, inflow_series, value_distribution, victim_estimate, InflowSeries,
    InflowTarget, PaymentDistribution, VictimEstimate,
};

pub const TOOL_VERSION: &str = concat!("caselink ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    CoinJoin,
    Cluster,
    Graph,
    Link,
    Stats,
    Export,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Config => "config",
            Self::Ingest => "ledger-ingest",
            Self::CoinJoin => "coinjoin-filter",
            Self::Cluster => "entity-cluster",
            Self::Graph => "entity-graph",
            Self::Link => "case-link",
            Self::Stats => "flow-stats",
            Self::Export => "export",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    pub fn new(stage: Stage, cause: impl fmt::Display) -> Self {
        Self {
            stage,
            message: cause.to_string(),
        }
    }
}

fn at<T, E: fmt::Display>(stage: Stage, r: Result<T, E>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::new(stage, e))
}

/// Config keys with their defaults, as documented for users.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    (
        "transactions",
        "required; .csv is read as CSV, anything else as JSONL",
    ),
    ("cases", "required"),
    ("tags", "none"),
    ("rates", "none; required when report_eur=true"),
    (
        "coinjoin_policy",
        "default  (default | off | custom:<path>)",
    ),
    ("service_size_threshold", "10000"),
    ("include_self_edges", "false"),
    ("min_collector_sources", "1"),
    ("report_eur", "true"),
    ("exclude_service_inflow", "true"),
    ("buckets", "10,100,1000,10000,100000,1000000"),
    ("out_dir", "out"),
    ("threads", "all cores"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub transactions: PathBuf,
    pub cases: PathBuf,
    pub tags: Option<PathBuf>,
    pub rates: Option<PathBuf>,
    pub coinjoin_policy: String,
    pub service_size_threshold: usize,
    pub include_self_edges: bool,
    pub min_collector_sources: usize,
    pub report_eur: bool,
    pub exclude_service_inflow: bool,
    pub buckets: Vec<f64>,
    pub out_dir: PathBuf,
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn new(transactions: impl Into<PathBuf>, cases: impl Into<PathBuf>) -> Self {
        Self {
            transactions: transactions.into(),
            cases: cases.into(),
            tags: None,
            rates: None,
            coinjoin_policy: "default".into(),
            service_size_threshold: DEFAULT_SERVICE_SIZE_THRESHOLD,
            include_self_edges: false,
            min_collector_sources: 1,
            report_eur: true,
            exclude_service_inflow: true,
            buckets: default_buckets(),
            out_dir: PathBuf::from("out"),
            threads: None,
        }
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn from_kv_text(text: &str, base: &Path) -> Result<Self, PipelineError> {
        let kv = at(Stage::Config, KvMap::parse(text))?;
        let known: Vec<&str> = CONFIG_KEYS.iter().map(|(k, _)| *k).collect();
        at(Stage::Config, kv.reject_unknown(&known))?;
        let path = |key: &str| kv.get(key).map(|p| base.join(p));
        let required = |key: &str| {
            path(key).ok_or_else(|| PipelineError::new(Stage::Config, format!("missing key {key}")))
        };
        let mut cfg = Self::new(required("transactions")?, required("cases")?);
        cfg.tags = path("tags");
        cfg.rates = path("rates");
        if let Some(policy) = kv.get("coinjoin_policy") {
            cfg.coinjoin_policy = match policy.strip_prefix("custom:") {
                Some(p) => format!("custom:{}", base.join(p).display()),
                None => policy.to_string(),
            };
        }
        macro_rules! opt {
            ($field:ident) => {
                if let Some(v) = at(Stage::Config, kv.parsed(stringify!($field)))? {
                    cfg.$field = v;
                }
            };
        }
        opt!(service_size_threshold);
        opt!(include_self_edges);
        opt!(min_collector_sources);
        opt!(report_eur);
        opt!(exclude_service_inflow);
        if let Some(b) = kv.get("buckets") {
            cfg.buckets = b
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| PipelineError::new(Stage::Config, format!("buckets: {e}")))?;
        }
        if let Some(dir) = path("out_dir") {
            cfg.out_dir = dir;
        }
        cfg.threads = at(Stage::Config, kv.parsed("threads"))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = at(Stage::Config, fs::read_to_string(path))?;
        Self::from_kv_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Settings that influence results. Paths, output location and thread
    /// count are left out; inputs are pinned by digest instead.
    pub fn snapshot(&self) -> BTreeMap<String, String> {
        let buckets: Vec<String> = self.buckets.iter().map(|b| b.to_string()).collect();
        let policy = match self.coinjoin_policy.strip_prefix("custom:") {
            Some(_) => "custom".to_string(),
            None => self.coinjoin_policy.clone(),
        };
        [
            ("coinjoin_policy", policy),
            (
                "service_size_threshold",
                self.service_size_threshold.to_string(),
            ),
            ("include_self_edges", self.include_self_edges.to_string()),
            (
                "min_collector_sources",
                self.min_collector_sources.to_string(),
            ),
            ("report_eur", self.report_eur.to_string()),
            (
                "exclude_service_inflow",
                self.exclude_service_inflow.to_string(),
            ),
            ("buckets", buckets.join(",")),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Parsed inputs after the active-case filter.
#[derive(Debug)]
pub struct Inputs {
    pub ledger: Ledger,
    pub cases: ActiveCases,
    pub tags: Vec<AttributionTag>,
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs, PipelineError> {
    let s = Stage::Ingest;
    let format = match cfg.transactions.extension().and_then(|e| e.to_str()) {
        Some("csv") => TxFormat::Csv,
        _ => TxFormat::Jsonl,
    };
    let txs = at(
        s,
        File::open(&cfg.transactions)
            .map_err(|e| format!("{}: {e}", cfg.transactions.display()))
            .and_then(|f| parse_transactions(BufReader::new(f), format).map_err(|e| e.to_string())),
    )?;
    let ledger = at(s, Ledger::new(txs))?;
    let cases = at(
        s,
        open(&cfg.cases).and_then(|f| parse_cases(f).map_err(|e| e.to_string())),
    )?;
    let tags = match &cfg.tags {
        Some(p) => at(
            s,
            open(p).and_then(|f| parse_tags(f).map_err(|e| e.to_string())),
        )?,
        None => Vec::new(),
    };
    let cases = filter_active_cases(&cases, &ledger);
    Ok(Inputs {
        ledger,
        cases,
        tags,
    })
}

fn open(path: &Path) -> Result<File, String> {
    File::open(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Results of the clustering and graph stages.
#[derive(Debug)]
pub struct Analysis {
    pub inputs: Inputs,
    pub verdicts: Verdicts,
    pub partition: EntityPartition,
    pub graph: EntityGraph,
    pub link_config: LinkConfig,
}

impl Analysis {
    pub fn build(inputs: Inputs, cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let policy = at(
            Stage::CoinJoin,
            CoinJoinPolicy::from_flag(&cfg.coinjoin_policy),
        )?;
        let verdicts = Verdicts::classify_ledger(&inputs.ledger, &policy);
        let partition = EntityPartition::build(&inputs.ledger, &verdicts);
        let graph = at(
            Stage::Graph,
            EntityGraph::build(
                &inputs.ledger,
                &partition,
                &verdicts,
                &inputs.tags,
                GraphConfig {
                    service_size_threshold: cfg.service_size_threshold,
                    include_self_edges: cfg.include_self_edges,
                },
            ),
        )?;
        if cfg.min_collector_sources == 0 {
            return Err(PipelineError::new(
                Stage::Link,
                "min_collector_sources must be at least 1",
            ));
        }
        Ok(Self {
            inputs,
            verdicts,
            partition,
            graph,
            link_config: LinkConfig {
                min_collector_sources: cfg.min_collector_sources,
            },
        })
    }

    pub fn linker(&self) -> CaseLinker<'_> {
        CaseLinker::new(
            &self.inputs.cases.active,
            &self.partition,
            &self.graph,
            self.link_config,
        )
    }

    pub fn cases_of(&self, category: CaseCategory) -> Vec<&CaseRecord> {
        self.inputs
            .cases
            .active
            .iter()
            .filter(|c| c.category == category)
            .collect()
    }

    /// Flow statistics over the perpetrator addresses of `cases`.
    pub fn flow_stats(
        &self,
        cases: &[&CaseRecord],
        rates: &FxRates,
        buckets: &[f64],
        exclude_service: bool,
    ) -> Result<FlowReport, PipelineError> {
        let s = Stage::Stats;
        let seeds: BTreeSet<&str> = cases
            .iter()
            .flat_map(|c| c.perpetrator_addresses())
            .collect();
        let seed_ids: BTreeSet<AddressId> = seeds
            .iter()
            .filter_map(|a| self.partition.address_id(a))
            .collect();
        let expansion = self.partition.expand(seeds.iter().copied());
        let seed_target = InflowTarget::Seed(&seed_ids);
        let expanded_target = InflowTarget::Expanded(&expansion.entities);
        let seed_series = at(
            s,
            inflow_series(&self.graph, seed_target, rates, exclude_service),
        )?;
        let expanded_series = at(
            s,
            inflow_series(&self.graph, expanded_target, rates, exclude_service),
        )?;
        let payments = expanded_target.receipts(&self.graph, exclude_service);
        let distribution = at(s, value_distribution(&payments, rates, buckets))?;
        let victims = victim_estimate(
            &self.inputs.ledger,
            seeds.iter().copied(),
            &expansion.expanded_addresses,
        );
        Ok(FlowReport {
            seed_addresses: seeds.len(),
            expanded_addresses: expansion.expanded_addresses.len(),
            seed_series,
            expanded_series,
            distribution,
            victims,
        })
    }
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub seed_addresses: usize,
    pub expanded_addresses: usize,
    pub seed_series: InflowSeries,
    pub expanded_series: InflowSeries,
    pub distribution: PaymentDistribution,
    pub victims: VictimEstimate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, Copy, Serialize)]
struct LinkageSummary {
    level: LinkLevel,
    cases: usize,
    clusters: usize,
    singletons: usize,
    linkage_rate: f64,
}

/// Sets the worker count for parallel stages run outside [`run_pipeline`].
pub fn init_global_threads(threads: usize) -> Result<(), rayon::ThreadPoolBuildError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
}

/// Runs every stage and writes dumps plus `manifest.json` to `cfg.out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    let pool = at(Stage::Config, builder.build())?;
    pool.install(|| run_stages(cfg))
}

fn run_stages(cfg: &PipelineConfig) -> Result<RunManifest, PipelineError> {
    let mut inputs = BTreeMap::new();
    for (name, path) in [
        ("transactions", Some(&cfg.transactions)),
        ("cases", Some(&cfg.cases)),
        ("tags", cfg.tags.as_ref()),
    ] {
        if let Some(p) = path {
            let bytes = at(
                Stage::Ingest,
                fs::read(p).map_err(|e| format!("{}: {e}", p.display())),
            )?;
            inputs.insert(name.to_string(), sha256_hex(&bytes));
        }
    }

    let loaded = load_inputs(cfg)?;
    let analysis = Analysis::build(loaded, cfg)?;
    let linker = analysis.linker();

    let mut out: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    out.insert(
        "active_cases.json".into(),
        json(&serde_json::json!({
            "active_cases": analysis.inputs.cases.active.len(),
            "inactive_addresses": analysis.inputs.cases.inactive_addresses,
        })),
    );
    out.insert(
        "verdicts.csv".into(),
        analysis.verdicts.dump_csv().into_bytes(),
    );
    out.insert(
        "partition.csv".into(),
        analysis.partition.dump_csv().into_bytes(),
    );
    out.insert("graph.csv".into(), analysis.graph.dump_csv().into_bytes());

    let mut linkage = Vec::new();
    for level in LinkLevel::ALL {
        let clustering = linker.link(level);
        linkage.push(LinkageSummary {
            level,
            cases: clustering.case_count(),
            clusters: clustering.clusters.len(),
            singletons: clustering.singleton_count(),
            linkage_rate: clustering.linkage_rate(),
        });
        out.insert(format!("clusters_{level}.json"), json(&clustering));
        out.insert(
            format!("breakdown_{level}.json"),
            json(&cluster_breakdown(&clustering)),
        );
        out.insert(
            format!("network_{level}.json"),
            linker.export_network(&clustering, NetworkFormat::Json),
        );
        out.insert(
            format!("network_{level}.dot"),
            linker.export_network(&clustering, NetworkFormat::Dot),
        );
    }
    out.insert("linkage.json".into(), json(&linkage));
    out.insert("collectors.json".into(), json(&linker.collectors()));

    if cfg.report_eur {
        let rates_path = cfg.rates.as_ref().ok_or_else(|| {
            PipelineError::new(
                Stage::Stats,
                "EUR output requested but no rates file configured",
            )
        })?;
        let bytes = at(
            Stage::Stats,
            fs::read(rates_path).map_err(|e| format!("{}: {e}", rates_path.display())),
        )?;
        inputs.insert("rates".into(), sha256_hex(&bytes));
        let rates = at(Stage::Stats, parse_rates(bytes.as_slice()))?;
        for category in [CaseCategory::Sextortion, CaseCategory::Cyberfraud] {
            let cases = analysis.cases_of(category);
            if cases.is_empty() {
                continue;
            }
            let report =
                analysis.flow_stats(&cases, &rates, &cfg.buckets, cfg.exclude_service_inflow)?;
            for series in [&report.seed_series, &report.expanded_series] {
                let scope = match series.scope {
                    crate::stats::Scope::Seed => "seed",
                    crate::stats::Scope::Expanded => "expanded",
                };
                out.insert(
                    format!("inflow_{category}_{scope}.csv"),
                    series.to_csv().into_bytes(),
                );
                out.insert(
                    format!("inflow_{category}_{scope}.json"),
                    json(&series.plot_payload()),
                );
            }
            out.insert(
                format!("distribution_{category}.csv"),
                report.distribution.to_csv().into_bytes(),
            );
            out.insert(
                format!("victims_{category}.json"),
                json(&serde_json::json!({
                    "seed_addresses": report.seed_addresses,
                    "expanded_addresses": report.expanded_addresses,
                    "unique_senders": report.victims.unique_senders,
                    "incoming_transactions": report.victims.incoming_transactions,
                })),
            );
        }
    }

    let s = Stage::Export;
    at(s, fs::create_dir_all(&cfg.out_dir))?;
    let mut outputs = BTreeMap::new();
    for (name, bytes) in &out {
        at(s, fs::write(cfg.out_dir.join(name), bytes))?;
        outputs.insert(name.clone(), sha256_hex(bytes));
    }
    let manifest = RunManifest {
        tool_version: TOOL_VERSION.into(),
        config: cfg.snapshot(),
        inputs,
        outputs,
    };
    let text = serde_json::to_vec_pretty(&manifest).expect("manifest serialises");
    at(s, fs::write(cfg.out_dir.join("manifest.json"), text))?;
    Ok(manifest)
}

fn json<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("dump serialises");
    v.push(b'\n');
    v
}
