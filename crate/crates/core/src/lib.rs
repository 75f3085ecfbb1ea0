//! Core analytics for linking cryptoasset-related criminal cases.
//!
//! The crate is organised as a pipeline: [`ledger`] ingests transaction
//! exports and case filings, [`coinjoin`] flags collaborative transactions,
//! [`cluster`] groups addresses into entities with the multi-input
//! heuristic, [`graph`] aggregates value flows between entities, [`link`]
//! joins cases into case clusters and [`stats`] derives inflow figures.
//! [`synth`] produces synthetic scenarios with known ground truth and
//! [`pipeline`] wires everything together behind a flat config file.

pub mod cluster;
pub mod coinjoin;
pub mod graph;
pub mod kv;
pub mod ledger;
pub mod link;
pub mod pipeline;
pub mod stats;
pub mod synth;

pub use cluster::{AddressId, EntityId, EntityPartition, ExpansionResult};
pub use coinjoin::{CoinJoinPolicy, CoinJoinVerdict, Verdicts};
pub use graph::{EntityEdge, EntityGraph, EntityMeta, GraphConfig};
pub use ledger::{
    AttributionTag, CaseCategory, CaseRecord, FileNumber, FxRates, Ledger, Role, SeedAddress,
    TagCategory, Transaction, TxIo,
};
pub use link::{CaseClustering, CaseLinker, CaseNetwork, LinkConfig, LinkLevel};
pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, RunManifest};
pub use synth::{generate, GroundTruth, Scenario, ScenarioSpec};
