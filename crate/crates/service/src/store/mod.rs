//! Persistence interface and its records.
//!
//! The schema holds case identifiers, zones, categories, annotations and
//! the exchange-request log. No personal data about victims is stored.

mod sqlite;

use std::collections::BTreeSet;

use caselink_core::{CaseCategory, FileNumber, Role};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use sqlite::SqliteStore;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    NotFound(String),
    #[error("storage backend: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Zone {
    pub zone_id: String,
    pub name: String,
    /// Zones allowed to read this zone's cases, besides the zone itself.
    #[serde(default)]
    pub readable_by: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredCase {
    pub case_id: FileNumber,
    pub zone_id: String,
    pub category: CaseCategory,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseAnnotation {
    pub case_id: FileNumber,
    pub address: String,
    pub role: Role,
    pub author: String,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExchangeRequest {
    pub id: i64,
    pub address: String,
    pub exchange: String,
    pub requested_at: String,
    pub zone_id: String,
}

/// Who a bearer token belongs to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Principal {
    Admin,
    Member { zone_id: String, member: String },
}

pub trait CaseStore: Send + Sync {
    fn create_zone(&self, zone: &Zone) -> Result<(), StoreError>;
    fn zone(&self, zone_id: &str) -> Result<Option<Zone>, StoreError>;
    /// Lets `reader` read the cases of `zone_id`.
    fn grant(&self, zone_id: &str, reader: &str) -> Result<(), StoreError>;
    /// Zones whose cases `reader` may read, including itself.
    fn readable_zones(&self, reader: &str) -> Result<BTreeSet<String>, StoreError>;

    /// Issues a new token; `zone_id = None` issues an admin token.
    fn issue_token(&self, zone_id: Option<&str>, member: &str) -> Result<String, StoreError>;
    fn authenticate(&self, token: &str) -> Result<Option<Principal>, StoreError>;

    fn create_case(&self, case: &StoredCase) -> Result<(), StoreError>;
    fn case(&self, case_id: &FileNumber) -> Result<Option<StoredCase>, StoreError>;
    fn cases(&self) -> Result<Vec<StoredCase>, StoreError>;

    fn annotate(&self, annotation: &CaseAnnotation) -> Result<(), StoreError>;
    fn annotations(&self, case_id: &FileNumber) -> Result<Vec<CaseAnnotation>, StoreError>;
    fn all_annotations(&self) -> Result<Vec<CaseAnnotation>, StoreError>;

    /// Appends to the request log and returns the stored entry.
    fn log_request(
        &self,
        address: &str,
        exchange: &str,
        zone_id: &str,
        requested_at: &str,
    ) -> Result<ExchangeRequest, StoreError>;
    /// Log entries for `address` in insertion order.
    fn requests(&self, address: &str) -> Result<Vec<ExchangeRequest>, StoreError>;
}
