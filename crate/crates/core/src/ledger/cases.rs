//! Filed cases and their seed addresses.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FileNumber, IngestError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseCategory {
    Cyberfraud,
    Sextortion,
}

impl CaseCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Cyberfraud => "cyberfraud",
            Self::Sextortion => "sextortion",
        }
    }
}

impl fmt::Display for CaseCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaseCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cyberfraud" => Ok(Self::Cyberfraud),
            "sextortion" => Ok(Self::Sextortion),
            other => Err(format!("unknown case category {other:?}")),
        }
    }
}

/// Role of an address within a case. Only these two are ever recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Victim,
    Perpetrator,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Victim => "victim",
            Self::Perpetrator => "perpetrator",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "victim" => Ok(Self::Victim),
            "perpetrator" => Ok(Self::Perpetrator),
            other => Err(format!(
                "role must be victim or perpetrator, found {other:?}"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedAddress {
    pub address: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: FileNumber,
    pub category: CaseCategory,
    pub seed_addresses: Vec<SeedAddress>,
    pub zone_id: String,
}

impl CaseRecord {
    pub fn perpetrator_addresses(&self) -> impl Iterator<Item = &str> {
        self.seed_addresses
            .iter()
            .filter(|s| s.role == Role::Perpetrator)
            .map(|s| s.address.as_str())
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct CaseRow {
    case_id: String,
    category: String,
    zone_id: String,
    address: String,
    role: String,
}

/// Reads `cases.csv` (`case_id,category,zone_id,address,role`), one row per
/// seed address. Cases keep the order of their first row.
pub fn parse_cases<R: Read>(source: R) -> Result<Vec<CaseRecord>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut cases: Vec<CaseRecord> = Vec::new();
    let mut index: HashMap<FileNumber, usize> = HashMap::new();
    let mut pairs: HashSet<(FileNumber, String)> = HashSet::new();

    let headers = reader
        .headers()
        .map_err(|e| IngestError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();

    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |reason: String| IngestError::Malformed { line, reason };
        let row: CaseRow = record
            .deserialize(Some(&headers))
            .map_err(|e| bad(e.to_string()))?;

        let case_id: FileNumber = row
            .case_id
            .parse()
            .map_err(|e| bad(format!("case_id {:?}: {e}", row.case_id)))?;
        let category: CaseCategory = row.category.parse().map_err(bad)?;
        let role: Role = row.role.parse().map_err(bad)?;
        if row.address.is_empty() {
            return Err(bad("empty address".into()));
        }
        if !pairs.insert((case_id, row.address.clone())) {
            return Err(bad(format!(
                "address {:?} listed twice for {case_id}",
                row.address
            )));
        }

        let seed = SeedAddress {
            address: row.address,
            role,
        };
        match index.get(&case_id) {
            Some(&i) => {
                let case = &mut cases[i];
                if case.category != category || case.zone_id != row.zone_id {
                    return Err(bad(format!("conflicting category or zone for {case_id}")));
                }
                case.seed_addresses.push(seed);
            }
            None => {
                index.insert(case_id, cases.len());
                cases.push(CaseRecord {
                    case_id,
                    category,
                    seed_addresses: vec![seed],
                    zone_id: row.zone_id,
                });
            }
        }
    }
    Ok(cases)
}

pub fn write_cases<W: Write>(cases: &[CaseRecord], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for case in cases {
        for seed in &case.seed_addresses {
            writer.serialize(CaseRow {
                case_id: case.case_id.to_string(),
                category: case.category.to_string(),
                zone_id: case.zone_id.clone(),
                address: seed.address.clone(),
                role: seed.role.to_string(),
            })?;
        }
    }
    writer.flush()?;
    Ok(())
}
