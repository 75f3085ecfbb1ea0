//! Attribution tags binding addresses to real-world actors.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TagCategory {
    Exchange,
    Service,
    SpamCampaign,
    Other,
}

impl TagCategory {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Exchange => "exchange",
            Self::Service => "service",
            Self::SpamCampaign => "spam_campaign",
            Self::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionTag {
    pub address: String,
    pub label: String,
    pub category: TagCategory,
    pub is_service: bool,
}

impl AttributionTag {
    /// Whether this tag marks its address as belonging to a service provider.
    pub fn marks_service(&self) -> bool {
        self.is_service || matches!(self.category, TagCategory::Exchange | TagCategory::Service)
    }
}

/// Reads `tags.csv` (`address,label,category,is_service`).
pub fn parse_tags<R: Read>(source: R) -> Result<Vec<AttributionTag>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut seen = HashSet::new();
    let mut tags = Vec::new();
    for record in reader.deserialize::<AttributionTag>() {
        let tag = record.map_err(|e| IngestError::Malformed {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = tags.len() + 2;
        if tag.category == TagCategory::Exchange && !tag.is_service {
            return Err(IngestError::Malformed {
                line,
                reason: format!("exchange tag for {:?} must set is_service", tag.address),
            });
        }
        if !seen.insert((tag.address.clone(), tag.label.clone())) {
            return Err(IngestError::Malformed {
                line,
                reason: format!("duplicate tag ({:?}, {:?})", tag.address, tag.label),
            });
        }
        tags.push(tag);
    }
    Ok(tags)
}

pub fn write_tags<W: Write>(tags: &[AttributionTag], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    for tag in tags {
        writer.serialize(tag)?;
    }
    writer.flush()?;
    Ok(())
}
