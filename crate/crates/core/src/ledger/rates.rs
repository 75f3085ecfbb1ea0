//! Daily EUR/BTC exchange rates.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, NaiveDate};
use serde::{Deserialize, Serialize};

use super::IngestError;

pub const SATOSHI_PER_BTC: f64 = 100_000_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FxRate {
    pub date: NaiveDate,
    pub eur_per_btc: f64,
}

/// Rates keyed by UTC calendar day. Lookups for a missing day fall back to
/// the nearest earlier day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FxRates {
    by_day: BTreeMap<NaiveDate, f64>,
}

/// UTC calendar day of a Unix timestamp.
pub fn utc_day(timestamp: i64) -> NaiveDate {
    DateTime::from_timestamp(timestamp, 0)
        .map(|dt| dt.date_naive())
        .unwrap_or(NaiveDate::MIN)
}

impl FxRates {
    pub fn from_rates(rates: impl IntoIterator<Item = FxRate>) -> Result<Self, IngestError> {
        let mut by_day = BTreeMap::new();
        for (idx, rate) in rates.into_iter().enumerate() {
            let line = idx + 2;
            if !(rate.eur_per_btc.is_finite() && rate.eur_per_btc > 0.0) {
                return Err(IngestError::Malformed {
                    line,
                    reason: format!("rate must be positive, found {}", rate.eur_per_btc),
                });
            }
            if by_day.insert(rate.date, rate.eur_per_btc).is_some() {
                return Err(IngestError::Malformed {
                    line,
                    reason: format!("duplicate rate for {}", rate.date),
                });
            }
        }
        Ok(Self { by_day })
    }

    pub fn is_empty(&self) -> bool {
        self.by_day.is_empty()
    }

    pub fn len(&self) -> usize {
        self.by_day.len()
    }

    pub fn rate_on(&self, day: NaiveDate) -> Result<f64, IngestError> {
        self.by_day
            .range(..=day)
            .next_back()
            .map(|(_, rate)| *rate)
            .ok_or(IngestError::NoRate(day))
    }

    pub fn rate_at(&self, timestamp: i64) -> Result<f64, IngestError> {
        self.rate_on(utc_day(timestamp))
    }

    /// EUR value of `satoshi` at the rate in force on the day of `timestamp`.
    pub fn to_eur(&self, satoshi: u64, timestamp: i64) -> Result<f64, IngestError> {
        Ok(satoshi as f64 * self.rate_at(timestamp)? / SATOSHI_PER_BTC)
    }

    pub fn iter(&self) -> impl Iterator<Item = FxRate> + '_ {
        self.by_day.iter().map(|(date, rate)| FxRate {
            date: *date,
            eur_per_btc: *rate,
        })
    }
}

/// Reads `rates.csv` (`date,eur_per_btc`, ISO-8601 dates).
pub fn parse_rates<R: Read>(source: R) -> Result<FxRates, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let rates = reader
        .deserialize::<FxRate>()
        .map(|r| {
            r.map_err(|e| IngestError::Malformed {
                line: e.position().map(|p| p.line() as usize).unwrap_or(0),
                reason: e.to_string(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    FxRates::from_rates(rates)
}

pub fn write_rates<W: Write>(rates: &FxRates, out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(["date", "eur_per_btc"])?;
    for rate in rates.iter() {
        writer.write_record([rate.date.to_string(), format!("{:.2}", rate.eur_per_btc)])?;
    }
    writer.flush()?;
    Ok(())
}
