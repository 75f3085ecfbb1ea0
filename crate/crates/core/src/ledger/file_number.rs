//! Structured case file numbers of the shape `CC####-######-YY/C`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FileNumberError {
    #[error("{segment} segment must be {expected} characters, found {found}")]
    WrongLength {
        segment: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{segment} segment must contain only digits")]
    NonDigit { segment: &'static str },
    #[error("county code must be two uppercase ASCII letters")]
    BadCounty,
    #[error("missing separator {0:?}")]
    MissingSeparator(char),
}

/// A case file number: county code, police station, per-station sequence,
/// two-digit filing year and a trailing check digit.
///
/// The check digit is carried verbatim; no checksum algorithm is applied.
/// Field order makes the derived `Ord` agree with the lexicographic order
/// of the rendered string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FileNumber {
    county: [u8; 2],
    station: u16,
    sequence: u32,
    year: u8,
    check: u8,
}

impl FileNumber {
    pub fn new(
        county: &str,
        station: u16,
        sequence: u32,
        year: u8,
        check: u8,
    ) -> Result<Self, FileNumberError> {
        let county = parse_county(county)?;
        if station > 9_999 {
            return Err(FileNumberError::WrongLength {
                segment: "station",
                expected: 4,
                found: station.to_string().len(),
            });
        }
        if sequence > 999_999 {
            return Err(FileNumberError::WrongLength {
                segment: "sequence",
                expected: 6,
                found: sequence.to_string().len(),
            });
        }
        if year > 99 {
            return Err(FileNumberError::WrongLength {
                segment: "year",
                expected: 2,
                found: 3,
            });
        }
        if check > 9 {
            return Err(FileNumberError::WrongLength {
                segment: "check",
                expected: 1,
                found: 2,
            });
        }
        Ok(Self {
            county,
            station,
            sequence,
            year,
            check,
        })
    }

    pub fn county(&self) -> &str {
        // county bytes are validated ASCII uppercase
        std::str::from_utf8(&self.county).expect("ascii county code")
    }

    pub fn station(&self) -> u16 {
        self.station
    }

    pub fn sequence(&self) -> u32 {
        self.sequence
    }

    pub fn year(&self) -> u8 {
        self.year
    }

    pub fn check(&self) -> u8 {
        self.check
    }
}

fn parse_county(text: &str) -> Result<[u8; 2], FileNumberError> {
    match text.as_bytes() {
        [a, b] if a.is_ascii_uppercase() && b.is_ascii_uppercase() => Ok([*a, *b]),
        bytes if bytes.len() != 2 => Err(FileNumberError::WrongLength {
            segment: "county",
            expected: 2,
            found: text.chars().count(),
        }),
        _ => Err(FileNumberError::BadCounty),
    }
}

fn digits(segment: &'static str, text: &str, expected: usize) -> Result<u32, FileNumberError> {
    let found = text.chars().count();
    if found != expected {
        return Err(FileNumberError::WrongLength {
            segment,
            expected,
            found,
        });
    }
    if !text.bytes().all(|b| b.is_ascii_digit()) {
        return Err(FileNumberError::NonDigit { segment });
    }
    Ok(text.parse().expect("validated digits"))
}

impl FromStr for FileNumber {
    type Err = FileNumberError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        let (head, check) = text
            .split_once('/')
            .ok_or(FileNumberError::MissingSeparator('/'))?;
        let mut parts = head.splitn(3, '-');
        let office = parts.next().unwrap_or_default();
        let sequence = parts.next().ok_or(FileNumberError::MissingSeparator('-'))?;
        let year = parts.next().ok_or(FileNumberError::MissingSeparator('-'))?;

        // the county prefix is the leading letters, the station the rest
        let split = office
            .char_indices()
            .find(|(_, c)| !c.is_ascii_alphabetic())
            .map(|(i, _)| i)
            .unwrap_or(office.len());
        let county = parse_county(&office[..split])?;
        let station = digits("station", &office[split..], 4)?;
        let sequence = digits("sequence", sequence, 6)?;
        let year = digits("year", year, 2)?;
        let check = digits("check", check, 1)?;

        Ok(Self {
            county,
            station: station as u16,
            sequence,
            year: year as u8,
            check: check as u8,
        })
    }
}

impl fmt::Display for FileNumber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}{:04}-{:06}-{:02}/{}",
            self.county(),
            self.station,
            self.sequence,
            self.year,
            self.check
        )
    }
}

impl Serialize for FileNumber {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FileNumber {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}
