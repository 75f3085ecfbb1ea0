use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use caselink_core::FileNumber;
use rand::RngCore;
use rusqlite::{params, Connection, ErrorCode, OptionalExtension};
use sha2::{Digest, Sha256};

use super::{CaseAnnotation, CaseStore, ExchangeRequest, Principal, StoreError, StoredCase, Zone};

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS zones (
    zone_id TEXT PRIMARY KEY,
    name TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS grants (
    zone_id TEXT NOT NULL REFERENCES zones(zone_id),
    reader_zone TEXT NOT NULL REFERENCES zones(zone_id),
    PRIMARY KEY (zone_id, reader_zone)
);
CREATE TABLE IF NOT EXISTS tokens (
    token_sha256 TEXT PRIMARY KEY,
    zone_id TEXT REFERENCES zones(zone_id),
    member TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS cases (
    case_id TEXT PRIMARY KEY,
    zone_id TEXT NOT NULL REFERENCES zones(zone_id),
    category TEXT NOT NULL CHECK (category IN ('cyberfraud', 'sextortion')),
    created_at TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS annotations (
    case_id TEXT NOT NULL REFERENCES cases(case_id),
    address TEXT NOT NULL,
    role TEXT NOT NULL CHECK (role IN ('victim', 'perpetrator')),
    author TEXT NOT NULL,
    created_at TEXT NOT NULL,
    PRIMARY KEY (case_id, address)
);
CREATE TABLE IF NOT EXISTS exchange_requests (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    address TEXT NOT NULL,
    exchange TEXT NOT NULL,
    requested_at TEXT NOT NULL,
    zone_id TEXT NOT NULL REFERENCES zones(zone_id)
);
CREATE INDEX IF NOT EXISTS exchange_requests_address ON exchange_requests(address);
";

/// SQLite-backed store. File databases run in WAL mode.
pub struct SqliteStore {
    conn: Mutex<Connection>,
}

fn backend(e: rusqlite::Error) -> StoreError {
    StoreError::Backend(e.to_string())
}

fn is_constraint(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::ConstraintViolation)
}

fn hash_token(token: &str) -> String {
    hex::encode(Sha256::digest(token.as_bytes()))
}

fn parse_id(text: String) -> rusqlite::Result<FileNumber> {
    text.parse()
        .map_err(|e: caselink_core::ledger::FileNumberError| {
            rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, Box::new(e))
        })
}

fn parse_enum<T: std::str::FromStr<Err = String>>(text: String) -> rusqlite::Result<T> {
    text.parse().map_err(|e: String| {
        rusqlite::Error::FromSqlConversionFailure(0, rusqlite::types::Type::Text, e.into())
    })
}

impl SqliteStore {
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let conn = Connection::open(path).map_err(backend)?;
        conn.pragma_update(None, "journal_mode", "WAL")
            .map_err(backend)?;
        Self::init(conn)
    }

    pub fn open_in_memory() -> Result<Self, StoreError> {
        Self::init(Connection::open_in_memory().map_err(backend)?)
    }

    fn init(conn: Connection) -> Result<Self, StoreError> {
        conn.pragma_update(None, "foreign_keys", "ON")
            .map_err(backend)?;
        conn.execute_batch(SCHEMA).map_err(backend)?;
        Ok(Self {
            conn: Mutex::new(conn),
        })
    }

    fn with<T>(
        &self,
        f: impl FnOnce(&Connection) -> Result<T, StoreError>,
    ) -> Result<T, StoreError> {
        let conn = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        f(&conn)
    }

    /// Column names per table, for schema inspection.
    pub fn schema(&self) -> Result<Vec<(String, Vec<String>)>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare("SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name")
                .map_err(backend)?;
            let tables: Vec<String> = stmt
                .query_map([], |r| r.get(0))
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend)?;
            tables
                .into_iter()
                .map(|t| {
                    let mut stmt = c
                        .prepare("SELECT name FROM pragma_table_info(?1) ORDER BY cid")
                        .map_err(backend)?;
                    let cols = stmt
                        .query_map([&t], |r| r.get(0))
                        .map_err(backend)?
                        .collect::<Result<_, _>>()
                        .map_err(backend)?;
                    Ok((t, cols))
                })
                .collect()
        })
    }
}

impl CaseStore for SqliteStore {
    fn create_zone(&self, zone: &Zone) -> Result<(), StoreError> {
        self.with(|c| {
            let tx = c.unchecked_transaction().map_err(backend)?;
            tx.execute(
                "INSERT INTO zones (zone_id, name) VALUES (?1, ?2)",
                params![zone.zone_id, zone.name],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    StoreError::Conflict(format!("zone {} already exists", zone.zone_id))
                } else {
                    backend(e)
                }
            })?;
            for reader in &zone.readable_by {
                if reader == &zone.zone_id {
                    continue;
                }
                tx.execute(
                    "INSERT OR IGNORE INTO grants (zone_id, reader_zone) VALUES (?1, ?2)",
                    params![zone.zone_id, reader],
                )
                .map_err(|e| {
                    if is_constraint(&e) {
                        StoreError::NotFound(format!("unknown reader zone {reader}"))
                    } else {
                        backend(e)
                    }
                })?;
            }
            tx.commit().map_err(backend)
        })
    }

    fn zone(&self, zone_id: &str) -> Result<Option<Zone>, StoreError> {
        self.with(|c| {
            let name: Option<String> = c
                .query_row(
                    "SELECT name FROM zones WHERE zone_id = ?1",
                    [zone_id],
                    |r| r.get(0),
                )
                .optional()
                .map_err(backend)?;
            let Some(name) = name else { return Ok(None) };
            let mut stmt = c
                .prepare("SELECT reader_zone FROM grants WHERE zone_id = ?1")
                .map_err(backend)?;
            let readable_by = stmt
                .query_map([zone_id], |r| r.get(0))
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend)?;
            Ok(Some(Zone {
                zone_id: zone_id.to_string(),
                name,
                readable_by,
            }))
        })
    }

    fn grant(&self, zone_id: &str, reader: &str) -> Result<(), StoreError> {
        if zone_id == reader {
            return Ok(());
        }
        self.with(|c| {
            c.execute(
                "INSERT OR IGNORE INTO grants (zone_id, reader_zone) VALUES (?1, ?2)",
                params![zone_id, reader],
            )
            .map(|_| ())
            .map_err(|e| {
                if is_constraint(&e) {
                    StoreError::NotFound("unknown zone".into())
                } else {
                    backend(e)
                }
            })
        })
    }

    fn readable_zones(&self, reader: &str) -> Result<BTreeSet<String>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare("SELECT zone_id FROM grants WHERE reader_zone = ?1")
                .map_err(backend)?;
            let mut zones: BTreeSet<String> = stmt
                .query_map([reader], |r| r.get(0))
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend)?;
            zones.insert(reader.to_string());
            Ok(zones)
        })
    }

    fn issue_token(&self, zone_id: Option<&str>, member: &str) -> Result<String, StoreError> {
        let mut bytes = [0u8; 32];
        rand::rng().fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        self.with(|c| {
            c.execute(
                "INSERT INTO tokens (token_sha256, zone_id, member) VALUES (?1, ?2, ?3)",
                params![hash_token(&token), zone_id, member],
            )
            .map_err(|e| {
                if is_constraint(&e) {
                    StoreError::NotFound(format!("unknown zone {}", zone_id.unwrap_or_default()))
                } else {
                    backend(e)
                }
            })
        })?;
        Ok(token)
    }

    fn authenticate(&self, token: &str) -> Result<Option<Principal>, StoreError> {
        self.with(|c| {
            let row: Option<(Option<String>, String)> = c
                .query_row(
                    "SELECT zone_id, member FROM tokens WHERE token_sha256 = ?1",
                    [hash_token(token)],
                    |r| Ok((r.get(0)?, r.get(1)?)),
                )
                .optional()
                .map_err(backend)?;
            Ok(row.map(|(zone, member)| match zone {
                Some(zone_id) => Principal::Member { zone_id, member },
                None => Principal::Admin,
            }))
        })
    }

    fn create_case(&self, case: &StoredCase) -> Result<(), StoreError> {
        self.with(|c| {
            let exists: bool = c
                .query_row(
                    "SELECT EXISTS(SELECT 1 FROM cases WHERE case_id = ?1)",
                    [case.case_id.to_string()],
                    |r| r.get(0),
                )
                .map_err(backend)?;
            if exists {
                return Err(StoreError::Conflict(format!("case {} already exists", case.case_id)));
            }
            c.execute(
                "INSERT INTO cases (case_id, zone_id, category, created_at) VALUES (?1, ?2, ?3, ?4)",
                params![
                    case.case_id.to_string(),
                    case.zone_id,
                    case.category.as_str(),
                    case.created_at
                ],
            )
            .map(|_| ())
            .map_err(backend)
        })
    }

    fn case(&self, case_id: &FileNumber) -> Result<Option<StoredCase>, StoreError> {
        self.with(|c| {
            c.query_row(
                "SELECT case_id, zone_id, category, created_at FROM cases WHERE case_id = ?1",
                [case_id.to_string()],
                row_to_case,
            )
            .optional()
            .map_err(backend)
        })
    }

    fn cases(&self) -> Result<Vec<StoredCase>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare(
                    "SELECT case_id, zone_id, category, created_at FROM cases ORDER BY case_id",
                )
                .map_err(backend)?;
            let rows = stmt
                .query_map([], row_to_case)
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend);
            rows
        })
    }

    fn annotate(&self, a: &CaseAnnotation) -> Result<(), StoreError> {
        self.with(|c| {
            c.execute(
                "INSERT INTO annotations (case_id, address, role, author, created_at) VALUES (?1, ?2, ?3, ?4, ?5)",
                params![a.case_id.to_string(), a.address, a.role.as_str(), a.author, a.created_at],
            )
            .map(|_| ())
            .map_err(|e| {
                if is_constraint(&e) {
                    StoreError::Conflict(format!(
                        "address {} is already annotated in case {}",
                        a.address, a.case_id
                    ))
                } else {
                    backend(e)
                }
            })
        })
    }

    fn annotations(&self, case_id: &FileNumber) -> Result<Vec<CaseAnnotation>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare(
                    "SELECT case_id, address, role, author, created_at FROM annotations
                     WHERE case_id = ?1 ORDER BY rowid",
                )
                .map_err(backend)?;
            let rows = stmt
                .query_map([case_id.to_string()], row_to_annotation)
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend);
            rows
        })
    }

    fn all_annotations(&self) -> Result<Vec<CaseAnnotation>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare(
                    "SELECT case_id, address, role, author, created_at FROM annotations
                     ORDER BY case_id, rowid",
                )
                .map_err(backend)?;
            let rows = stmt
                .query_map([], row_to_annotation)
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend);
            rows
        })
    }

    fn log_request(
        &self,
        address: &str,
        exchange: &str,
        zone_id: &str,
        requested_at: &str,
    ) -> Result<ExchangeRequest, StoreError> {
        self.with(|c| {
            c.execute(
                "INSERT INTO exchange_requests (address, exchange, requested_at, zone_id) VALUES (?1, ?2, ?3, ?4)",
                params![address, exchange, requested_at, zone_id],
            )
            .map_err(backend)?;
            Ok(ExchangeRequest {
                id: c.last_insert_rowid(),
                address: address.to_string(),
                exchange: exchange.to_string(),
                requested_at: requested_at.to_string(),
                zone_id: zone_id.to_string(),
            })
        })
    }

    fn requests(&self, address: &str) -> Result<Vec<ExchangeRequest>, StoreError> {
        self.with(|c| {
            let mut stmt = c
                .prepare(
                    "SELECT id, address, exchange, requested_at, zone_id FROM exchange_requests
                     WHERE address = ?1 ORDER BY id",
                )
                .map_err(backend)?;
            let rows = stmt
                .query_map([address], |r| {
                    Ok(ExchangeRequest {
                        id: r.get(0)?,
                        address: r.get(1)?,
                        exchange: r.get(2)?,
                        requested_at: r.get(3)?,
                        zone_id: r.get(4)?,
                    })
                })
                .map_err(backend)?
                .collect::<Result<_, _>>()
                .map_err(backend);
            rows
        })
    }
}

fn row_to_case(r: &rusqlite::Row<'_>) -> rusqlite::Result<StoredCase> {
    Ok(StoredCase {
        case_id: parse_id(r.get(0)?)?,
        zone_id: r.get(1)?,
        category: parse_enum(r.get(2)?)?,
        created_at: r.get(3)?,
    })
}

fn row_to_annotation(r: &rusqlite::Row<'_>) -> rusqlite::Result<CaseAnnotation> {
    Ok(CaseAnnotation {
        case_id: parse_id(r.get(0)?)?,
        address: r.get(1)?,
        role: parse_enum(r.get(2)?)?,
        author: r.get(3)?,
        created_at: r.get(4)?,
    })
}
