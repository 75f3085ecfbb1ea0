//! Transactions and their JSONL / CSV export formats.

use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Synthetic input address carried by coinbase transactions.
pub const COINBASE: &str = "COINBASE";

/// One valued transaction input or output.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(String, u64)", into = "(String, u64)")]
pub struct TxIo {
    pub address: String,
    pub value: u64,
}

impl TxIo {
    pub fn new(address: impl Into<String>, value: u64) -> Self {
        Self {
            address: address.into(),
            value,
        }
    }
}

impl From<(String, u64)> for TxIo {
    fn from((address, value): (String, u64)) -> Self {
        Self { address, value }
    }
}

impl From<TxIo> for (String, u64) {
    fn from(io: TxIo) -> Self {
        (io.address, io.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub tx_id: String,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub inputs: Vec<TxIo>,
    pub outputs: Vec<TxIo>,
}

impl Transaction {
    pub fn is_coinbase(&self) -> bool {
        matches!(self.inputs.as_slice(), [only] if only.address == COINBASE)
    }

    pub fn input_value(&self) -> u64 {
        self.inputs.iter().map(|io| io.value).sum()
    }

    pub fn output_value(&self) -> u64 {
        self.outputs.iter().map(|io| io.value).sum()
    }

    /// Distinct input addresses in first-appearance order.
    pub fn distinct_inputs(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.inputs
            .iter()
            .map(|io| io.address.as_str())
            .filter(|a| seen.insert(*a))
            .collect()
    }

    pub fn mentions(&self, address: &str) -> bool {
        self.inputs
            .iter()
            .chain(&self.outputs)
            .any(|io| io.address == address)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxFormat {
    Jsonl,
    Csv,
}

impl FromStr for TxFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(format!("unknown transaction format {other:?}")),
        }
    }
}

#[derive(Deserialize)]
struct RawTx {
    tx_id: String,
    timestamp: i64,
    inputs: Vec<(String, i64)>,
    outputs: Vec<(String, i64)>,
}

fn checked_ios(line: usize, raw: Vec<(String, i64)>, side: &str) -> Result<Vec<TxIo>, IngestError> {
    if raw.is_empty() {
        return Err(IngestError::Malformed {
            line,
            reason: format!("{side} must not be empty"),
        });
    }
    raw.into_iter()
        .map(|(address, value)| {
            if value <= 0 {
                Err(IngestError::NonPositiveValue {
                    line,
                    address,
                    value,
                })
            } else {
                Ok(TxIo::new(address, value as u64))
            }
        })
        .collect()
}

/// Parses a transaction export. Record order is preserved.
pub fn parse_transactions<R: BufRead>(
    source: R,
    format: TxFormat,
) -> Result<Vec<Transaction>, IngestError> {
    let txs = match format {
        TxFormat::Jsonl => parse_jsonl(source)?,
        TxFormat::Csv => parse_csv(source)?,
    };
    Ok(txs)
}

fn parse_jsonl<R: BufRead>(source: R) -> Result<Vec<Transaction>, IngestError> {
    let mut seen = HashSet::new();
    let mut txs = Vec::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawTx = serde_json::from_str(&line).map_err(|e| IngestError::Malformed {
            line: line_no,
            reason: e.to_string(),
        })?;
        if !seen.insert(raw.tx_id.clone()) {
            return Err(IngestError::DuplicateTx {
                line: line_no,
                tx_id: raw.tx_id,
            });
        }
        txs.push(Transaction {
            inputs: checked_ios(line_no, raw.inputs, "inputs")?,
            outputs: checked_ios(line_no, raw.outputs, "outputs")?,
            tx_id: raw.tx_id,
            timestamp: raw.timestamp,
        });
    }
    Ok(txs)
}

#[derive(Deserialize)]
struct CsvRow {
    tx_id: String,
    timestamp: i64,
    side: String,
    address: String,
    value: i64,
}

struct Pending {
    line: usize,
    tx_id: String,
    timestamp: i64,
    inputs: Vec<(String, i64)>,
    outputs: Vec<(String, i64)>,
}

impl Pending {
    fn finish(self) -> Result<Transaction, IngestError> {
        Ok(Transaction {
            inputs: checked_ios(self.line, self.inputs, "inputs")?,
            outputs: checked_ios(self.line, self.outputs, "outputs")?,
            tx_id: self.tx_id,
            timestamp: self.timestamp,
        })
    }
}

/// CSV layout: `tx_id,timestamp,side,address,value`, one row per input
/// (`side=in`) or output (`side=out`). Rows of a transaction are contiguous.
fn parse_csv<R: BufRead>(source: R) -> Result<Vec<Transaction>, IngestError> {
    let mut reader = csv::Reader::from_reader(source);
    let mut seen = HashSet::new();
    let mut txs = Vec::new();
    let mut pending: Option<Pending> = None;

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
        let row: CsvRow =
            record
                .deserialize(Some(&headers))
                .map_err(|e| IngestError::Malformed {
                    line,
                    reason: e.to_string(),
                })?;
        let continues = pending.as_ref().is_some_and(|p| p.tx_id == row.tx_id);
        if !continues {
            if let Some(done) = pending.take() {
                txs.push(done.finish()?);
            }
            if !seen.insert(row.tx_id.clone()) {
                return Err(IngestError::DuplicateTx {
                    line,
                    tx_id: row.tx_id,
                });
            }
            pending = Some(Pending {
                line,
                tx_id: row.tx_id.clone(),
                timestamp: row.timestamp,
                inputs: Vec::new(),
                outputs: Vec::new(),
            });
        }
        let current = pending.as_mut().expect("pending transaction");
        if current.timestamp != row.timestamp {
            return Err(IngestError::Malformed {
                line,
                reason: format!("timestamp changes within transaction {:?}", row.tx_id),
            });
        }
        match row.side.as_str() {
            "in" => current.inputs.push((row.address, row.value)),
            "out" => current.outputs.push((row.address, row.value)),
            other => {
                return Err(IngestError::Malformed {
                    line,
                    reason: format!("side must be in or out, found {other:?}"),
                })
            }
        }
    }
    if let Some(done) = pending {
        txs.push(done.finish()?);
    }
    Ok(txs)
}

pub fn write_transactions<W: Write>(
    txs: &[Transaction],
    format: TxFormat,
    mut out: W,
) -> std::io::Result<()> {
    match format {
        TxFormat::Jsonl => {
            for tx in txs {
                serde_json::to_writer(&mut out, tx)?;
                out.write_all(b"\n")?;
            }
        }
        TxFormat::Csv => {
            let mut writer = csv::Writer::from_writer(out);
            writer.write_record(["tx_id", "timestamp", "side", "address", "value"])?;
            for tx in txs {
                let ts = tx.timestamp.to_string();
                let rows = tx
                    .inputs
                    .iter()
                    .map(|io| ("in", io))
                    .chain(tx.outputs.iter().map(|io| ("out", io)));
                for (side, io) in rows {
                    writer.write_record([
                        tx.tx_id.as_str(),
                        ts.as_str(),
                        side,
                        io.address.as_str(),
                        io.value.to_string().as_str(),
                    ])?;
                }
            }
            writer.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(text: &str, format: TxFormat) -> Result<Vec<Transaction>, IngestError> {
        parse_transactions(text.as_bytes(), format)
    }

    #[test]
    fn empty_stream_is_empty() {
        assert!(parse("", TxFormat::Jsonl).unwrap().is_empty());
        assert!(parse("tx_id,timestamp,side,address,value\n", TxFormat::Csv)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn single_jsonl_record() {
        let txs = parse(
            r#"{"tx_id":"t1","timestamp":100,"inputs":[["a",50]],"outputs":[["b",50]]}"#,
            TxFormat::Jsonl,
        )
        .unwrap();
        assert_eq!(txs.len(), 1);
        assert_eq!(txs[0].inputs, vec![TxIo::new("a", 50)]);
        assert_eq!(txs[0].outputs, vec![TxIo::new("b", 50)]);
        assert_eq!(txs[0].timestamp, 100);
    }

    #[test]
    fn reports_line_numbers() {
        let text = concat!(
            r#"{"tx_id":"t1","timestamp":1,"inputs":[["a",5]],"outputs":[["b",5]]}"#,
            "\n",
            r#"{"tx_id":"t2","timestamp":1,"inputs":[["a",5]],"outputs":[["b",0]]}"#,
            "\n"
        );
        match parse(text, TxFormat::Jsonl) {
            Err(IngestError::NonPositiveValue { line, value, .. }) => {
                assert_eq!((line, value), (2, 0))
            }
            other => panic!("unexpected {other:?}"),
        }

        let dup = concat!(
            r#"{"tx_id":"t1","timestamp":1,"inputs":[["a",5]],"outputs":[["b",5]]}"#,
            "\n",
            r#"{"tx_id":"t1","timestamp":1,"inputs":[["a",5]],"outputs":[["b",5]]}"#,
        );
        assert!(matches!(
            parse(dup, TxFormat::Jsonl),
            Err(IngestError::DuplicateTx { line: 2, .. })
        ));

        assert!(matches!(
            parse("{not json}", TxFormat::Jsonl),
            Err(IngestError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse(
                r#"{"tx_id":"t","timestamp":1,"inputs":[],"outputs":[["b",5]]}"#,
                TxFormat::Jsonl
            ),
            Err(IngestError::Malformed { line: 1, .. })
        ));
        assert!(matches!(
            parse(
                r#"{"tx_id":"t","timestamp":1,"inputs":[["a",-3]],"outputs":[["b",5]]}"#,
                TxFormat::Jsonl
            ),
            Err(IngestError::NonPositiveValue { value: -3, .. })
        ));
    }

    #[test]
    fn csv_rows_group_into_transactions() {
        let text = "tx_id,timestamp,side,address,value\n\
                    t1,10,in,a,7\n\
                    t1,10,in,b,3\n\
                    t1,10,out,c,9\n\
                    t2,11,in,c,9\n\
                    t2,11,out,d,8\n";
        let txs = parse(text, TxFormat::Csv).unwrap();
        assert_eq!(txs.len(), 2);
        assert_eq!(txs[0].distinct_inputs(), vec!["a", "b"]);
        assert_eq!(txs[1].outputs, vec![TxIo::new("d", 8)]);

        let split = "tx_id,timestamp,side,address,value\n\
                     t1,10,in,a,7\nt1,10,out,c,7\nt2,10,in,a,1\nt2,10,out,c,1\nt1,10,in,x,1\n";
        assert!(matches!(
            parse(split, TxFormat::Csv),
            Err(IngestError::DuplicateTx { .. })
        ));
        let no_outputs = "tx_id,timestamp,side,address,value\nt1,10,in,a,7\n";
        assert!(matches!(
            parse(no_outputs, TxFormat::Csv),
            Err(IngestError::Malformed { .. })
        ));
        let bad_side = "tx_id,timestamp,side,address,value\nt1,10,sideways,a,7\n";
        assert!(matches!(
            parse(bad_side, TxFormat::Csv),
            Err(IngestError::Malformed { .. })
        ));
    }

    #[test]
    fn coinbase_detection() {
        let tx = Transaction {
            tx_id: "cb".into(),
            timestamp: 0,
            inputs: vec![TxIo::new(COINBASE, 1)],
            outputs: vec![TxIo::new("m", 1)],
        };
        assert!(tx.is_coinbase());
    }

    fn arb_io() -> impl Strategy<Value = TxIo> {
        ("[a-z]{1,6}", 1u64..1_000_000).prop_map(|(a, v)| TxIo::new(a, v))
    }

    fn arb_txs() -> impl Strategy<Value = Vec<Transaction>> {
        prop::collection::vec(
            (
                any::<i32>(),
                prop::collection::vec(arb_io(), 1..4),
                prop::collection::vec(arb_io(), 1..4),
            ),
            0..12,
        )
        .prop_map(|rows| {
            rows.into_iter()
                .enumerate()
                .map(|(i, (ts, inputs, outputs))| Transaction {
                    tx_id: format!("tx{i}"),
                    timestamp: ts as i64,
                    inputs,
                    outputs,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn formats_round_trip(txs in arb_txs()) {
            for format in [TxFormat::Jsonl, TxFormat::Csv] {
                let mut buf = Vec::new();
                write_transactions(&txs, format, &mut buf).unwrap();
                let back = parse_transactions(buf.as_slice(), format).unwrap();
                prop_assert_eq!(&back, &txs);
            }
        }
    }
}
