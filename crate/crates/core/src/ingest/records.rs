//! Trade and market records, and their CSV / JSON-lines readers.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::IngestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Yes,
    No,
}

impl FromStr for Side {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Side::Yes),
            "no" => Ok(Side::No),
            other => Err(format!("unknown side {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Yes,
    No,
    Unresolved,
}

impl Outcome {
    pub fn is_resolved(self) -> bool {
        !matches!(self, Outcome::Unresolved)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Yes => "yes",
            Outcome::No => "no",
            Outcome::Unresolved => "unresolved",
        }
    }
}

impl FromStr for Outcome {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "yes" => Ok(Outcome::Yes),
            "no" => Ok(Outcome::No),
            "unresolved" => Ok(Outcome::Unresolved),
            other => Err(format!("unknown outcome {other:?}")),
        }
    }
}

/// One executed trade.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TradeRecord {
    pub market_id: String,
    /// Execution price in cents, 1..=99.
    pub price_cents: u8,
    /// Contracts traded, at least one.
    pub count: u64,
    pub side: Side,
    pub timestamp_ms: i64,
}

impl TradeRecord {
    /// Builds a record from raw text fields, enforcing the value ranges.
    pub fn from_fields(
        market_id: &str,
        price: &str,
        count: &str,
        side: &str,
        timestamp: &str,
    ) -> Result<Self, String> {
        let market_id = market_id.trim();
        if market_id.is_empty() {
            return Err("empty market_id".into());
        }
        let price: i64 = price
            .trim()
            .parse()
            .map_err(|_| format!("price {price:?} is not an integer"))?;
        if !(1..=99).contains(&price) {
            return Err(format!("price {price} outside [1, 99] cents"));
        }
        let count: u64 = count
            .trim()
            .parse()
            .map_err(|_| format!("count {count:?} is not a positive integer"))?;
        if count == 0 {
            return Err("count must be at least 1".into());
        }
        let timestamp_ms: i64 = timestamp
            .trim()
            .parse()
            .map_err(|_| format!("timestamp {timestamp:?} is not integer milliseconds"))?;
        Ok(TradeRecord {
            market_id: market_id.to_string(),
            price_cents: price as u8,
            count,
            side: side.parse()?,
            timestamp_ms,
        })
    }

    pub fn price_fraction(&self) -> f64 {
        f64::from(self.price_cents) / 100.0
    }
}

/// One binary contract.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MarketRecord {
    pub market_id: String,
    pub event_ticker: String,
    pub title: String,
    pub close_time_ms: i64,
    pub outcome: Outcome,
}

impl MarketRecord {
    pub fn from_fields(
        market_id: &str,
        event_ticker: &str,
        title: &str,
        close_time: &str,
        outcome: &str,
    ) -> Result<Self, String> {
        let market_id = market_id.trim();
        if market_id.is_empty() {
            return Err("empty market_id".into());
        }
        let close_time_ms: i64 = close_time
            .trim()
            .parse()
            .map_err(|_| format!("close_time {close_time:?} is not integer milliseconds"))?;
        Ok(MarketRecord {
            market_id: market_id.to_string(),
            event_ticker: event_ticker.trim().to_string(),
            title: title.to_string(),
            close_time_ms,
            outcome: outcome.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(InputFormat::Csv),
            "jsonl" | "ndjson" => Ok(InputFormat::Jsonl),
            other => Err(format!("unknown input format {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    /// 1-based line number in the source (the CSV header is line 1).
    pub line: u64,
    pub message: String,
}

/// Rows rejected while reading or joining, kept for reporting.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ErrorLedger {
    pub entries: Vec<LedgerEntry>,
}

impl ErrorLedger {
    pub fn push(&mut self, line: u64, message: impl Into<String>) {
        self.entries.push(LedgerEntry { line, message: message.into() });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Parsed<R> {
    pub records: Vec<R>,
    pub ledger: ErrorLedger,
    pub rows_seen: u64,
}

/// Malformed rows above this fraction abort the read.
pub const MAX_MALFORMED_FRACTION: f64 = 0.01;

/// Outcome of a streaming read: the ledger and how many data rows were seen.
#[derive(Debug, Clone, Default)]
pub struct StreamSummary {
    pub ledger: ErrorLedger,
    pub rows_seen: u64,
}

fn check_malformed(ledger: ErrorLedger, rows_seen: u64) -> Result<StreamSummary, IngestError> {
    let bad = ledger.len() as u64;
    if rows_seen > 0 && (bad as f64) > MAX_MALFORMED_FRACTION * rows_seen as f64 {
        return Err(IngestError::TooManyMalformed { malformed: bad, rows: rows_seen, ledger });
    }
    Ok(StreamSummary { ledger, rows_seen })
}

fn collect<R>(
    read: impl FnOnce(&mut dyn FnMut(R)) -> Result<StreamSummary, IngestError>,
) -> Result<Parsed<R>, IngestError> {
    let mut records = Vec::new();
    let summary = read(&mut |r| records.push(r))?;
    Ok(Parsed { records, ledger: summary.ledger, rows_seen: summary.rows_seen })
}

fn header_index(headers: &csv::StringRecord, expected: &[&str]) -> Result<Vec<usize>, IngestError> {
    expected
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim() == *name)
                .ok_or_else(|| IngestError::MissingColumn((*name).to_string()))
        })
        .collect()
}

const TRADE_COLUMNS: [&str; 5] = ["market_id", "price_cents", "count", "side", "timestamp_ms"];
const MARKET_COLUMNS: [&str; 5] = ["market_id", "event_ticker", "title", "close_time_ms", "outcome"];

/// Reads trades, preserving row order. Malformed rows go to the ledger.
pub fn parse_trades<R: Read>(reader: R, format: InputFormat) -> Result<Parsed<TradeRecord>, IngestError> {
    collect(|sink| stream_trades(reader, format, sink))
}

/// Streams trades to `sink` one at a time without buffering the file.
pub fn stream_trades<R: Read>(
    reader: R,
    format: InputFormat,
    sink: &mut dyn FnMut(TradeRecord),
) -> Result<StreamSummary, IngestError> {
    match format {
        InputFormat::Csv => parse_csv(reader, &TRADE_COLUMNS, sink, |f| {
            TradeRecord::from_fields(f[0], f[1], f[2], f[3], f[4])
        }),
        InputFormat::Jsonl => parse_jsonl(reader, sink, |v| {
            let get = |k: &str| json_field(v, k);
            TradeRecord::from_fields(
                &get("market_id")?,
                &get("price_cents")?,
                &get("count")?,
                &get("side")?,
                &get("timestamp_ms")?,
            )
        }),
    }
}

/// Reads markets. Duplicate `market_id`s after the first are ledgered.
pub fn parse_markets<R: Read>(reader: R, format: InputFormat) -> Result<Parsed<MarketRecord>, IngestError> {
    let parsed = collect(|sink| match format {
        InputFormat::Csv => parse_csv(reader, &MARKET_COLUMNS, sink, |f| {
            MarketRecord::from_fields(f[0], f[1], f[2], f[3], f[4])
        }),
        InputFormat::Jsonl => parse_jsonl(reader, sink, |v| {
            let get = |k: &str| json_field(v, k);
            MarketRecord::from_fields(
                &get("market_id")?,
                &get("event_ticker")?,
                &get("title")?,
                &get("close_time_ms")?,
                &get("outcome")?,
            )
        }),
    })?;
    Ok(dedupe_markets(parsed))
}

fn dedupe_markets(parsed: Parsed<MarketRecord>) -> Parsed<MarketRecord> {
    let Parsed { records, mut ledger, rows_seen } = parsed;
    let mut seen = HashSet::with_capacity(records.len());
    let mut kept = Vec::with_capacity(records.len());
    for (i, m) in records.into_iter().enumerate() {
        if seen.insert(m.market_id.clone()) {
            kept.push(m);
        } else {
            // line numbers are not retained past parsing; report record ordinal
            ledger.push(i as u64 + 2, format!("duplicate market_id {:?}", m.market_id));
        }
    }
    Parsed { records: kept, ledger, rows_seen }
}

fn parse_csv<R: Read, T>(
    reader: R,
    columns: &[&str; 5],
    sink: &mut dyn FnMut(T),
    build: impl Fn([&str; 5]) -> Result<T, String>,
) -> Result<StreamSummary, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| IngestError::Io(e.to_string()))?.clone();
    let idx = header_index(&headers, columns)?;
    let mut ledger = ErrorLedger::default();
    let mut rows = 0u64;
    let mut row = csv::StringRecord::new();
    loop {
        let line = rdr.position().line() + 1;
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {
                rows += 1;
                let line = row.position().map(|p| p.line()).unwrap_or(line);
                let field = |k: usize| row.get(idx[k]);
                match (field(0), field(1), field(2), field(3), field(4)) {
                    (Some(a), Some(b), Some(c), Some(d), Some(e)) => match build([a, b, c, d, e]) {
                        Ok(r) => sink(r),
                        Err(msg) => ledger.push(line, msg),
                    },
                    _ => ledger.push(line, format!("expected {} fields, found {}", headers.len(), row.len())),
                }
            }
            Err(e) => {
                rows += 1;
                ledger.push(line, e.to_string());
            }
        }
    }
    check_malformed(ledger, rows)
}

fn json_field(v: &serde_json::Value, key: &str) -> Result<String, String> {
    match v.get(key) {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        Some(other) => Err(format!("field {key:?} has unsupported value {other}")),
        None => Err(format!("missing field {key:?}")),
    }
}

fn parse_jsonl<R: Read, T>(
    reader: R,
    sink: &mut dyn FnMut(T),
    build: impl Fn(&serde_json::Value) -> Result<T, String>,
) -> Result<StreamSummary, IngestError> {
    let mut ledger = ErrorLedger::default();
    let mut rows = 0u64;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| IngestError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(v) => match build(&v) {
                Ok(r) => sink(r),
                Err(msg) => ledger.push(line_no, msg),
            },
            Err(e) => ledger.push(line_no, e.to_string()),
        }
    }
    check_malformed(ledger, rows)
}

/// Writes trades in the CSV schema read by [`parse_trades`].
pub fn write_trades_csv<W: Write>(writer: W, trades: &[TradeRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRADE_COLUMNS).map_err(csv_err)?;
    for t in trades {
        let side = match t.side {
            Side::Yes => "yes",
            Side::No => "no",
        };
        w.write_record([
            t.market_id.as_str(),
            &t.price_cents.to_string(),
            &t.count.to_string(),
            side,
            &t.timestamp_ms.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes markets in the CSV schema read by [`parse_markets`].
pub fn write_markets_csv<W: Write>(writer: W, markets: &[MarketRecord]) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MARKET_COLUMNS).map_err(csv_err)?;
    for m in markets {
        w.write_record([
            m.market_id.as_str(),
            &m.event_ticker,
            &m.title,
            &m.close_time_ms.to_string(),
            m.outcome.as_str(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> IngestError {
    IngestError::Io(e.to_string())
}
