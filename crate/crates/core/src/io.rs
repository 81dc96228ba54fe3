//! Reading and writing the workflow files.
//!
//! | file                         | columns                                                                 |
//! |------------------------------|-------------------------------------------------------------------------|
//! | `peers.csv`                  | `id`                                                                    |
//! | `channels.csv`               | `id,peer1,peer2,capacity`                                               |
//! | `endpoints.csv`              | `channel_id,owner_peer,balance,base_fee_msat,prop_fee_ppm,timelock_delta,min_htlc` |
//! | `payments.csv`               | `id,sender,receiver,amount,start_time_ms`                               |
//! | `raw-per-payment-data.csv`   | `id,sender,receiver,amount,start_time_ms,end_time_ms,result,fail_reason,attempts,uncooperative_encountered,route` |
//! | `payments-statistics.json`   | one object per measure, plus batch counts and the echoed configuration  |
//!
//! Integers are unsigned decimal without sign. Writers emit rows in id order
//! with `\n` line endings, so equal inputs give byte-identical files.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    Channel, ChannelEndpoint, ChannelId, EndpointPolicy, FailReason, Network, Payment, PaymentId,
    PaymentResult, PeerId,
};
use crate::stats::{PaymentRecord, SimStatistics, StatsParams};

pub const PEERS_FILE: &str = "peers.csv";
pub const CHANNELS_FILE: &str = "channels.csv";
pub const ENDPOINTS_FILE: &str = "endpoints.csv";
pub const PAYMENTS_FILE: &str = "payments.csv";
pub const RAW_OUTPUT_FILE: &str = "raw-per-payment-data.csv";
pub const STATISTICS_FILE: &str = "payments-statistics.json";

const PEERS_HEADER: &[&str] = &["id"];
const CHANNELS_HEADER: &[&str] = &["id", "peer1", "peer2", "capacity"];
const ENDPOINTS_HEADER: &[&str] = &[
    "channel_id",
    "owner_peer",
    "balance",
    "base_fee_msat",
    "prop_fee_ppm",
    "timelock_delta",
    "min_htlc",
];
const PAYMENTS_HEADER: &[&str] = &["id", "sender", "receiver", "amount", "start_time_ms"];
const RAW_HEADER: &[&str] = &[
    "id",
    "sender",
    "receiver",
    "amount",
    "start_time_ms",
    "end_time_ms",
    "result",
    "fail_reason",
    "attempts",
    "uncooperative_encountered",
    "route",
];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: header is {found:?}, expected {expected:?}")]
    Header {
        file: String,
        found: Vec<String>,
        expected: Vec<String>,
    },
    #[error("{file}:{line}: column `{column}`: {message}")]
    Malformed {
        file: String,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{file}:{line}: {message}")]
    Invalid {
        file: String,
        line: u64,
        message: String,
    },
    #[error("{file}: {message}")]
    Inconsistent { file: String, message: String },
    #[error("{file}: {source}")]
    Json {
        file: String,
        #[source]
        source: serde_json::Error,
    },
}

fn open(path: &Path) -> Result<File, IoError> {
    File::open(path).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| IoError::Io {
            path: path.to_owned(),
            source,
        })
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

/// A data row with its source line, for error reporting.
struct Row {
    line: u64,
    fields: csv::StringRecord,
}

struct Table<'a> {
    file: String,
    header: &'a [&'a str],
    rows: Vec<Row>,
}

impl Table<'_> {
    fn field<'r>(&self, row: &'r Row, col: usize) -> &'r str {
        row.fields.get(col).unwrap_or("")
    }

    fn malformed(&self, row: &Row, col: usize, message: impl Into<String>) -> IoError {
        IoError::Malformed {
            file: self.file.clone(),
            line: row.line,
            column: self.header[col].to_string(),
            message: message.into(),
        }
    }

    fn invalid(&self, row: &Row, message: impl Into<String>) -> IoError {
        IoError::Invalid {
            file: self.file.clone(),
            line: row.line,
            message: message.into(),
        }
    }

    fn uint(&self, row: &Row, col: usize) -> Result<u64, IoError> {
        let raw = self.field(row, col);
        if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
            return Err(self.malformed(row, col, format!("expected an unsigned integer, found {raw:?}")));
        }
        raw.parse()
            .map_err(|_| self.malformed(row, col, format!("integer {raw:?} out of range")))
    }

    fn usize(&self, row: &Row, col: usize) -> Result<usize, IoError> {
        let v = self.uint(row, col)?;
        usize::try_from(v).map_err(|_| self.malformed(row, col, "value out of range"))
    }

    fn u32(&self, row: &Row, col: usize) -> Result<u32, IoError> {
        let v = self.uint(row, col)?;
        u32::try_from(v).map_err(|_| self.malformed(row, col, "value out of range"))
    }
}

fn read_table<'h, R: Read>(reader: R, file: &str, header: &'h [&'h str]) -> Result<Table<'h>, IoError> {
    let csv_err = |source| IoError::Csv {
        file: file.to_string(),
        source,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let found: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if found.iter().map(String::as_str).ne(header.iter().copied()) {
        return Err(IoError::Header {
            file: file.to_string(),
            found,
            expected: header.iter().map(|s| s.to_string()).collect(),
        });
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let fields = rec.map_err(csv_err)?;
        let line = fields.position().map_or(0, |p| p.line());
        rows.push(Row { line, fields });
    }
    Ok(Table {
        file: file.to_string(),
        header,
        rows,
    })
}

fn write_line<W: Write>(w: &mut W, fields: &[String]) -> std::io::Result<()> {
    writeln!(w, "{}", fields.join(","))
}

/// Checks that `ids` (with their rows) are exactly `0..ids.len()`.
fn check_dense(table: &Table<'_>, ids: &[(usize, &Row)], what: &str) -> Result<(), IoError> {
    let mut seen = vec![false; ids.len()];
    for &(id, row) in ids {
        if id >= ids.len() {
            return Err(table.invalid(row, format!("{what} id {id} breaks the dense range 0..{}", ids.len())));
        }
        if std::mem::replace(&mut seen[id], true) {
            return Err(table.invalid(row, format!("duplicate {what} id {id}")));
        }
    }
    Ok(())
}

/// Reads `peers.csv` and returns the number of peers.
pub fn read_peers<R: Read>(reader: R, file: &str) -> Result<usize, IoError> {
    let t = read_table(reader, file, PEERS_HEADER)?;
    let ids = t
        .rows
        .iter()
        .map(|r| Ok((t.usize(r, 0)?, r)))
        .collect::<Result<Vec<_>, IoError>>()?;
    check_dense(&t, &ids, "peer")?;
    Ok(ids.len())
}

struct ChannelRow {
    id: usize,
    peer1: PeerId,
    peer2: PeerId,
    capacity: u64,
    line: u64,
}

fn read_channel_rows<R: Read>(reader: R, file: &str, n_peers: usize) -> Result<Vec<ChannelRow>, IoError> {
    let t = read_table(reader, file, CHANNELS_HEADER)?;
    let mut out = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let id = t.usize(r, 0)?;
        let peer1 = t.usize(r, 1)?;
        let peer2 = t.usize(r, 2)?;
        let capacity = t.uint(r, 3)?;
        for (col, p) in [(1, peer1), (2, peer2)] {
            if p >= n_peers {
                return Err(t.malformed(r, col, format!("unknown peer {p}")));
            }
        }
        if peer1 == peer2 {
            return Err(t.invalid(r, format!("channel {id} connects peer {peer1} to itself")));
        }
        out.push(ChannelRow {
            id,
            peer1: PeerId(peer1),
            peer2: PeerId(peer2),
            capacity,
            line: r.line,
        });
    }
    let ids: Vec<(usize, &Row)> = out.iter().zip(&t.rows).map(|(c, r)| (c.id, r)).collect();
    check_dense(&t, &ids, "channel")?;
    out.sort_by_key(|c| c.id);
    Ok(out)
}

fn read_endpoint_rows<R: Read>(
    reader: R,
    file: &str,
    channels: &[ChannelRow],
) -> Result<Vec<Channel>, IoError> {
    let t = read_table(reader, file, ENDPOINTS_HEADER)?;
    let mut sides: Vec<[Option<ChannelEndpoint>; 2]> = vec![[None, None]; channels.len()];
    for r in &t.rows {
        let cid = t.usize(r, 0)?;
        let owner = t.usize(r, 1)?;
        let ch = channels
            .get(cid)
            .ok_or_else(|| t.malformed(r, 0, format!("unknown channel {cid}")))?;
        let side = if PeerId(owner) == ch.peer1 {
            0
        } else if PeerId(owner) == ch.peer2 {
            1
        } else {
            return Err(t.malformed(r, 1, format!("peer {owner} is not on channel {cid}")));
        };
        let timelock_delta = t.u32(r, 5)?;
        if timelock_delta == 0 {
            return Err(t.malformed(r, 5, "timelock_delta must be at least 1"));
        }
        let endpoint = ChannelEndpoint {
            owner: PeerId(owner),
            balance: t.uint(r, 2)?,
            policy: EndpointPolicy {
                base_fee_msat: t.uint(r, 3)?,
                prop_fee_ppm: t.uint(r, 4)?,
                timelock_delta,
                min_htlc: t.uint(r, 6)?,
            },
        };
        if sides[cid][side].replace(endpoint).is_some() {
            return Err(t.invalid(r, format!("duplicate endpoint for peer {owner} on channel {cid}")));
        }
    }
    channels
        .iter()
        .zip(sides)
        .map(|(row, sides)| {
            let [Some(e1), Some(e2)] = sides else {
                return Err(IoError::Inconsistent {
                    file: t.file.clone(),
                    message: format!("channel {} needs exactly two endpoint rows", row.id),
                });
            };
            let sum = e1.balance as u128 + e2.balance as u128;
            if sum != row.capacity as u128 {
                return Err(IoError::Inconsistent {
                    file: t.file.clone(),
                    message: format!(
                        "channel {} (channels line {}): endpoint balances sum to {sum}, capacity is {}",
                        row.id, row.line, row.capacity
                    ),
                });
            }
            Ok(Channel::new(ChannelId(row.id), e1, e2))
        })
        .collect()
}

/// Loads `peers.csv`, `channels.csv` and `endpoints.csv` from `dir`.
pub fn read_network(dir: &Path) -> Result<Network, IoError> {
    let peers_path = dir.join(PEERS_FILE);
    let channels_path = dir.join(CHANNELS_FILE);
    let endpoints_path = dir.join(ENDPOINTS_FILE);
    let n_peers = read_peers(open(&peers_path)?, &file_label(&peers_path))?;
    let rows = read_channel_rows(open(&channels_path)?, &file_label(&channels_path), n_peers)?;
    let channels = read_endpoint_rows(open(&endpoints_path)?, &file_label(&endpoints_path), &rows)?;
    Network::new(n_peers, channels).map_err(|e| IoError::Inconsistent {
        file: file_label(&channels_path),
        message: e.to_string(),
    })
}

pub fn write_network(dir: &Path, network: &Network) -> Result<(), IoError> {
    let io_err = |path: &Path| {
        let path = path.to_owned();
        move |source| IoError::Io { path, source }
    };

    let path = dir.join(PEERS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "{}", PEERS_HEADER.join(","))?;
        for p in &network.peers {
            writeln!(w, "{}", p.id)?;
        }
        w.flush()
    })()
    .map_err(io_err(&path))?;

    let path = dir.join(CHANNELS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "{}", CHANNELS_HEADER.join(","))?;
        for c in &network.channels {
            writeln!(w, "{},{},{},{}", c.id, c.peer1, c.peer2, c.capacity)?;
        }
        w.flush()
    })()
    .map_err(io_err(&path))?;

    let path = dir.join(ENDPOINTS_FILE);
    let mut w = create(&path)?;
    (|| {
        writeln!(w, "{}", ENDPOINTS_HEADER.join(","))?;
        for c in &network.channels {
            for e in [&c.endpoint1, &c.endpoint2] {
                let p = &e.policy;
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    c.id, e.owner, e.balance, p.base_fee_msat, p.prop_fee_ppm, p.timelock_delta, p.min_htlc
                )?;
            }
        }
        w.flush()
    })()
    .map_err(io_err(&path))
}

/// Reads a payment script, validated against `n_peers` and sorted by `(start_time_ms, id)`.
pub fn read_payments_from<R: Read>(reader: R, file: &str, n_peers: usize) -> Result<Vec<Payment>, IoError> {
    let t = read_table(reader, file, PAYMENTS_HEADER)?;
    let mut seen = HashSet::new();
    let mut payments = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let id = t.usize(r, 0)?;
        let sender = t.usize(r, 1)?;
        let receiver = t.usize(r, 2)?;
        let amount = t.uint(r, 3)?;
        let start = t.uint(r, 4)?;
        if !seen.insert(id) {
            return Err(t.invalid(r, format!("duplicate payment id {id}")));
        }
        for (col, p) in [(1, sender), (2, receiver)] {
            if p >= n_peers {
                return Err(t.malformed(r, col, format!("unknown peer {p}")));
            }
        }
        if sender == receiver {
            return Err(t.invalid(r, "sender equals receiver"));
        }
        if amount == 0 {
            return Err(t.malformed(r, 3, "amount must be positive"));
        }
        payments.push(Payment::new(PaymentId(id), PeerId(sender), PeerId(receiver), amount, start));
    }
    payments.sort_by_key(|p| (p.start_time, p.id));
    Ok(payments)
}

pub fn read_payments(path: &Path, n_peers: usize) -> Result<Vec<Payment>, IoError> {
    read_payments_from(open(path)?, &file_label(path), n_peers)
}

pub fn write_payments_to<W: Write>(mut w: W, payments: &[Payment]) -> std::io::Result<()> {
    let mut sorted: Vec<&Payment> = payments.iter().collect();
    sorted.sort_by_key(|p| p.id);
    writeln!(w, "{}", PAYMENTS_HEADER.join(","))?;
    for p in sorted {
        writeln!(w, "{},{},{},{},{}", p.id, p.sender, p.receiver, p.amount, p.start_time)?;
    }
    w.flush()
}

pub fn write_payments(path: &Path, payments: &[Payment]) -> Result<(), IoError> {
    write_payments_to(create(path)?, payments).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

fn route_field(route: &[ChannelId]) -> String {
    route
        .iter()
        .map(ChannelId::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

pub fn write_records_to<W: Write>(mut w: W, records: &[PaymentRecord]) -> std::io::Result<()> {
    let mut sorted: Vec<&PaymentRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.id);
    write_line(&mut w, &RAW_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    for r in sorted {
        write_line(
            &mut w,
            &[
                r.id.to_string(),
                r.sender.to_string(),
                r.receiver.to_string(),
                r.amount.to_string(),
                r.start_time_ms.to_string(),
                r.end_time_ms.map(|t| t.to_string()).unwrap_or_default(),
                r.result.as_str().to_string(),
                r.fail_reason.as_str().to_string(),
                r.attempts.to_string(),
                r.uncooperative_encountered.to_string(),
                route_field(&r.route),
            ],
        )?;
    }
    w.flush()
}

pub fn write_records(path: &Path, records: &[PaymentRecord]) -> Result<(), IoError> {
    write_records_to(create(path)?, records).map_err(|source| IoError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads raw per-payment output, sorted by `(start_time_ms, id)`.
pub fn read_records_from<R: Read>(reader: R, file: &str) -> Result<Vec<PaymentRecord>, IoError> {
    let t = read_table(reader, file, RAW_HEADER)?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(t.rows.len());
    for r in &t.rows {
        let id = t.usize(r, 0)?;
        if !seen.insert(id) {
            return Err(t.invalid(r, format!("duplicate payment id {id}")));
        }
        let end_time_ms = match t.field(r, 5) {
            "" => None,
            _ => Some(t.uint(r, 5)?),
        };
        let result = PaymentResult::parse(t.field(r, 6))
            .ok_or_else(|| t.malformed(r, 6, format!("unknown result {:?}", t.field(r, 6))))?;
        let fail_reason = FailReason::parse(t.field(r, 7))
            .ok_or_else(|| t.malformed(r, 7, format!("unknown fail reason {:?}", t.field(r, 7))))?;
        let uncooperative_encountered = match t.field(r, 9) {
            "true" => true,
            "false" => false,
            other => return Err(t.malformed(r, 9, format!("expected true or false, found {other:?}"))),
        };
        let route = match t.field(r, 10) {
            "" => Vec::new(),
            s => s
                .split('-')
                .map(|part| {
                    if part.is_empty() || !part.bytes().all(|b| b.is_ascii_digit()) {
                        return Err(t.malformed(r, 10, format!("bad channel id {part:?}")));
                    }
                    part.parse()
                        .map(ChannelId)
                        .map_err(|_| t.malformed(r, 10, "channel id out of range"))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        records.push(PaymentRecord {
            id: PaymentId(id),
            sender: PeerId(t.usize(r, 1)?),
            receiver: PeerId(t.usize(r, 2)?),
            amount: t.uint(r, 3)?,
            start_time_ms: t.uint(r, 4)?,
            end_time_ms,
            result,
            fail_reason,
            attempts: t.u32(r, 8)?,
            uncooperative_encountered,
            route,
        });
    }
    records.sort_by_key(|r| (r.start_time_ms, r.id));
    Ok(records)
}

pub fn read_records(path: &Path) -> Result<Vec<PaymentRecord>, IoError> {
    read_records_from(open(path)?, &file_label(path))
}

/// Contents of `payments-statistics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticsDocument {
    #[serde(flatten)]
    pub statistics: SimStatistics,
    pub n_batches: usize,
    pub warmup_batches: usize,
    /// Every input parameter of the run, for provenance.
    pub config: BTreeMap<String, serde_json::Value>,
}

impl StatisticsDocument {
    pub fn new(statistics: SimStatistics, params: &StatsParams, config: BTreeMap<String, serde_json::Value>) -> Self {
        Self {
            statistics,
            n_batches: params.n_batches,
            warmup_batches: params.warmup_batches,
            config,
        }
    }
}

pub fn write_statistics(path: &Path, doc: &StatisticsDocument) -> Result<(), IoError> {
    let label = file_label(path);
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, doc).map_err(|source| IoError::Json {
        file: label.clone(),
        source,
    })?;
    writeln!(w)
        .and_then(|_| w.flush())
        .map_err(|source| IoError::Io {
            path: path.to_owned(),
            source,
        })
}

pub fn read_statistics(path: &Path) -> Result<StatisticsDocument, IoError> {
    serde_json::from_reader(open(path)?).map_err(|source| IoError::Json {
        file: file_label(path),
        source,
    })
}
