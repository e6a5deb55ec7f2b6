//! Relational metadata store. One SQLite file holds everything extracted from
//! a run — captures, transactions, handshakes, keyword hits, evidence — and a
//! canonical tab-separated dump makes runs comparable byte-for-byte. All row
//! identifiers derive from capture content and per-capture ordering, never
//! from insertion order, so any worker schedule produces the same store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rusqlite::{params, Connection, OptionalExtension};
use thiserror::Error;

use crate::config::EventCategory;
use crate::detector::{EvidenceKind, HitLocation};
use crate::tls::TlsVersion;

pub const SCHEMA_VERSION: i64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store not found at {0}")]
    Missing(PathBuf),
    #[error("store schema version {found}, this tool needs {SCHEMA_VERSION}; migrate or re-extract")]
    VersionMismatch { found: i64 },
    #[error("unknown canned query {0:?}")]
    UnknownQuery(String),
    #[error("database error: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Read,
    Write,
}

// ---------------------------------------------------------------------------
// Row types

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureRow {
    pub capture_id: String,
    pub dataset: String,
    pub region: String,
    pub device: String,
    pub experiment: String,
    pub event_category: EventCategory,
    pub file_size: u64,
    pub frame_count: u64,
    pub truncated: bool,
    /// Capture-level decode failure; rows below may be partial or absent.
    pub error: Option<String>,
    pub txn_count: u64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxnRow {
    pub txn_id: String,
    pub capture_id: String,
    pub flow: String,
    pub transport: String,
    pub method: Option<String>,
    pub uri: Option<String>,
    pub status: Option<u16>,
    pub request_object: Option<String>,
    pub request_len: Option<u64>,
    pub response_object: Option<String>,
    pub response_len: Option<u64>,
    pub content_type: Option<String>,
    pub flags: String,
    pub ts: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandshakeRow {
    pub hs_id: String,
    pub capture_id: String,
    pub flow: String,
    pub kind: String,
    pub legacy_version: TlsVersion,
    pub effective_version: TlsVersion,
    pub server_name: Option<String>,
    pub incomplete: bool,
    pub ts: Option<i64>,
    /// Offered (client) or selected (server) suites in wire order.
    pub suites: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HitRow {
    pub txn_id: String,
    pub keyword: String,
    pub location: HitLocation,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvidenceRow {
    pub evidence_id: String,
    pub capture_id: String,
    pub txn_id: String,
    pub device: String,
    pub kind: EvidenceKind,
    pub detail: String,
    pub transport_plaintext: bool,
}

/// Everything extracted from one capture, committed atomically.
#[derive(Debug, Clone, Default)]
pub struct CaptureBundle {
    pub capture: Option<CaptureRow>,
    pub transactions: Vec<TxnRow>,
    pub handshakes: Vec<HandshakeRow>,
    pub hits: Vec<HitRow>,
    pub evidence: Vec<EvidenceRow>,
}

pub const TABLES: [&str; 7] = [
    "captures",
    "transactions",
    "handshakes",
    "handshake_suites",
    "keyword_hits",
    "evidence",
    "run_info",
];

const SCHEMA: &str = "
CREATE TABLE IF NOT EXISTS captures (
    capture_id     TEXT PRIMARY KEY,
    dataset        TEXT NOT NULL,
    region         TEXT NOT NULL,
    device         TEXT NOT NULL,
    experiment     TEXT NOT NULL,
    event_category TEXT NOT NULL,
    file_size      INTEGER NOT NULL,
    frame_count    INTEGER NOT NULL,
    truncated      INTEGER NOT NULL,
    error          TEXT,
    txn_count      INTEGER NOT NULL,
    flagged        INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS transactions (
    txn_id          TEXT PRIMARY KEY,
    capture_id      TEXT NOT NULL REFERENCES captures(capture_id),
    flow            TEXT NOT NULL,
    transport       TEXT NOT NULL,
    method          TEXT,
    uri             TEXT,
    status          INTEGER,
    request_object  TEXT,
    request_len     INTEGER,
    response_object TEXT,
    response_len    INTEGER,
    content_type    TEXT,
    flags           TEXT NOT NULL,
    ts              INTEGER
);
CREATE TABLE IF NOT EXISTS handshakes (
    hs_id             TEXT PRIMARY KEY,
    capture_id        TEXT NOT NULL REFERENCES captures(capture_id),
    flow              TEXT NOT NULL,
    kind              TEXT NOT NULL,
    legacy_version    TEXT NOT NULL,
    effective_version TEXT NOT NULL,
    server_name       TEXT,
    incomplete        INTEGER NOT NULL,
    ts                INTEGER
);
CREATE TABLE IF NOT EXISTS handshake_suites (
    hs_id      TEXT NOT NULL REFERENCES handshakes(hs_id),
    position   INTEGER NOT NULL,
    code_point INTEGER NOT NULL,
    PRIMARY KEY (hs_id, position)
);
CREATE TABLE IF NOT EXISTS keyword_hits (
    txn_id   TEXT NOT NULL REFERENCES transactions(txn_id),
    keyword  TEXT NOT NULL,
    location TEXT NOT NULL,
    count    INTEGER NOT NULL,
    PRIMARY KEY (txn_id, keyword, location)
);
CREATE TABLE IF NOT EXISTS evidence (
    evidence_id         TEXT PRIMARY KEY,
    capture_id          TEXT NOT NULL REFERENCES captures(capture_id),
    txn_id              TEXT NOT NULL,
    device              TEXT NOT NULL,
    kind                TEXT NOT NULL,
    detail              TEXT NOT NULL,
    transport_plaintext INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS run_info (
    key   TEXT PRIMARY KEY,
    value TEXT NOT NULL
);
";

pub struct Store {
    conn: Connection,
}

impl Store {
    /// Opens (and in write mode, creates) a store. A version stamp protects
    /// against silently reading a file written by an incompatible tool.
    pub fn open(path: &Path, mode: Mode) -> Result<Store, StoreError> {
        if mode == Mode::Read && !path.exists() {
            return Err(StoreError::Missing(path.to_path_buf()));
        }
        let conn = Connection::open(path)?;
        conn.pragma_update(None, "foreign_keys", true)?;
        let found: i64 = conn.query_row("PRAGMA user_version", [], |r| r.get(0))?;
        match mode {
            Mode::Read => {
                if found != SCHEMA_VERSION {
                    return Err(StoreError::VersionMismatch { found });
                }
            }
            Mode::Write => {
                if found == 0 {
                    conn.execute_batch(SCHEMA)?;
                    conn.pragma_update(None, "user_version", SCHEMA_VERSION)?;
                } else if found != SCHEMA_VERSION {
                    return Err(StoreError::VersionMismatch { found });
                }
            }
        }
        Ok(Store { conn })
    }

    /// In-memory store for tests.
    pub fn open_memory() -> Result<Store, StoreError> {
        let conn = Connection::open_in_memory()?;
        conn.pragma_update(None, "foreign_keys", true)?;
        conn.execute_batch(SCHEMA)?;
        conn.pragma_update(None, "user_version", SCHEMA_VERSION)?;
        Ok(Store { conn })
    }

    pub fn set_run_info(&mut self, key: &str, value: &str) -> Result<(), StoreError> {
        self.conn.execute(
            "INSERT INTO run_info (key, value) VALUES (?1, ?2)
             ON CONFLICT(key) DO UPDATE SET value = excluded.value",
            params![key, value],
        )?;
        Ok(())
    }

    pub fn run_info(&self) -> Result<BTreeMap<String, String>, StoreError> {
        let mut stmt = self.conn.prepare("SELECT key, value FROM run_info ORDER BY key")?;
        let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(0)?, r.get::<_, String>(1)?)))?;
        let mut out = BTreeMap::new();
        for row in rows {
            let (k, v) = row?;
            out.insert(k, v);
        }
        Ok(out)
    }

    /// Replaces every row belonging to the bundle's capture, atomically.
    /// Committing the same bundle twice is a no-op; commit order across
    /// captures never affects final content.
    pub fn commit_capture(&mut self, bundle: &CaptureBundle) -> Result<(), StoreError> {
        let Some(cap) = &bundle.capture else { return Ok(()) };
        let tx = self.conn.transaction()?;
        tx.execute(
            "DELETE FROM handshake_suites WHERE hs_id IN
             (SELECT hs_id FROM handshakes WHERE capture_id = ?1)",
            params![cap.capture_id],
        )?;
        tx.execute(
            "DELETE FROM keyword_hits WHERE txn_id IN
             (SELECT txn_id FROM transactions WHERE capture_id = ?1)",
            params![cap.capture_id],
        )?;
        for table in ["evidence", "handshakes", "transactions", "captures"] {
            tx.execute(
                &format!("DELETE FROM {table} WHERE capture_id = ?1"),
                params![cap.capture_id],
            )?;
        }
        tx.execute(
            "INSERT INTO captures (capture_id, dataset, region, device, experiment,
                 event_category, file_size, frame_count, truncated, error, txn_count, flagged)
             VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9,?10,?11,?12)",
            params![
                cap.capture_id,
                cap.dataset,
                cap.region,
                cap.device,
                cap.experiment,
                cap.event_category.as_str(),
                cap.file_size,
                cap.frame_count,
                cap.truncated,
                cap.error,
                cap.txn_count,
                cap.flagged,
            ],
        )?;
        for t in &bundle.transactions {
            tx.execute(
                "INSERT INTO transactions (txn_id, capture_id, flow, transport, method, uri,
                     status, request_object, request_len, response_object, response_len,
                     content_type, flags, ts)
                 VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9,?10,?11,?12,?13,?14)",
                params![
                    t.txn_id,
                    t.capture_id,
                    t.flow,
                    t.transport,
                    t.method,
                    t.uri,
                    t.status,
                    t.request_object,
                    t.request_len,
                    t.response_object,
                    t.response_len,
                    t.content_type,
                    t.flags,
                    t.ts,
                ],
            )?;
        }
        for h in &bundle.handshakes {
            tx.execute(
                "INSERT INTO handshakes (hs_id, capture_id, flow, kind, legacy_version,
                     effective_version, server_name, incomplete, ts)
                 VALUES (?1,?2,?3,?4,?5,?6,?7,?8,?9)",
                params![
                    h.hs_id,
                    h.capture_id,
                    h.flow,
                    h.kind,
                    h.legacy_version.as_str(),
                    h.effective_version.as_str(),
                    h.server_name,
                    h.incomplete,
                    h.ts,
                ],
            )?;
            for (pos, cp) in h.suites.iter().enumerate() {
                tx.execute(
                    "INSERT INTO handshake_suites (hs_id, position, code_point) VALUES (?1,?2,?3)",
                    params![h.hs_id, pos as i64, *cp],
                )?;
            }
        }
        for hit in &bundle.hits {
            tx.execute(
                "INSERT INTO keyword_hits (txn_id, keyword, location, count) VALUES (?1,?2,?3,?4)",
                params![hit.txn_id, hit.keyword, hit.location.as_str(), hit.count],
            )?;
        }
        for ev in &bundle.evidence {
            tx.execute(
                "INSERT INTO evidence (evidence_id, capture_id, txn_id, device, kind, detail,
                     transport_plaintext)
                 VALUES (?1,?2,?3,?4,?5,?6,?7)",
                params![
                    ev.evidence_id,
                    ev.capture_id,
                    ev.txn_id,
                    ev.device,
                    ev.kind.as_str(),
                    ev.detail,
                    ev.transport_plaintext,
                ],
            )?;
        }
        tx.commit()?;
        Ok(())
    }

    // -- typed loaders ------------------------------------------------------

    pub fn captures(&self) -> Result<Vec<CaptureRow>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT capture_id, dataset, region, device, experiment, event_category,
                    file_size, frame_count, truncated, error, txn_count, flagged
             FROM captures ORDER BY capture_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok(CaptureRow {
                capture_id: r.get(0)?,
                dataset: r.get(1)?,
                region: r.get(2)?,
                device: r.get(3)?,
                experiment: r.get(4)?,
                event_category: EventCategory::parse(&r.get::<_, String>(5)?)
                    .unwrap_or(EventCategory::Other),
                file_size: r.get::<_, i64>(6)? as u64,
                frame_count: r.get::<_, i64>(7)? as u64,
                truncated: r.get(8)?,
                error: r.get(9)?,
                txn_count: r.get::<_, i64>(10)? as u64,
                flagged: r.get(11)?,
            })
        })?;
        rows.collect::<Result<Vec<_>, _>>().map_err(StoreError::from)
    }

    pub fn transactions(&self) -> Result<Vec<TxnRow>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT txn_id, capture_id, flow, transport, method, uri, status,
                    request_object, request_len, response_object, response_len,
                    content_type, flags, ts
             FROM transactions ORDER BY txn_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok(TxnRow {
                txn_id: r.get(0)?,
                capture_id: r.get(1)?,
                flow: r.get(2)?,
                transport: r.get(3)?,
                method: r.get(4)?,
                uri: r.get(5)?,
                status: r.get::<_, Option<i64>>(6)?.map(|v| v as u16),
                request_object: r.get(7)?,
                request_len: r.get::<_, Option<i64>>(8)?.map(|v| v as u64),
                response_object: r.get(9)?,
                response_len: r.get::<_, Option<i64>>(10)?.map(|v| v as u64),
                content_type: r.get(11)?,
                flags: r.get(12)?,
                ts: r.get(13)?,
            })
        })?;
        rows.collect::<Result<Vec<_>, _>>().map_err(StoreError::from)
    }

    pub fn handshakes(&self) -> Result<Vec<HandshakeRow>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT hs_id, capture_id, flow, kind, legacy_version, effective_version,
                    server_name, incomplete, ts
             FROM handshakes ORDER BY hs_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok(HandshakeRow {
                hs_id: r.get(0)?,
                capture_id: r.get(1)?,
                flow: r.get(2)?,
                kind: r.get(3)?,
                legacy_version: TlsVersion::parse(&r.get::<_, String>(4)?)
                    .unwrap_or(TlsVersion::Unknown),
                effective_version: TlsVersion::parse(&r.get::<_, String>(5)?)
                    .unwrap_or(TlsVersion::Unknown),
                server_name: r.get(6)?,
                incomplete: r.get(7)?,
                ts: r.get(8)?,
                suites: Vec::new(),
            })
        })?;
        let mut out = rows.collect::<Result<Vec<HandshakeRow>, _>>()?;
        let mut stmt = self
            .conn
            .prepare("SELECT code_point FROM handshake_suites WHERE hs_id = ?1 ORDER BY position")?;
        for hs in &mut out {
            let suites = stmt.query_map(params![hs.hs_id], |r| r.get::<_, i64>(0))?;
            for s in suites {
                hs.suites.push(s? as u16);
            }
        }
        Ok(out)
    }

    pub fn hits(&self) -> Result<Vec<HitRow>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT txn_id, keyword, location, count FROM keyword_hits
             ORDER BY txn_id, keyword, location",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, i64>(3)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (txn_id, keyword, location, count) = row?;
            out.push(HitRow {
                txn_id,
                keyword,
                location: HitLocation::parse(&location).unwrap_or(HitLocation::ResponseBody),
                count: count as u64,
            });
        }
        Ok(out)
    }

    pub fn evidence(&self) -> Result<Vec<EvidenceRow>, StoreError> {
        let mut stmt = self.conn.prepare(
            "SELECT evidence_id, capture_id, txn_id, device, kind, detail, transport_plaintext
             FROM evidence ORDER BY evidence_id",
        )?;
        let rows = stmt.query_map([], |r| {
            Ok((
                r.get::<_, String>(0)?,
                r.get::<_, String>(1)?,
                r.get::<_, String>(2)?,
                r.get::<_, String>(3)?,
                r.get::<_, String>(4)?,
                r.get::<_, String>(5)?,
                r.get::<_, bool>(6)?,
            ))
        })?;
        let mut out = Vec::new();
        for row in rows {
            let (evidence_id, capture_id, txn_id, device, kind, detail, plain) = row?;
            out.push(EvidenceRow {
                evidence_id,
                capture_id,
                txn_id,
                device,
                kind: EvidenceKind::parse(&kind).unwrap_or(EvidenceKind::KeywordFlag),
                detail,
                transport_plaintext: plain,
            });
        }
        Ok(out)
    }

    // -- canned queries -----------------------------------------------------

    /// Dispatches the named aggregate query; each returns header + rows of
    /// strings suitable for printing.
    pub fn query(&self, name: &str) -> Result<(Vec<String>, Vec<Vec<String>>), StoreError> {
        let (header, sql) = match name {
            "hits-by-device" => (
                vec!["device", "keyword", "count"],
                "SELECT c.device, h.keyword, SUM(h.count)
                 FROM keyword_hits h
                 JOIN transactions t ON t.txn_id = h.txn_id
                 JOIN captures c ON c.capture_id = t.capture_id
                 GROUP BY c.device, h.keyword ORDER BY c.device, h.keyword",
            ),
            "hits-by-event" => (
                vec!["event_category", "keyword", "count"],
                "SELECT c.event_category, h.keyword, SUM(h.count)
                 FROM keyword_hits h
                 JOIN transactions t ON t.txn_id = h.txn_id
                 JOIN captures c ON c.capture_id = t.capture_id
                 GROUP BY c.event_category, h.keyword ORDER BY c.event_category, h.keyword",
            ),
            "suites-by-device" => (
                vec!["device", "hs_id", "kind", "code_point"],
                "SELECT c.device, s.hs_id, h.kind, s.code_point
                 FROM handshake_suites s
                 JOIN handshakes h ON h.hs_id = s.hs_id
                 JOIN captures c ON c.capture_id = h.capture_id
                 ORDER BY c.device, s.hs_id, s.position",
            ),
            "evidence-by-device" => (
                vec!["device", "kind", "detail", "transport_plaintext", "txn_id"],
                "SELECT device, kind, detail, transport_plaintext, txn_id
                 FROM evidence ORDER BY device, kind, detail, evidence_id",
            ),
            "run-totals" => (
                vec!["metric", "value"],
                "SELECT 'captures' AS metric, COUNT(*) AS value FROM captures
                 UNION ALL SELECT 'captures_with_objects',
                     (SELECT COUNT(DISTINCT capture_id) FROM transactions
                      WHERE request_object IS NOT NULL OR response_object IS NOT NULL)
                 UNION ALL SELECT 'transactions', COUNT(*) FROM transactions
                 UNION ALL SELECT 'handshakes', (SELECT COUNT(*) FROM handshakes)
                 UNION ALL SELECT 'keyword_hits', (SELECT COALESCE(SUM(count),0) FROM keyword_hits)
                 UNION ALL SELECT 'flagged_captures',
                     (SELECT COUNT(*) FROM captures WHERE flagged = 1)
                 ORDER BY metric",
            ),
            other => return Err(StoreError::UnknownQuery(other.to_string())),
        };
        let mut stmt = self.conn.prepare(sql)?;
        let col_count = stmt.column_count();
        let rows = stmt.query_map([], |r| {
            let mut row = Vec::with_capacity(col_count);
            for i in 0..col_count {
                row.push(value_to_string(r.get_ref(i)?));
            }
            Ok(row)
        })?;
        let rows = rows.collect::<Result<Vec<_>, _>>()?;
        Ok((header.into_iter().map(String::from).collect(), rows))
    }

    // -- canonical dump -----------------------------------------------------

    /// Renders one table as canonical TSV: header row, rows ordered by
    /// primary key, `\t`/`\n`/`\r`/`\\` escaped, NULL spelled `\N`.
    pub fn dump_table(&self, table: &str) -> Result<String, StoreError> {
        let order = match table {
            "captures" => "capture_id",
            "transactions" => "txn_id",
            "handshakes" => "hs_id",
            "handshake_suites" => "hs_id, position",
            "keyword_hits" => "txn_id, keyword, location",
            "evidence" => "evidence_id",
            "run_info" => "key",
            other => return Err(StoreError::UnknownQuery(other.to_string())),
        };
        let mut stmt = self.conn.prepare(&format!("SELECT * FROM {table} ORDER BY {order}"))?;
        let names: Vec<String> = stmt.column_names().iter().map(|s| s.to_string()).collect();
        let col_count = names.len();
        let mut out = names.join("\t");
        out.push('\n');
        let rows = stmt.query_map([], |r| {
            let mut fields = Vec::with_capacity(col_count);
            for i in 0..col_count {
                let v = r.get_ref(i)?;
                fields.push(match v {
                    rusqlite::types::ValueRef::Null => "\\N".to_string(),
                    other => escape_field(&value_to_string(other)),
                });
            }
            Ok(fields.join("\t"))
        })?;
        for row in rows {
            out.push_str(&row?);
            out.push('\n');
        }
        Ok(out)
    }

    /// All tables, concatenated map of table name to TSV text.
    pub fn dump_all(&self) -> Result<BTreeMap<String, String>, StoreError> {
        let mut out = BTreeMap::new();
        for table in TABLES {
            out.insert(table.to_string(), self.dump_table(table)?);
        }
        Ok(out)
    }

    /// Writes one `<table>.tsv` per table into `dir`.
    pub fn dump_to_dir(&self, dir: &Path) -> Result<(), StoreError> {
        std::fs::create_dir_all(dir)?;
        for (table, text) in self.dump_all()? {
            std::fs::write(dir.join(format!("{table}.tsv")), text)?;
        }
        Ok(())
    }

    /// True when a capture row exists (used for resumable runs).
    pub fn has_capture(&self, capture_id: &str) -> Result<bool, StoreError> {
        let found: Option<i64> = self
            .conn
            .query_row(
                "SELECT 1 FROM captures WHERE capture_id = ?1",
                params![capture_id],
                |r| r.get(0),
            )
            .optional()?;
        Ok(found.is_some())
    }
}

fn value_to_string(v: rusqlite::types::ValueRef<'_>) -> String {
    use rusqlite::types::ValueRef;
    match v {
        ValueRef::Null => String::new(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => format!("{f}"),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => hex::encode(b),
    }
}

fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            other => out.push(other),
        }
    }
    out
}

/// Deterministic identifiers tying rows to their capture and position.
pub fn txn_id(capture_id: &str, index: usize) -> String {
    format!("{capture_id}|t{index:04}")
}

pub fn handshake_id(capture_id: &str, index: usize) -> String {
    format!("{capture_id}|h{index:04}")
}

pub fn evidence_id(txn_id: &str, index: usize) -> String {
    format!("{txn_id}|e{index:02}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_bundle(capture_id: &str) -> CaptureBundle {
        let t0 = txn_id(capture_id, 0);
        CaptureBundle {
            capture: Some(CaptureRow {
                capture_id: capture_id.to_string(),
                dataset: "demo".to_string(),
                region: "us".to_string(),
                device: "camera".to_string(),
                experiment: "power".to_string(),
                event_category: EventCategory::Power,
                file_size: 1234,
                frame_count: 10,
                truncated: false,
                error: None,
                txn_count: 1,
                flagged: true,
            }),
            transactions: vec![TxnRow {
                txn_id: t0.clone(),
                capture_id: capture_id.to_string(),
                flow: "tcp 10.0.0.5:40000 -> 203.0.113.9:80".to_string(),
                transport: "tcp".to_string(),
                method: Some("GET".to_string()),
                uri: Some("/fw".to_string()),
                status: Some(200),
                request_object: None,
                request_len: None,
                response_object: Some("ab".repeat(32)),
                response_len: Some(5),
                content_type: Some("text/xml".to_string()),
                flags: String::new(),
                ts: Some(1_600_000_000_000_000),
            }],
            handshakes: vec![HandshakeRow {
                hs_id: handshake_id(capture_id, 0),
                capture_id: capture_id.to_string(),
                flow: "tcp 10.0.0.5:40001 -> 203.0.113.9:443".to_string(),
                kind: "client".to_string(),
                legacy_version: TlsVersion::Tls12,
                effective_version: TlsVersion::Tls12,
                server_name: Some("dev.example".to_string()),
                incomplete: false,
                ts: Some(1_600_000_000_000_000),
                suites: vec![0xc02f, 0x009c],
            }],
            hits: vec![HitRow {
                txn_id: t0.clone(),
                keyword: "firmware".to_string(),
                location: HitLocation::ResponseBody,
                count: 2,
            }],
            evidence: vec![EvidenceRow {
                evidence_id: evidence_id(&t0, 0),
                capture_id: capture_id.to_string(),
                txn_id: t0,
                device: "camera".to_string(),
                kind: EvidenceKind::FirmwareUrl,
                detail: "http://cdn.example/fw/v2.bin".to_string(),
                transport_plaintext: true,
            }],
        }
    }

    #[test]
    fn fresh_store_has_schema_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.sqlite");
        let store = Store::open(&path, Mode::Write).unwrap();
        drop(store);
        let store = Store::open(&path, Mode::Read).unwrap();
        assert!(store.captures().unwrap().is_empty());
    }

    #[test]
    fn read_mode_requires_existing_file() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.sqlite");
        assert!(matches!(Store::open(&missing, Mode::Read), Err(StoreError::Missing(_))));
    }

    #[test]
    fn version_mismatch_is_an_error_not_a_migration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("meta.sqlite");
        {
            let conn = Connection::open(&path).unwrap();
            conn.pragma_update(None, "user_version", 99).unwrap();
        }
        match Store::open(&path, Mode::Read) {
            Err(StoreError::VersionMismatch { found }) => assert_eq!(found, 99),
            Err(other) => panic!("expected version mismatch, got {other:?}"),
            Ok(_) => panic!("expected version mismatch, store opened"),
        }
        assert!(matches!(
            Store::open(&path, Mode::Write),
            Err(StoreError::VersionMismatch { found: 99 })
        ));
    }

    #[test]
    fn commit_roundtrips_rows() {
        let mut store = Store::open_memory().unwrap();
        let bundle = sample_bundle("US/camera/power/0.pcap");
        store.commit_capture(&bundle).unwrap();
        assert_eq!(store.captures().unwrap().len(), 1);
        assert_eq!(store.transactions().unwrap(), bundle.transactions);
        let hs = store.handshakes().unwrap();
        assert_eq!(hs, bundle.handshakes);
        assert_eq!(store.hits().unwrap(), bundle.hits);
        assert_eq!(store.evidence().unwrap(), bundle.evidence);
        assert!(store.has_capture("US/camera/power/0.pcap").unwrap());
        assert!(!store.has_capture("US/camera/power/1.pcap").unwrap());
    }

    #[test]
    fn duplicate_commit_is_idempotent() {
        let mut store = Store::open_memory().unwrap();
        let bundle = sample_bundle("US/camera/power/0.pcap");
        store.commit_capture(&bundle).unwrap();
        let before = store.dump_all().unwrap();
        store.commit_capture(&bundle).unwrap();
        assert_eq!(store.dump_all().unwrap(), before);
    }

    #[test]
    fn recommit_replaces_stale_rows() {
        let mut store = Store::open_memory().unwrap();
        let mut bundle = sample_bundle("US/camera/power/0.pcap");
        store.commit_capture(&bundle).unwrap();
        bundle.hits.clear();
        bundle.transactions[0].status = Some(404);
        store.commit_capture(&bundle).unwrap();
        assert!(store.hits().unwrap().is_empty());
        assert_eq!(store.transactions().unwrap()[0].status, Some(404));
        assert_eq!(store.captures().unwrap().len(), 1);
    }

    #[test]
    fn commit_order_does_not_change_dump() {
        let a = sample_bundle("US/camera/power/0.pcap");
        let b = sample_bundle("US/plug/idle/1.pcap");
        let mut s1 = Store::open_memory().unwrap();
        s1.commit_capture(&a).unwrap();
        s1.commit_capture(&b).unwrap();
        let mut s2 = Store::open_memory().unwrap();
        s2.commit_capture(&b).unwrap();
        s2.commit_capture(&a).unwrap();
        assert_eq!(s1.dump_all().unwrap(), s2.dump_all().unwrap());
    }

    #[test]
    fn dump_is_tab_separated_with_escapes() {
        let mut store = Store::open_memory().unwrap();
        let mut bundle = sample_bundle("US/cam\t1/power/0.pcap");
        bundle.capture.as_mut().unwrap().capture_id = "US/cam\t1/power/0.pcap".to_string();
        bundle.transactions.clear();
        bundle.hits.clear();
        bundle.handshakes.clear();
        bundle.evidence.clear();
        bundle.capture.as_mut().unwrap().txn_count = 0;
        store.commit_capture(&bundle).unwrap();
        let dump = store.dump_table("captures").unwrap();
        let mut lines = dump.lines();
        assert!(lines.next().unwrap().starts_with("capture_id\tdataset"));
        let row = lines.next().unwrap();
        assert!(row.contains("US/cam\\t1/power/0.pcap"), "{row}");
        // NULL error column rendered as \N, not empty.
        assert!(row.contains("\\N"), "{row}");
    }

    #[test]
    fn canned_queries_cover_analysis_needs() {
        let mut store = Store::open_memory().unwrap();
        store.commit_capture(&sample_bundle("US/camera/power/0.pcap")).unwrap();
        let (header, rows) = store.query("hits-by-device").unwrap();
        assert_eq!(header, vec!["device", "keyword", "count"]);
        assert_eq!(rows, vec![vec!["camera".to_string(), "firmware".to_string(), "2".to_string()]]);
        let (_, rows) = store.query("suites-by-device").unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0][3], "49199"); // 0xc02f in wire order first
        let (_, rows) = store.query("hits-by-event").unwrap();
        assert_eq!(rows[0][0], "Power");
        let (_, rows) = store.query("evidence-by-device").unwrap();
        assert_eq!(rows.len(), 1);
        let (_, rows) = store.query("run-totals").unwrap();
        let totals: BTreeMap<String, String> =
            rows.into_iter().map(|r| (r[0].clone(), r[1].clone())).collect();
        assert_eq!(totals.get("captures").map(String::as_str), Some("1"));
        assert_eq!(totals.get("captures_with_objects").map(String::as_str), Some("1"));
        assert_eq!(totals.get("flagged_captures").map(String::as_str), Some("1"));
        assert!(matches!(store.query("nope"), Err(StoreError::UnknownQuery(_))));
    }

    #[test]
    fn empty_store_queries_are_empty() {
        let store = Store::open_memory().unwrap();
        let (_, rows) = store.query("hits-by-device").unwrap();
        assert!(rows.is_empty());
        let dump = store.dump_table("keyword_hits").unwrap();
        assert_eq!(dump.lines().count(), 1); // header only
    }

    #[test]
    fn run_info_upserts() {
        let mut store = Store::open_memory().unwrap();
        store.set_run_info("config_digest", "abc").unwrap();
        store.set_run_info("config_digest", "def").unwrap();
        assert_eq!(store.run_info().unwrap().get("config_digest").map(String::as_str), Some("def"));
    }
}
