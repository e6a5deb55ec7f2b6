//! Aggregation over a finished extraction run: keyword matrices by device and
//! by interaction event, per-device cipher-class histograms, the downgrade
//! assessment, update design-pattern labels, and the run summary. Everything
//! here is a pure fold over store rows, so results are re-derivable and
//! independent of how the extraction was scheduled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::IpAddr;

use serde::Serialize;

use crate::ciphers::{CipherCatalog, SuiteClass, SuiteDisposition};
use crate::detector::EvidenceKind;
use crate::flows::FlowKey;
use crate::store::{
    CaptureRow, EvidenceRow, HandshakeRow, HitRow, Store, StoreError, TxnRow,
};
use crate::tls::TlsVersion;

/// How a device's update machinery protects itself, per observed evidence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DesignPattern {
    NoSecurity,
    OutOfBand,
    FullTls,
    Unknown,
}

impl DesignPattern {
    pub fn as_str(&self) -> &'static str {
        match self {
            DesignPattern::NoSecurity => "NoSecurity",
            DesignPattern::OutOfBand => "OutOfBand",
            DesignPattern::FullTls => "FullTls",
            DesignPattern::Unknown => "Unknown",
        }
    }

    pub fn parse(s: &str) -> Option<DesignPattern> {
        Some(match s {
            "NoSecurity" => DesignPattern::NoSecurity,
            "OutOfBand" => DesignPattern::OutOfBand,
            "FullTls" => DesignPattern::FullTls,
            "Unknown" => DesignPattern::Unknown,
            _ => return None,
        })
    }
}

impl fmt::Display for DesignPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Immutable view of a run, loaded once; analyses share it.
#[derive(Debug, Clone, Default)]
pub struct StoreSnapshot {
    pub captures: Vec<CaptureRow>,
    pub transactions: Vec<TxnRow>,
    pub handshakes: Vec<HandshakeRow>,
    pub hits: Vec<HitRow>,
    pub evidence: Vec<EvidenceRow>,
}

impl StoreSnapshot {
    pub fn load(store: &Store) -> Result<StoreSnapshot, StoreError> {
        Ok(StoreSnapshot {
            captures: store.captures()?,
            transactions: store.transactions()?,
            handshakes: store.handshakes()?,
            hits: store.hits()?,
            evidence: store.evidence()?,
        })
    }

    fn capture_by_id(&self) -> BTreeMap<&str, &CaptureRow> {
        self.captures.iter().map(|c| (c.capture_id.as_str(), c)).collect()
    }

    fn txn_by_id(&self) -> BTreeMap<&str, &TxnRow> {
        self.transactions.iter().map(|t| (t.txn_id.as_str(), t)).collect()
    }

    /// Device owning each transaction, via its capture.
    fn txn_device(&self) -> BTreeMap<&str, &str> {
        let caps = self.capture_by_id();
        self.transactions
            .iter()
            .filter_map(|t| {
                caps.get(t.capture_id.as_str()).map(|c| (t.txn_id.as_str(), c.device.as_str()))
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Keyword matrices

/// Keyword-by-column count matrix. Rows follow corpus order; columns are
/// sorted lexicographically for diff-stable output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordMatrix {
    pub keywords: Vec<String>,
    pub columns: Vec<String>,
    /// cells[row][col].
    pub cells: Vec<Vec<u64>>,
    /// Columns that exist in the run but had zero hits (omitted from the
    /// matrix proper, reported here).
    pub omitted_columns: Vec<String>,
}

impl KeywordMatrix {
    fn build(
        keywords: &[String],
        all_columns: BTreeSet<String>,
        counts: BTreeMap<(String, String), u64>,
        omit_zero_columns: bool,
    ) -> KeywordMatrix {
        let mut with_hits: BTreeSet<&String> = BTreeSet::new();
        for (_, col) in counts.keys() {
            with_hits.insert(col);
        }
        let (columns, omitted): (Vec<String>, Vec<String>) = if omit_zero_columns {
            (
                all_columns.iter().filter(|c| with_hits.contains(c)).cloned().collect(),
                all_columns.iter().filter(|c| !with_hits.contains(c)).cloned().collect(),
            )
        } else {
            (all_columns.into_iter().collect(), Vec::new())
        };
        let cells = keywords
            .iter()
            .map(|k| {
                columns
                    .iter()
                    .map(|c| counts.get(&(k.clone(), c.clone())).copied().unwrap_or(0))
                    .collect()
            })
            .collect();
        KeywordMatrix {
            keywords: keywords.to_vec(),
            columns,
            cells,
            omitted_columns: omitted,
        }
    }

    pub fn cell(&self, keyword: &str, column: &str) -> u64 {
        let Some(r) = self.keywords.iter().position(|k| k == keyword) else { return 0 };
        let Some(c) = self.columns.iter().position(|c| c == column) else { return 0 };
        self.cells[r][c]
    }

    pub fn row_total(&self, keyword: &str) -> u64 {
        match self.keywords.iter().position(|k| k == keyword) {
            Some(r) => self.cells[r].iter().sum(),
            None => 0,
        }
    }

    pub fn column_total(&self, column: &str) -> u64 {
        match self.columns.iter().position(|c| c == column) {
            Some(c) => self.cells.iter().map(|row| row[c]).sum(),
            None => 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    /// CSV with a `keyword` label column; one row per keyword.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("keyword");
        for c in &self.columns {
            out.push(',');
            out.push_str(&csv_escape(c));
        }
        out.push('\n');
        for (r, k) in self.keywords.iter().enumerate() {
            out.push_str(&csv_escape(k));
            for v in &self.cells[r] {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }
}

pub fn csv_escape(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Keyword hits summed per device. Devices without hits are listed in
/// `omitted_columns` rather than carried as all-zero columns.
pub fn build_device_matrix(snap: &StoreSnapshot, keywords: &[String]) -> KeywordMatrix {
    let devices: BTreeSet<String> = snap.captures.iter().map(|c| c.device.clone()).collect();
    let txn_device = snap.txn_device();
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for hit in &snap.hits {
        if let Some(device) = txn_device.get(hit.txn_id.as_str()) {
            *counts.entry((hit.keyword.clone(), (*device).to_string())).or_insert(0) += hit.count;
        }
    }
    KeywordMatrix::build(keywords, devices, counts, true)
}

/// Keyword hits summed per interaction-event category. Every category seen in
/// the run keeps its column, zero or not, so heatmaps have a stable shape.
pub fn build_event_matrix(snap: &StoreSnapshot, keywords: &[String]) -> KeywordMatrix {
    let events: BTreeSet<String> =
        snap.captures.iter().map(|c| c.event_category.as_str().to_string()).collect();
    let caps = snap.capture_by_id();
    let txns = snap.txn_by_id();
    let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
    for hit in &snap.hits {
        let Some(txn) = txns.get(hit.txn_id.as_str()) else { continue };
        let Some(cap) = caps.get(txn.capture_id.as_str()) else { continue };
        let event = cap.event_category.as_str().to_string();
        *counts.entry((hit.keyword.clone(), event)).or_insert(0) += hit.count;
    }
    KeywordMatrix::build(keywords, events, counts, false)
}

// ---------------------------------------------------------------------------
// Cipher hygiene

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub insecure: u64,
    pub weak: u64,
    pub secure: u64,
    pub recommended: u64,
    /// Registered-looking code points absent from the catalog.
    pub unknown: u64,
}

impl ClassCounts {
    pub fn total(&self) -> u64 {
        self.insecure + self.weak + self.secure + self.recommended + self.unknown
    }

    fn add(&mut self, disposition: SuiteDisposition<'_>) {
        match disposition {
            SuiteDisposition::Known(r) => match r.class {
                SuiteClass::Insecure => self.insecure += 1,
                SuiteClass::Weak => self.weak += 1,
                SuiteClass::Secure => self.secure += 1,
                SuiteClass::Recommended => self.recommended += 1,
            },
            SuiteDisposition::Unknown => self.unknown += 1,
            // GREASE and SCSV signaling values are noise, not suites.
            SuiteDisposition::Grease | SuiteDisposition::Signaling => {}
        }
    }
}

/// Per-device counts of (handshake, suite) observations by class, over both
/// client and server hellos. Devices with no TLS at all keep an all-zero row.
pub fn cipher_histogram(
    snap: &StoreSnapshot,
    catalog: &CipherCatalog,
) -> BTreeMap<String, ClassCounts> {
    let caps = snap.capture_by_id();
    let mut out: BTreeMap<String, ClassCounts> = BTreeMap::new();
    for cap in &snap.captures {
        out.entry(cap.device.clone()).or_default();
    }
    for hs in &snap.handshakes {
        let Some(cap) = caps.get(hs.capture_id.as_str()) else { continue };
        let counts = out.entry(cap.device.clone()).or_default();
        for cp in &hs.suites {
            counts.add(catalog.disposition(*cp));
        }
    }
    out
}

/// Downgrade estimate for one device: some client hello offered at least one
/// Insecure suite, no Secure or Recommended suite at all, and negotiation
/// could settle below TLS 1.3. The rationale names the qualifying handshake.
pub fn assess_downgrade(
    hellos: &[&HandshakeRow],
    catalog: &CipherCatalog,
) -> (bool, String) {
    for hs in hellos {
        if hs.kind != "client" {
            continue;
        }
        let mut insecure = 0u64;
        let mut secure_or_recommended = 0u64;
        let mut example = None;
        for cp in &hs.suites {
            match catalog.disposition(*cp) {
                SuiteDisposition::Known(r) => match r.class {
                    SuiteClass::Insecure => {
                        insecure += 1;
                        example.get_or_insert(*cp);
                    }
                    SuiteClass::Secure | SuiteClass::Recommended => secure_or_recommended += 1,
                    SuiteClass::Weak => {}
                },
                _ => {}
            }
        }
        let below_13 = match (hs.effective_version.rank(), TlsVersion::Tls13.rank()) {
            (Some(v), Some(t13)) => v < t13,
            _ => false,
        };
        if insecure > 0 && secure_or_recommended == 0 && below_13 {
            let example = example.unwrap_or_default();
            return (
                true,
                format!(
                    "client hello {} at {} offered {insecure} insecure suite(s) \
                     (e.g. 0x{example:04X}) and none secure or recommended",
                    hs.hs_id,
                    hs.effective_version.as_str()
                ),
            );
        }
    }
    (false, "no client hello offered insecure suites without a secure alternative".to_string())
}

// ---------------------------------------------------------------------------
// WAN/LAN split and pattern classification

/// Local (non-WAN) addresses: RFC 1918 and the obvious non-routables.
pub fn is_lan_ip(ip: &IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => {
            v4.is_private()
                || v4.is_loopback()
                || v4.is_link_local()
                || v4.is_broadcast()
                || v4.is_multicast()
                || v4.is_unspecified()
        }
        IpAddr::V6(v6) => {
            v6.is_loopback()
                || v6.is_multicast()
                || v6.is_unspecified()
                // fe80::/10 link-local and fc00::/7 unique-local.
                || (v6.segments()[0] & 0xffc0) == 0xfe80
                || (v6.segments()[0] & 0xfe00) == 0xfc00
        }
    }
}

pub fn is_wan_ip(ip: &IpAddr) -> bool {
    !is_lan_ip(ip)
}

fn flow_dst_is_wan(flow: &str) -> bool {
    FlowKey::parse(flow).is_some_and(|k| is_wan_ip(&k.dst))
}

/// Labels one device from its evidence, transactions and handshakes:
///
/// * `OutOfBand` — plaintext update machinery together with signature or
///   certificate fields (integrity handled above the transport);
/// * `NoSecurity` — a plaintext firmware URL or payload and no signature
///   machinery anywhere;
/// * `FullTls` — TLS handshakes to WAN hosts and no update-flagged plaintext
///   transaction to a WAN host (LAN chatter such as SSDP does not count
///   against it);
/// * `Unknown` — nothing conclusive.
pub fn classify_pattern(
    evidence: &[&EvidenceRow],
    transactions: &[&TxnRow],
    handshakes: &[&HandshakeRow],
    flagged_txn_ids: &BTreeSet<String>,
) -> DesignPattern {
    let has_signature = evidence.iter().any(|e| e.kind == EvidenceKind::SignatureField);
    let has_plain_firmware = evidence.iter().any(|e| {
        (e.kind == EvidenceKind::FirmwareUrl && e.transport_plaintext)
            || e.kind == EvidenceKind::FirmwarePayload
    });
    let has_plain_update = evidence
        .iter()
        .any(|e| e.kind != EvidenceKind::SignatureField && e.transport_plaintext);
    if has_signature && has_plain_update {
        return DesignPattern::OutOfBand;
    }
    if has_plain_firmware {
        return DesignPattern::NoSecurity;
    }
    let wan_tls = handshakes
        .iter()
        .any(|h| h.kind == "client" && flow_dst_is_wan(&h.flow));
    let wan_plain_flagged = transactions
        .iter()
        .any(|t| flagged_txn_ids.contains(&t.txn_id) && flow_dst_is_wan(&t.flow));
    if wan_tls && !wan_plain_flagged {
        return DesignPattern::FullTls;
    }
    DesignPattern::Unknown
}

// ---------------------------------------------------------------------------
// Device reports and run summary

#[derive(Debug, Clone, Serialize)]
pub struct DeviceReport {
    pub device: String,
    pub capture_count: u64,
    pub flagged_captures: u64,
    pub keyword_totals: BTreeMap<String, u64>,
    pub event_totals: BTreeMap<String, u64>,
    pub cipher_classes: ClassCounts,
    pub downgrade_vulnerable: bool,
    pub downgrade_rationale: String,
    pub pattern: String,
    /// Firmware/software versions the device advertised, deduplicated.
    pub versions: Vec<String>,
    /// Firmware URLs observed for the device, deduplicated.
    pub endpoints: Vec<String>,
}

/// One report per device, sorted by device name.
pub fn device_reports(
    snap: &StoreSnapshot,
    catalog: &CipherCatalog,
    keywords: &[String],
) -> Vec<DeviceReport> {
    let devices: BTreeSet<String> = snap.captures.iter().map(|c| c.device.clone()).collect();
    let histogram = cipher_histogram(snap, catalog);
    let caps = snap.capture_by_id();
    let txn_device = snap.txn_device();
    let txns = snap.txn_by_id();
    let flagged_txn_ids: BTreeSet<String> = snap
        .hits
        .iter()
        .filter(|h| h.count > 0)
        .map(|h| h.txn_id.clone())
        .collect();

    let mut out = Vec::new();
    for device in devices {
        let dev_captures: Vec<&CaptureRow> =
            snap.captures.iter().filter(|c| c.device == device).collect();
        let dev_txns: Vec<&TxnRow> = snap
            .transactions
            .iter()
            .filter(|t| txn_device.get(t.txn_id.as_str()) == Some(&device.as_str()))
            .collect();
        let dev_handshakes: Vec<&HandshakeRow> = snap
            .handshakes
            .iter()
            .filter(|h| {
                caps.get(h.capture_id.as_str()).map(|c| c.device.as_str()) == Some(device.as_str())
            })
            .collect();
        let dev_evidence: Vec<&EvidenceRow> =
            snap.evidence.iter().filter(|e| e.device == device).collect();

        let mut keyword_totals: BTreeMap<String, u64> =
            keywords.iter().map(|k| (k.clone(), 0)).collect();
        let mut event_totals: BTreeMap<String, u64> = BTreeMap::new();
        for hit in &snap.hits {
            if txn_device.get(hit.txn_id.as_str()) != Some(&device.as_str()) {
                continue;
            }
            *keyword_totals.entry(hit.keyword.clone()).or_insert(0) += hit.count;
            if let Some(cap) =
                txns.get(hit.txn_id.as_str()).and_then(|t| caps.get(t.capture_id.as_str()))
            {
                *event_totals.entry(cap.event_category.as_str().to_string()).or_insert(0) +=
                    hit.count;
            }
        }

        let (downgrade_vulnerable, downgrade_rationale) =
            assess_downgrade(&dev_handshakes, catalog);
        let pattern =
            classify_pattern(&dev_evidence, &dev_txns, &dev_handshakes, &flagged_txn_ids);
        let mut versions: Vec<String> = dev_evidence
            .iter()
            .filter(|e| e.kind == EvidenceKind::VersionAdvertisement)
            .map(|e| e.detail.clone())
            .collect();
        versions.sort();
        versions.dedup();
        let mut endpoints: Vec<String> = dev_evidence
            .iter()
            .filter(|e| e.kind == EvidenceKind::FirmwareUrl)
            .map(|e| e.detail.clone())
            .collect();
        endpoints.sort();
        endpoints.dedup();

        out.push(DeviceReport {
            device: device.clone(),
            capture_count: dev_captures.len() as u64,
            flagged_captures: dev_captures.iter().filter(|c| c.flagged).count() as u64,
            keyword_totals,
            event_totals,
            cipher_classes: histogram.get(&device).copied().unwrap_or_default(),
            downgrade_vulnerable,
            downgrade_rationale,
            pattern: pattern.as_str().to_string(),
            versions,
            endpoints,
        });
    }
    out
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct RunSummary {
    pub captures_total: u64,
    pub captures_failed: u64,
    /// Captures from which at least one HTTP body object was stored.
    pub captures_with_objects: u64,
    pub captures_with_objects_percent: f64,
    pub devices_total: u64,
    pub devices_with_http: u64,
    pub flagged_captures: u64,
    pub keyword_totals: BTreeMap<String, u64>,
    pub devices_per_pattern: BTreeMap<String, u64>,
}

pub fn summarize_run(snap: &StoreSnapshot, reports: &[DeviceReport]) -> RunSummary {
    let captures_total = snap.captures.len() as u64;
    let captures_failed = snap.captures.iter().filter(|c| c.error.is_some()).count() as u64;
    let with_objects: BTreeSet<&str> = snap
        .transactions
        .iter()
        .filter(|t| t.request_object.is_some() || t.response_object.is_some())
        .map(|t| t.capture_id.as_str())
        .collect();
    let captures_with_objects = with_objects.len() as u64;
    // Integer-scaled percentage keeps report bytes identical across platforms.
    let percent_x100 = if captures_total == 0 {
        0
    } else {
        captures_with_objects * 10000 / captures_total
    };
    let caps = snap.capture_by_id();
    let devices_with_http: BTreeSet<&str> = snap
        .transactions
        .iter()
        .filter_map(|t| caps.get(t.capture_id.as_str()).map(|c| c.device.as_str()))
        .collect();
    let mut keyword_totals: BTreeMap<String, u64> = BTreeMap::new();
    for hit in &snap.hits {
        *keyword_totals.entry(hit.keyword.clone()).or_insert(0) += hit.count;
    }
    let mut devices_per_pattern: BTreeMap<String, u64> = BTreeMap::new();
    for r in reports {
        *devices_per_pattern.entry(r.pattern.clone()).or_insert(0) += 1;
    }
    RunSummary {
        captures_total,
        captures_failed,
        captures_with_objects,
        captures_with_objects_percent: percent_x100 as f64 / 100.0,
        devices_total: reports.len() as u64,
        devices_with_http: devices_with_http.len() as u64,
        flagged_captures: snap.captures.iter().filter(|c| c.flagged).count() as u64,
        keyword_totals,
        devices_per_pattern,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EventCategory;
    use crate::detector::HitLocation;
    use crate::store::{evidence_id, handshake_id, txn_id};

    fn corpus() -> Vec<String> {
        crate::config::DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect()
    }

    fn capture(id: &str, device: &str, event: EventCategory) -> CaptureRow {
        CaptureRow {
            capture_id: id.to_string(),
            dataset: "demo".to_string(),
            region: "us".to_string(),
            device: device.to_string(),
            experiment: "exp".to_string(),
            event_category: event,
            file_size: 100,
            frame_count: 5,
            truncated: false,
            error: None,
            txn_count: 0,
            flagged: false,
        }
    }

    fn txn(capture_id: &str, idx: usize, flow: &str) -> TxnRow {
        TxnRow {
            txn_id: txn_id(capture_id, idx),
            capture_id: capture_id.to_string(),
            flow: flow.to_string(),
            transport: "tcp".to_string(),
            method: Some("GET".to_string()),
            uri: Some("/".to_string()),
            status: Some(200),
            request_object: None,
            request_len: None,
            response_object: Some("aa".repeat(32)),
            response_len: Some(10),
            content_type: None,
            flags: String::new(),
            ts: Some(0),
        }
    }

    fn hit(txn_id: &str, keyword: &str, count: u64) -> HitRow {
        HitRow {
            txn_id: txn_id.to_string(),
            keyword: keyword.to_string(),
            location: HitLocation::ResponseBody,
            count,
        }
    }

    fn handshake(capture_id: &str, idx: usize, suites: Vec<u16>, version: TlsVersion) -> HandshakeRow {
        HandshakeRow {
            hs_id: handshake_id(capture_id, idx),
            capture_id: capture_id.to_string(),
            flow: "tcp 192.168.1.9:40000 -> 203.0.113.5:443".to_string(),
            kind: "client".to_string(),
            legacy_version: TlsVersion::Tls12,
            effective_version: version,
            server_name: None,
            incomplete: false,
            ts: Some(0),
            suites,
        }
    }

    fn evidence(
        capture_id: &str,
        t: usize,
        e: usize,
        device: &str,
        kind: EvidenceKind,
        detail: &str,
        plaintext: bool,
    ) -> EvidenceRow {
        let txn = txn_id(capture_id, t);
        EvidenceRow {
            evidence_id: evidence_id(&txn, e),
            capture_id: capture_id.to_string(),
            txn_id: txn,
            device: device.to_string(),
            kind,
            detail: detail.to_string(),
            transport_plaintext: plaintext,
        }
    }

    #[test]
    fn device_matrix_sums_and_omits_zero_devices() {
        let c1 = "US/cam/power/0.pcap";
        let c2 = "US/cam/power/1.pcap";
        let c3 = "US/plug/idle/0.pcap";
        let snap = StoreSnapshot {
            captures: vec![
                capture(c1, "cam", EventCategory::Power),
                capture(c2, "cam", EventCategory::Power),
                capture(c3, "plug", EventCategory::Idle),
            ],
            transactions: vec![
                txn(c1, 0, "tcp 192.168.1.2:1 -> 203.0.113.5:80"),
                txn(c2, 0, "tcp 192.168.1.2:2 -> 203.0.113.5:80"),
                txn(c3, 0, "tcp 192.168.1.3:3 -> 203.0.113.5:80"),
            ],
            hits: vec![
                hit(&txn_id(c1, 0), "update", 3),
                hit(&txn_id(c2, 0), "update", 4),
                hit(&txn_id(c1, 0), "firmware", 2),
            ],
            ..Default::default()
        };
        let m = build_device_matrix(&snap, &corpus());
        assert_eq!(m.columns, vec!["cam".to_string()]);
        assert_eq!(m.omitted_columns, vec!["plug".to_string()]);
        assert_eq!(m.cell("update", "cam"), 7);
        assert_eq!(m.cell("firmware", "cam"), 2);
        assert_eq!(m.cell("upgrade", "cam"), 0);
        assert_eq!(m.total(), 9);
        // Event matrix keeps all categories and agrees on the grand total.
        let e = build_event_matrix(&snap, &corpus());
        assert_eq!(e.columns, vec!["Idle".to_string(), "Power".to_string()]);
        assert_eq!(e.cell("update", "Power"), 7);
        assert_eq!(e.cell("update", "Idle"), 0);
        assert_eq!(e.total(), m.total());
    }

    #[test]
    fn empty_run_produces_empty_matrices() {
        let snap = StoreSnapshot::default();
        let m = build_device_matrix(&snap, &corpus());
        assert!(m.columns.is_empty());
        assert_eq!(m.total(), 0);
        let e = build_event_matrix(&snap, &corpus());
        assert!(e.columns.is_empty());
    }

    #[test]
    fn matrix_csv_shape() {
        let c1 = "US/cam/power/0.pcap";
        let snap = StoreSnapshot {
            captures: vec![capture(c1, "cam,1", EventCategory::Power)],
            transactions: vec![txn(c1, 0, "tcp 192.168.1.2:1 -> 203.0.113.5:80")],
            hits: vec![hit(&txn_id(c1, 0), "update", 1)],
            ..Default::default()
        };
        let csv = build_device_matrix(&snap, &corpus()).to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("keyword,\"cam,1\""));
        assert_eq!(lines.next(), Some("update,1"));
    }

    #[test]
    fn histogram_counts_classes_and_unknowns() {
        let catalog = CipherCatalog::bundled();
        let c1 = "US/cam/power/0.pcap";
        let snap = StoreSnapshot {
            captures: vec![
                capture(c1, "cam", EventCategory::Power),
                capture("US/mute/idle/0.pcap", "mute", EventCategory::Idle),
            ],
            handshakes: vec![handshake(
                c1,
                0,
                // insecure, weak, recommended, GREASE, SCSV, unknown
                vec![0x0004, 0x002f, 0xc02f, 0x0a0a, 0x00ff, 0x9e9e],
                TlsVersion::Tls12,
            )],
            ..Default::default()
        };
        let h = cipher_histogram(&snap, &catalog);
        let cam = h.get("cam").unwrap();
        assert_eq!(
            (cam.insecure, cam.weak, cam.secure, cam.recommended, cam.unknown),
            (1, 1, 0, 1, 1)
        );
        // Device with no TLS still listed, all zero.
        assert_eq!(h.get("mute").unwrap().total(), 0);
    }

    #[test]
    fn downgrade_rule_examples() {
        let catalog = CipherCatalog::bundled();
        let c1 = "US/cam/power/0.pcap";
        // Insecure + weak at TLS1.2: vulnerable.
        let hs = handshake(c1, 0, vec![0x0004, 0x000a], TlsVersion::Tls12);
        let (v, why) = assess_downgrade(&[&hs], &catalog);
        assert!(v, "{why}");
        assert!(why.contains("0x0004"), "{why}");
        // Insecure + recommended: protected.
        let hs = handshake(c1, 0, vec![0x0004, 0xc02f], TlsVersion::Tls12);
        assert!(!assess_downgrade(&[&hs], &catalog).0);
        // Insecure-only but TLS1.3: protected by version.
        let hs = handshake(c1, 0, vec![0x0004], TlsVersion::Tls13);
        assert!(!assess_downgrade(&[&hs], &catalog).0);
        // Server hellos don't count.
        let mut hs = handshake(c1, 0, vec![0x0004], TlsVersion::Tls12);
        hs.kind = "server".to_string();
        assert!(!assess_downgrade(&[&hs], &catalog).0);
        // No handshakes at all.
        assert!(!assess_downgrade(&[], &catalog).0);
    }

    #[test]
    fn downgrade_monotone_in_secure_suites() {
        use rand::{Rng, SeedableRng};
        let catalog = CipherCatalog::bundled();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let pool: Vec<u16> = vec![0x0004, 0x0005, 0x000a, 0x002f, 0x009c, 0x1301, 0xc02f, 0x9e9e];
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let suites: Vec<u16> = (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            let version = if rng.gen_bool(0.5) { TlsVersion::Tls12 } else { TlsVersion::Tls13 };
            let hs = handshake("c", 0, suites.clone(), version);
            let before = assess_downgrade(&[&hs], &catalog).0;
            let mut fortified = suites;
            fortified.push(0xc02f);
            let hs2 = handshake("c", 0, fortified, version);
            let after = assess_downgrade(&[&hs2], &catalog).0;
            assert!(!after || before, "adding a secure suite must never create vulnerability");
            assert!(!after, "a secure suite is always present in the fortified offer");
        }
    }

    #[test]
    fn pattern_classification_rules() {
        let c1 = "US/cam/power/0.pcap";
        let flagged: BTreeSet<String> = [txn_id(c1, 0)].into_iter().collect();
        let wan_txn = txn(c1, 0, "tcp 192.168.1.2:1 -> 203.0.113.5:80");
        let lan_txn = txn(c1, 1, "udp 192.168.1.2:1900 -> 239.255.255.250:1900");
        let wan_hs = handshake(c1, 0, vec![0x1301], TlsVersion::Tls13);

        // Plaintext firmware URL, no signatures: NoSecurity.
        let ev = vec![evidence(c1, 0, 0, "cam", EvidenceKind::FirmwareUrl, "http://x/fw.bin", true)];
        let refs: Vec<&EvidenceRow> = ev.iter().collect();
        assert_eq!(
            classify_pattern(&refs, &[&wan_txn], &[], &flagged),
            DesignPattern::NoSecurity
        );

        // Same but with signature fields: OutOfBand wins.
        let ev = vec![
            evidence(c1, 0, 0, "cam", EvidenceKind::FirmwareUrl, "http://x/fw.bin", true),
            evidence(c1, 0, 1, "cam", EvidenceKind::SignatureField, "signature", true),
        ];
        let refs: Vec<&EvidenceRow> = ev.iter().collect();
        assert_eq!(classify_pattern(&refs, &[&wan_txn], &[], &flagged), DesignPattern::OutOfBand);

        // TLS to WAN, only LAN plaintext: FullTls.
        assert_eq!(
            classify_pattern(&[], &[&lan_txn], &[&wan_hs], &BTreeSet::new()),
            DesignPattern::FullTls
        );

        // TLS to WAN but flagged plaintext WAN txn: not FullTls.
        assert_eq!(
            classify_pattern(&[], &[&wan_txn], &[&wan_hs], &flagged),
            DesignPattern::Unknown
        );

        // Flagged LAN SSDP does not disqualify FullTls.
        let flagged_lan: BTreeSet<String> = [txn_id(c1, 1)].into_iter().collect();
        assert_eq!(
            classify_pattern(&[], &[&lan_txn], &[&wan_hs], &flagged_lan),
            DesignPattern::FullTls
        );

        // Nothing: Unknown.
        assert_eq!(classify_pattern(&[], &[], &[], &BTreeSet::new()), DesignPattern::Unknown);

        // HTTPS-only firmware URL is not plaintext evidence: stays Unknown
        // without WAN TLS records.
        let ev =
            vec![evidence(c1, 0, 0, "cam", EvidenceKind::FirmwareUrl, "https://x/fw.bin", false)];
        let refs: Vec<&EvidenceRow> = ev.iter().collect();
        assert_eq!(classify_pattern(&refs, &[&wan_txn], &[], &flagged), DesignPattern::Unknown);
    }

    #[test]
    fn wan_lan_split() {
        let lan: [IpAddr; 5] = [
            "192.168.1.4".parse().unwrap(),
            "10.0.0.1".parse().unwrap(),
            "172.16.5.5".parse().unwrap(),
            "239.255.255.250".parse().unwrap(),
            "fe80::1".parse().unwrap(),
        ];
        for ip in lan {
            assert!(is_lan_ip(&ip), "{ip}");
        }
        let wan: [IpAddr; 3] = [
            "203.0.113.5".parse().unwrap(),
            "8.8.8.8".parse().unwrap(),
            "2001:db8::1".parse().unwrap(),
        ];
        for ip in wan {
            assert!(is_wan_ip(&ip), "{ip}");
        }
    }

    #[test]
    fn reports_and_summary_hang_together() {
        let catalog = CipherCatalog::bundled();
        let c1 = "US/cam/power/0.pcap";
        let c2 = "US/plug/idle/0.pcap";
        let mut cap1 = capture(c1, "cam", EventCategory::Power);
        cap1.flagged = true;
        cap1.txn_count = 1;
        let snap = StoreSnapshot {
            captures: vec![cap1, capture(c2, "plug", EventCategory::Idle)],
            transactions: vec![txn(c1, 0, "tcp 192.168.1.2:1 -> 203.0.113.5:80")],
            handshakes: vec![handshake(c2, 0, vec![0x0004], TlsVersion::Tls12)],
            hits: vec![hit(&txn_id(c1, 0), "update", 2)],
            evidence: vec![evidence(
                c1,
                0,
                0,
                "cam",
                EvidenceKind::FirmwareUrl,
                "http://x/fw.bin",
                true,
            )],
        };
        let reports = device_reports(&snap, &catalog, &corpus());
        assert_eq!(reports.len(), 2);
        let cam = &reports[0];
        assert_eq!(cam.device, "cam");
        assert_eq!(cam.pattern, "NoSecurity");
        assert_eq!(cam.keyword_totals.get("update"), Some(&2));
        assert_eq!(cam.event_totals.get("Power"), Some(&2));
        assert_eq!(cam.endpoints, vec!["http://x/fw.bin".to_string()]);
        assert_eq!(cam.flagged_captures, 1);
        let plug = &reports[1];
        assert!(plug.downgrade_vulnerable);
        assert_eq!(plug.cipher_classes.insecure, 1);

        let summary = summarize_run(&snap, &reports);
        assert_eq!(summary.captures_total, 2);
        assert_eq!(summary.captures_with_objects, 1);
        assert_eq!(summary.captures_with_objects_percent, 50.0);
        assert_eq!(summary.devices_with_http, 1);
        assert_eq!(summary.flagged_captures, 1);
        assert_eq!(summary.keyword_totals.get("update"), Some(&2));
        assert_eq!(summary.devices_per_pattern.get("NoSecurity"), Some(&1));
        // plug talks TLS to a WAN host with no flagged plaintext, so it lands
        // in FullTls regardless of its poor suite hygiene; the downgrade flag
        // carries that concern separately.
        assert_eq!(summary.devices_per_pattern.get("FullTls"), Some(&1));
        assert_eq!(plug.pattern, "FullTls");
    }

    #[test]
    fn empty_snapshot_summary_is_all_zero() {
        let snap = StoreSnapshot::default();
        let reports = device_reports(&snap, &CipherCatalog::bundled(), &corpus());
        assert!(reports.is_empty());
        let s = summarize_run(&snap, &reports);
        assert_eq!(s.captures_total, 0);
        assert_eq!(s.captures_with_objects_percent, 0.0);
    }
}
