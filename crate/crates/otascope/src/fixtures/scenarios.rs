//! Declarative end-to-end scenarios. Each scenario is a TOML document that
//! describes traffic to synthesize *and* the exact store rows extraction must
//! produce for the resulting capture, written down by hand when the scenario
//! is authored. Generation is constructive: frame timestamps advance on a
//! fixed grid, every message head starts its own TCP segment, ids are dense
//! per capture, and body digests are taken over the authored bytes — so the
//! expectations can be predicted without running the pipeline and serve as an
//! independent oracle for the whole chain (decode → reassembly → parsing →
//! detection → store).
//!
//! Scenario format (all sizes in bytes):
//!
//! ```toml
//! name = "nosec-update"          # also the device name unless `device` set
//! experiment = "power"           # directory label under the device
//! event = "Power"                # category the default event mapping yields
//!
//! [expect]
//! flagged = true                 # capture-level keyword flag
//! pattern = "NoSecurity"         # design pattern the analysis must assign
//! downgrade = false              # downgrade verdict (default false)
//!
//! [[steps]]                      # steps emit frames in order
//! type = "http"                  # "http" | "tls" | "ssdp"
//! client = "192.168.1.50:40000"
//! server = "203.0.113.80:80"
//!
//! [[steps.requests]]             # one transaction per entry, pipelined
//! method = "GET"
//! uri = "/api/fwcheck"
//! headers = ["Host: fw.example.com"]
//! status = 200
//! response_headers = ["Content-Type: text/xml"]
//! response_body = "..."
//! # chunks = [10, 17]            # chunked transfer coding with these sizes
//! # gzip = true                  # gzip content coding on the response body
//! # response_fill = { len = 2097152, magic = "zip" }   # synthetic payload
//!
//! [[steps.requests.hits]]        # expected keyword hits, hand-counted
//! keyword = "firmware"
//! location = "response_body"
//! count = 2
//!
//! [[steps.requests.evidence]]    # expected evidence, in detector order
//! kind = "KeywordFlag"
//! detail = "firmware:2 @response_body"
//! # plaintext = true             # default
//! ```
//!
//! A `tls` step takes `suites` (wire order, GREASE and SCSV included),
//! optional `sni`, `supported_versions`, `cuts` (segment boundaries inside
//! the client flight), `record_fragment`, an optional server hello
//! (`server_suite`, `server_selected_version`), and the expected version
//! strings (`effective`, and `server_effective` when a server hello is
//! present). An `ssdp` step takes `src`, `dst`, and the raw `message` (LF
//! normalized to CRLF), plus hits/evidence like an HTTP request.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::net::SocketAddrV4;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::analysis::DesignPattern;
use crate::config::{EventCategory, Region};
use crate::detector::{EvidenceKind, HitLocation};
use crate::fixtures::frames::{
    tcp_data_frames, tcp_frame, udp_frame, TcpOpts, TCP_ACK, TCP_FIN, TCP_SYN,
};
use crate::fixtures::pcapio::{PcapWriter, LINKTYPE_ETHERNET};
use crate::fixtures::tlsgen::{
    client_first_flight, client_hello_message, server_first_flight, wrap_records,
    ClientHelloSpec, ServerHelloSpec,
};
use crate::flows::TimestampMicros;
use crate::http::gzip_bytes;
use crate::http::objects::sha256_hex;
use crate::store::{
    evidence_id, handshake_id, txn_id, CaptureBundle, CaptureRow, EvidenceRow, HandshakeRow,
    HitRow, Store, StoreError, TxnRow, TABLES,
};
use crate::tls::TlsVersion;

/// First frame timestamp; each subsequent frame is 1ms later. Keeping every
/// message head on its own frame makes transaction and hello timestamps
/// predictable at authoring time.
const TS_BASE: TimestampMicros = 1_600_000_000_000_000;
const TS_STEP: TimestampMicros = 1_000;
/// Payload bytes per TCP segment (frames stay far below the IPv4 length cap).
const SEGMENT: usize = 1400;

const CLIENT_ISN: u32 = 1000;
const SERVER_ISN: u32 = 5000;
/// Sequence base for flows captured mid-connection (no SYN in the capture).
const MIDSTREAM_SEQ: u32 = 900_000;
const WINDOW: u16 = 64240;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("scenario {name}: {msg}")]
    Invalid { name: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// Raw TOML shape

fn default_region() -> String {
    "US".to_string()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    /// Device directory; defaults to `name`.
    device: Option<String>,
    experiment: String,
    #[serde(default = "default_region")]
    region: String,
    event: String,
    expect: RawExpect,
    #[serde(default)]
    steps: Vec<RawStep>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExpect {
    flagged: bool,
    pattern: String,
    #[serde(default)]
    downgrade: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawStep {
    Http(HttpStep),
    Tls(TlsStep),
    Ssdp(SsdpStep),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HttpStep {
    client: String,
    server: String,
    /// Capture joined mid-connection: no handshake, server bytes only, and
    /// every entry is a response-only transaction.
    #[serde(default)]
    midstream: bool,
    requests: Vec<HttpExchange>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct HttpExchange {
    method: Option<String>,
    uri: Option<String>,
    #[serde(default)]
    headers: Vec<String>,
    #[serde(default)]
    body: String,
    status: u16,
    #[serde(default)]
    response_headers: Vec<String>,
    #[serde(default)]
    response_body: String,
    response_fill: Option<Fill>,
    /// Chunk sizes for chunked transfer coding; a shortfall against the body
    /// length becomes one final chunk.
    #[serde(default)]
    chunks: Vec<usize>,
    #[serde(default)]
    gzip: bool,
    #[serde(default)]
    hits: Vec<RawHit>,
    #[serde(default)]
    evidence: Vec<RawEvidence>,
}

/// Synthetic body: container magic followed by a repeating filler pattern.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Fill {
    len: usize,
    #[serde(default)]
    magic: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHit {
    keyword: String,
    location: String,
    count: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvidence {
    kind: String,
    detail: String,
    #[serde(default = "default_true")]
    plaintext: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TlsStep {
    client: String,
    server: String,
    suites: Vec<u16>,
    legacy_wire: Option<u16>,
    #[serde(default)]
    supported_versions: Vec<u16>,
    sni: Option<String>,
    /// TCP segment boundaries inside the client first flight.
    #[serde(default)]
    cuts: Vec<usize>,
    /// TLS record fragmentation for the client hello, when set.
    record_fragment: Option<usize>,
    /// Expected effective version string for the client hello.
    effective: String,
    legacy: Option<String>,
    server_suite: Option<u16>,
    server_selected_version: Option<u16>,
    server_effective: Option<String>,
    server_legacy: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SsdpStep {
    src: String,
    dst: String,
    message: String,
    #[serde(default)]
    hits: Vec<RawHit>,
    #[serde(default)]
    evidence: Vec<RawEvidence>,
}

// ---------------------------------------------------------------------------
// Validated scenario

#[derive(Debug, Clone)]
pub struct Scenario {
    raw: RawScenario,
}

/// One synthesized capture and everything extraction is expected to say
/// about it.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub scenario: String,
    pub capture_id: String,
    pub expected: CaptureBundle,
    pub pattern: DesignPattern,
    pub downgrade: bool,
}

#[derive(Debug)]
pub struct SynthOutput {
    pub pcap: Vec<u8>,
    pub manifest: Manifest,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let raw: RawScenario = toml::from_str(text)?;
        let sc = Scenario { raw };
        sc.validate()?;
        Ok(sc)
    }

    pub fn name(&self) -> &str {
        &self.raw.name
    }

    pub fn device(&self) -> &str {
        self.raw.device.as_deref().unwrap_or(&self.raw.name)
    }

    /// Capture path relative to the dataset root.
    pub fn rel_path(&self) -> String {
        format!(
            "{}/{}/{}/0.pcap",
            Region::parse(&self.raw.region).as_str(),
            self.device(),
            self.raw.experiment
        )
    }

    fn bad(&self, msg: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid { name: self.raw.name.clone(), msg: msg.into() }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let r = &self.raw;
        if r.name.is_empty() || r.experiment.is_empty() {
            return Err(self.bad("name and experiment must be non-empty"));
        }
        if Region::parse(&r.region) == Region::Unknown {
            return Err(self.bad(format!("unknown region {:?}", r.region)));
        }
        if EventCategory::parse(&r.event).is_none() {
            return Err(self.bad(format!("unknown event category {:?}", r.event)));
        }
        if DesignPattern::parse(&r.expect.pattern).is_none() {
            return Err(self.bad(format!("unknown pattern {:?}", r.expect.pattern)));
        }
        let mut tcp_pairs = BTreeSet::new();
        for step in &r.steps {
            match step {
                RawStep::Http(h) => {
                    let c = parse_endpoint(&h.client).map_err(|e| self.bad(e))?;
                    let s = parse_endpoint(&h.server).map_err(|e| self.bad(e))?;
                    if !tcp_pairs.insert(endpoint_pair(c, s)) {
                        return Err(self.bad("duplicate TCP endpoint pair across steps"));
                    }
                    if h.requests.is_empty() {
                        return Err(self.bad("http step with no requests"));
                    }
                    if h.midstream && !endpoint_lt(c, s) {
                        // Without a SYN the reassembler orients the flow by
                        // canonical endpoint order; keep that the client side.
                        return Err(self.bad("midstream step needs client < server"));
                    }
                    for x in &h.requests {
                        self.validate_exchange(h, x)?;
                    }
                }
                RawStep::Tls(t) => {
                    let c = parse_endpoint(&t.client).map_err(|e| self.bad(e))?;
                    let s = parse_endpoint(&t.server).map_err(|e| self.bad(e))?;
                    if !tcp_pairs.insert(endpoint_pair(c, s)) {
                        return Err(self.bad("duplicate TCP endpoint pair across steps"));
                    }
                    if t.suites.is_empty() {
                        return Err(self.bad("tls step with no cipher suites"));
                    }
                    parse_version(t.effective.as_str()).map_err(|e| self.bad(e))?;
                    if let Some(l) = &t.legacy {
                        parse_version(l).map_err(|e| self.bad(e))?;
                    }
                    if t.server_suite.is_some() != t.server_effective.is_some() {
                        return Err(self.bad("server_suite and server_effective go together"));
                    }
                    if let Some(l) = &t.server_legacy {
                        parse_version(l).map_err(|e| self.bad(e))?;
                    }
                }
                RawStep::Ssdp(s) => {
                    parse_endpoint(&s.src).map_err(|e| self.bad(e))?;
                    parse_endpoint(&s.dst).map_err(|e| self.bad(e))?;
                    let msg = normalize_crlf(&s.message);
                    if !msg.ends_with("\r\n\r\n") {
                        return Err(self.bad("ssdp message must end with a blank line"));
                    }
                    let line0 = msg.lines().next().unwrap_or("");
                    if line0.split_whitespace().count() != 3 {
                        return Err(self.bad("ssdp start line needs three fields"));
                    }
                    self.validate_marks(&s.hits, &s.evidence)?;
                }
            }
        }
        Ok(())
    }

    fn validate_exchange(&self, step: &HttpStep, x: &HttpExchange) -> Result<(), ScenarioError> {
        if step.midstream {
            if x.method.is_some() || x.uri.is_some() {
                return Err(self.bad("midstream exchanges are response-only"));
            }
        } else if x.method.is_none() || x.uri.is_none() {
            return Err(self.bad("http exchange needs method and uri"));
        }
        if !(100..=599).contains(&x.status) {
            return Err(self.bad(format!("implausible status {}", x.status)));
        }
        if x.response_fill.is_some() && !x.response_body.is_empty() {
            return Err(self.bad("response_fill and response_body are exclusive"));
        }
        if let Some(f) = &x.response_fill {
            fill_magic(&f.magic).map_err(|e| self.bad(e))?;
        }
        if x.chunks.iter().any(|&c| c == 0) {
            return Err(self.bad("chunk sizes must be positive"));
        }
        self.validate_marks(&x.hits, &x.evidence)
    }

    fn validate_marks(
        &self,
        hits: &[RawHit],
        evidence: &[RawEvidence],
    ) -> Result<(), ScenarioError> {
        for h in hits {
            if h.keyword.is_empty() || h.count == 0 {
                return Err(self.bad("hits need a keyword and a positive count"));
            }
            if HitLocation::parse(&h.location).is_none() {
                return Err(self.bad(format!("unknown hit location {:?}", h.location)));
            }
        }
        for e in evidence {
            if EvidenceKind::parse(&e.kind).is_none() {
                return Err(self.bad(format!("unknown evidence kind {:?}", e.kind)));
            }
        }
        Ok(())
    }

    /// Builds the capture bytes and the manifest of expected rows. `dataset`
    /// is the label extraction will record (the dataset root's directory
    /// name under default config).
    pub fn synth(&self, dataset: &str) -> Result<SynthOutput, ScenarioError> {
        let capture_id = self.rel_path();
        let device = self.device().to_string();
        let mut em = Emitter::default();
        let mut bundle = CaptureBundle::default();
        let mut txn_index = 0usize;
        let mut hs_index = 0usize;

        for step in &self.raw.steps {
            match step {
                RawStep::Http(h) => {
                    self.emit_http(h, &mut em, &mut bundle, &capture_id, &device, &mut txn_index)?
                }
                RawStep::Tls(t) => {
                    self.emit_tls(t, &mut em, &mut bundle, &capture_id, &mut hs_index)?
                }
                RawStep::Ssdp(s) => {
                    self.emit_ssdp(s, &mut em, &mut bundle, &capture_id, &device, &mut txn_index)?
                }
            }
        }

        let any_hit = !bundle.hits.is_empty();
        if any_hit != self.raw.expect.flagged {
            return Err(self.bad(format!(
                "expect.flagged = {} but authored hits say {}",
                self.raw.expect.flagged, any_hit
            )));
        }

        let pcap = em.to_pcap()?;
        bundle.capture = Some(CaptureRow {
            capture_id: capture_id.clone(),
            dataset: dataset.to_string(),
            region: Region::parse(&self.raw.region).as_str().to_string(),
            device: device.clone(),
            experiment: self.raw.experiment.clone(),
            event_category: EventCategory::parse(&self.raw.event).expect("validated"),
            file_size: pcap.len() as u64,
            frame_count: em.frames.len() as u64,
            truncated: false,
            error: None,
            txn_count: bundle.transactions.len() as u64,
            flagged: self.raw.expect.flagged,
        });

        let manifest = Manifest {
            scenario: self.raw.name.clone(),
            capture_id,
            expected: bundle,
            pattern: DesignPattern::parse(&self.raw.expect.pattern).expect("validated"),
            downgrade: self.raw.expect.downgrade,
        };
        Ok(SynthOutput { pcap, manifest })
    }

    fn emit_http(
        &self,
        h: &HttpStep,
        em: &mut Emitter,
        bundle: &mut CaptureBundle,
        capture_id: &str,
        device: &str,
        txn_index: &mut usize,
    ) -> Result<(), ScenarioError> {
        let client = parse_endpoint(&h.client).map_err(|e| self.bad(e))?;
        let server = parse_endpoint(&h.server).map_err(|e| self.bad(e))?;
        let flow = format!("tcp {client} -> {server}");

        struct Built {
            request_wire: Vec<u8>,
            response_wire: Vec<u8>,
            request_body: Vec<u8>,
            response_body: Vec<u8>,
        }
        let mut built = Vec::new();
        for x in &h.requests {
            let response_body = match &x.response_fill {
                Some(f) => fill_bytes(f).map_err(|e| self.bad(e))?,
                None => x.response_body.clone().into_bytes(),
            };
            let request_wire = if h.midstream {
                Vec::new()
            } else {
                request_wire(x).map_err(|e| self.bad(e))?
            };
            let response_wire = response_wire(x, &response_body).map_err(|e| self.bad(e))?;
            built.push(Built {
                request_wire,
                response_wire,
                request_body: x.body.clone().into_bytes(),
                response_body,
            });
        }

        let (cip, cport) = (*client.ip(), client.port());
        let (sip, sport) = (*server.ip(), server.port());
        let mut req_ts = Vec::new();
        let mut resp_ts = Vec::new();

        if h.midstream {
            let mut off = 0usize;
            for b in &built {
                let ts = em.push_all(tcp_data_frames(
                    sip,
                    sport,
                    cip,
                    cport,
                    MIDSTREAM_SEQ.wrapping_add(off as u32),
                    MIDSTREAM_SEQ,
                    &b.response_wire,
                    &grid(b.response_wire.len()),
                ));
                resp_ts.push(ts);
                req_ts.push(ts); // unused, keeps indices aligned
                off += b.response_wire.len();
            }
        } else {
            em.push(tcp_frame(
                cip,
                cport,
                sip,
                sport,
                TcpOpts { seq: CLIENT_ISN, ack: 0, flags: TCP_SYN, window: WINDOW },
                &[],
            ));
            em.push(tcp_frame(
                sip,
                sport,
                cip,
                cport,
                TcpOpts {
                    seq: SERVER_ISN,
                    ack: CLIENT_ISN.wrapping_add(1),
                    flags: TCP_SYN | TCP_ACK,
                    window: WINDOW,
                },
                &[],
            ));
            em.push(tcp_frame(
                cip,
                cport,
                sip,
                sport,
                TcpOpts {
                    seq: CLIENT_ISN.wrapping_add(1),
                    ack: SERVER_ISN.wrapping_add(1),
                    flags: TCP_ACK,
                    window: WINDOW,
                },
                &[],
            ));
            let mut c_off = 0usize;
            for b in &built {
                let ts = em.push_all(tcp_data_frames(
                    cip,
                    cport,
                    sip,
                    sport,
                    CLIENT_ISN.wrapping_add(1).wrapping_add(c_off as u32),
                    SERVER_ISN.wrapping_add(1),
                    &b.request_wire,
                    &grid(b.request_wire.len()),
                ));
                req_ts.push(ts);
                c_off += b.request_wire.len();
            }
            let mut s_off = 0usize;
            for b in &built {
                let ts = em.push_all(tcp_data_frames(
                    sip,
                    sport,
                    cip,
                    cport,
                    SERVER_ISN.wrapping_add(1).wrapping_add(s_off as u32),
                    CLIENT_ISN.wrapping_add(1).wrapping_add(c_off as u32),
                    &b.response_wire,
                    &grid(b.response_wire.len()),
                ));
                resp_ts.push(ts);
                s_off += b.response_wire.len();
            }
            em.close_tcp(client, server, c_off as u32, s_off as u32);
        }

        for (i, (x, b)) in h.requests.iter().zip(&built).enumerate() {
            let id = txn_id(capture_id, *txn_index);
            *txn_index += 1;
            let (request_object, request_len) = if h.midstream {
                (None, None)
            } else {
                let (obj, len) = object_ref(&b.request_body);
                (obj, Some(len))
            };
            let (response_object, response_len) = {
                let (obj, len) = object_ref(&b.response_body);
                (obj, Some(len))
            };
            push_marks(bundle, capture_id, device, &id, &x.hits, &x.evidence);
            bundle.transactions.push(TxnRow {
                txn_id: id,
                capture_id: capture_id.to_string(),
                flow: flow.clone(),
                transport: "tcp".to_string(),
                method: x.method.clone(),
                uri: x.uri.clone(),
                status: Some(x.status),
                request_object,
                request_len,
                response_object,
                response_len,
                content_type: header_value(&x.response_headers, "content-type"),
                flags: if h.midstream { "midstream".to_string() } else { String::new() },
                ts: Some(if h.midstream { resp_ts[i] } else { req_ts[i] }),
            });
        }
        Ok(())
    }

    fn emit_tls(
        &self,
        t: &TlsStep,
        em: &mut Emitter,
        bundle: &mut CaptureBundle,
        capture_id: &str,
        hs_index: &mut usize,
    ) -> Result<(), ScenarioError> {
        let client = parse_endpoint(&t.client).map_err(|e| self.bad(e))?;
        let server = parse_endpoint(&t.server).map_err(|e| self.bad(e))?;
        let (cip, cport) = (*client.ip(), client.port());
        let (sip, sport) = (*server.ip(), server.port());

        let spec = ClientHelloSpec {
            legacy_version: t.legacy_wire.unwrap_or(0x0303),
            cipher_suites: t.suites.clone(),
            server_name: t.sni.clone(),
            supported_versions: if t.supported_versions.is_empty() {
                None
            } else {
                Some(t.supported_versions.clone())
            },
        };
        let flight = match t.record_fragment {
            Some(n) => wrap_records(&client_hello_message(&spec), 0x0301, n),
            None => client_first_flight(&spec),
        };
        let mut last = 0usize;
        for &c in &t.cuts {
            if c <= last || c >= flight.len() {
                return Err(self.bad(format!(
                    "cut {c} out of range for a {}-byte flight",
                    flight.len()
                )));
            }
            last = c;
        }

        em.push(tcp_frame(
            cip,
            cport,
            sip,
            sport,
            TcpOpts { seq: CLIENT_ISN, ack: 0, flags: TCP_SYN, window: WINDOW },
            &[],
        ));
        em.push(tcp_frame(
            sip,
            sport,
            cip,
            cport,
            TcpOpts {
                seq: SERVER_ISN,
                ack: CLIENT_ISN.wrapping_add(1),
                flags: TCP_SYN | TCP_ACK,
                window: WINDOW,
            },
            &[],
        ));
        em.push(tcp_frame(
            cip,
            cport,
            sip,
            sport,
            TcpOpts {
                seq: CLIENT_ISN.wrapping_add(1),
                ack: SERVER_ISN.wrapping_add(1),
                flags: TCP_ACK,
                window: WINDOW,
            },
            &[],
        ));
        let hello_ts = em.push_all(tcp_data_frames(
            cip,
            cport,
            sip,
            sport,
            CLIENT_ISN.wrapping_add(1),
            SERVER_ISN.wrapping_add(1),
            &flight,
            &t.cuts,
        ));

        bundle.handshakes.push(HandshakeRow {
            hs_id: handshake_id(capture_id, *hs_index),
            capture_id: capture_id.to_string(),
            flow: format!("tcp {client} -> {server}"),
            kind: "client".to_string(),
            legacy_version: parse_version(t.legacy.as_deref().unwrap_or("TLS1.2"))
                .map_err(|e| self.bad(e))?,
            effective_version: parse_version(&t.effective).map_err(|e| self.bad(e))?,
            server_name: t.sni.clone(),
            incomplete: false,
            ts: Some(hello_ts),
            suites: t.suites.clone(),
        });
        *hs_index += 1;

        let mut s_len = 0usize;
        if let Some(suite) = t.server_suite {
            let sflight = server_first_flight(&ServerHelloSpec {
                legacy_version: 0x0303,
                cipher_suite: suite,
                selected_version: t.server_selected_version,
            });
            let server_ts = em.push_all(tcp_data_frames(
                sip,
                sport,
                cip,
                cport,
                SERVER_ISN.wrapping_add(1),
                CLIENT_ISN.wrapping_add(1).wrapping_add(flight.len() as u32),
                &sflight,
                &grid(sflight.len()),
            ));
            s_len = sflight.len();
            bundle.handshakes.push(HandshakeRow {
                hs_id: handshake_id(capture_id, *hs_index),
                capture_id: capture_id.to_string(),
                flow: format!("tcp {server} -> {client}"),
                kind: "server".to_string(),
                legacy_version: parse_version(t.server_legacy.as_deref().unwrap_or("TLS1.2"))
                    .map_err(|e| self.bad(e))?,
                effective_version: parse_version(t.server_effective.as_deref().expect("validated"))
                    .map_err(|e| self.bad(e))?,
                server_name: None,
                incomplete: false,
                ts: Some(server_ts),
                suites: vec![suite],
            });
            *hs_index += 1;
        }
        em.close_tcp(client, server, flight.len() as u32, s_len as u32);
        Ok(())
    }

    fn emit_ssdp(
        &self,
        s: &SsdpStep,
        em: &mut Emitter,
        bundle: &mut CaptureBundle,
        capture_id: &str,
        device: &str,
        txn_index: &mut usize,
    ) -> Result<(), ScenarioError> {
        let src = parse_endpoint(&s.src).map_err(|e| self.bad(e))?;
        let dst = parse_endpoint(&s.dst).map_err(|e| self.bad(e))?;
        let msg = normalize_crlf(&s.message);
        let ts = em.push(udp_frame(*src.ip(), src.port(), *dst.ip(), dst.port(), msg.as_bytes()));

        let head_end = msg.find("\r\n\r\n").expect("validated") + 4;
        let body = msg[head_end..].as_bytes();
        let line0 = msg.lines().next().expect("validated");
        let parts: Vec<&str> = line0.split_whitespace().collect();
        let is_response = parts[0].starts_with("HTTP/");

        let id = txn_id(capture_id, *txn_index);
        *txn_index += 1;
        push_marks(bundle, capture_id, device, &id, &s.hits, &s.evidence);
        let (obj, len) = object_ref(body);
        let head_lines: Vec<String> = msg[..head_end]
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| l.to_string())
            .collect();
        if is_response {
            let status: u16 = parts[1]
                .parse()
                .map_err(|_| self.bad("ssdp response status not numeric"))?;
            bundle.transactions.push(TxnRow {
                txn_id: id,
                capture_id: capture_id.to_string(),
                flow: format!("udp {dst} -> {src}"),
                transport: "ssdp".to_string(),
                method: None,
                uri: None,
                status: Some(status),
                request_object: None,
                request_len: None,
                response_object: obj,
                response_len: Some(len),
                content_type: header_value(&head_lines, "content-type"),
                flags: String::new(),
                ts: Some(ts),
            });
        } else {
            bundle.transactions.push(TxnRow {
                txn_id: id,
                capture_id: capture_id.to_string(),
                flow: format!("udp {src} -> {dst}"),
                transport: "ssdp".to_string(),
                method: Some(parts[0].to_string()),
                uri: Some(parts[1].to_string()),
                status: None,
                request_object: obj,
                request_len: Some(len),
                response_object: None,
                response_len: None,
                content_type: None,
                flags: String::new(),
                ts: Some(ts),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Wire assembly

fn parse_endpoint(s: &str) -> Result<SocketAddrV4, String> {
    s.parse::<SocketAddrV4>().map_err(|_| format!("bad endpoint {s:?} (want ip:port)"))
}

fn endpoint_pair(a: SocketAddrV4, b: SocketAddrV4) -> (SocketAddrV4, SocketAddrV4) {
    if endpoint_lt(a, b) {
        (a, b)
    } else {
        (b, a)
    }
}

fn endpoint_lt(a: SocketAddrV4, b: SocketAddrV4) -> bool {
    (a.ip().octets(), a.port()) < (b.ip().octets(), b.port())
}

fn parse_version(s: &str) -> Result<TlsVersion, String> {
    TlsVersion::parse(s).ok_or_else(|| format!("unknown TLS version {s:?}"))
}

fn normalize_crlf(s: &str) -> String {
    s.replace("\r\n", "\n").replace('\n', "\r\n")
}

fn grid(len: usize) -> Vec<usize> {
    (SEGMENT..len).step_by(SEGMENT).collect()
}

fn fill_magic(name: &str) -> Result<&'static [u8], String> {
    Ok(match name {
        "" | "none" => b"",
        "zip" => b"PK\x03\x04",
        "squashfs" => b"hsqs",
        "uimage" => &[0x27, 0x05, 0x19, 0x56],
        "gzip" => &[0x1f, 0x8b],
        other => return Err(format!("unknown fill magic {other:?}")),
    })
}

fn fill_bytes(f: &Fill) -> Result<Vec<u8>, String> {
    let mut out = fill_magic(&f.magic)?.to_vec();
    let pattern = b"0123456789abcdef";
    while out.len() < f.len {
        out.push(pattern[out.len() % pattern.len()]);
    }
    out.truncate(f.len);
    Ok(out)
}

fn status_reason(status: u16) -> &'static str {
    match status {
        200 => "OK",
        204 => "No Content",
        206 => "Partial Content",
        301 => "Moved Permanently",
        302 => "Found",
        304 => "Not Modified",
        400 => "Bad Request",
        404 => "Not Found",
        500 => "Internal Server Error",
        _ => "OK",
    }
}

fn request_wire(x: &HttpExchange) -> Result<Vec<u8>, String> {
    let method = x.method.as_deref().expect("validated");
    let uri = x.uri.as_deref().expect("validated");
    let mut head = format!("{method} {uri} HTTP/1.1\r\n");
    for h in &x.headers {
        head.push_str(h);
        head.push_str("\r\n");
    }
    let body = x.body.as_bytes();
    if !body.is_empty() {
        head.push_str(&format!("Content-Length: {}\r\n", body.len()));
    }
    head.push_str("\r\n");
    let mut wire = head.into_bytes();
    wire.extend_from_slice(body);
    Ok(wire)
}

fn response_wire(x: &HttpExchange, plain_body: &[u8]) -> Result<Vec<u8>, String> {
    let mut content = plain_body.to_vec();
    let mut framing: Vec<String> = Vec::new();
    if x.gzip {
        content = gzip_bytes(&content);
        framing.push("Content-Encoding: gzip".to_string());
    }
    if !x.chunks.is_empty() {
        framing.push("Transfer-Encoding: chunked".to_string());
        content = chunk_wire(&content, &x.chunks)?;
    } else if !content.is_empty() || !matches!(x.status, 204 | 304) {
        framing.push(format!("Content-Length: {}", content.len()));
    }
    let mut head = format!("HTTP/1.1 {} {}\r\n", x.status, status_reason(x.status));
    for h in &x.response_headers {
        head.push_str(h);
        head.push_str("\r\n");
    }
    for h in &framing {
        head.push_str(h);
        head.push_str("\r\n");
    }
    head.push_str("\r\n");
    let mut wire = head.into_bytes();
    wire.extend_from_slice(&content);
    Ok(wire)
}

fn chunk_wire(body: &[u8], sizes: &[usize]) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut pos = 0usize;
    let push = |chunk: &[u8], out: &mut Vec<u8>| {
        out.extend_from_slice(format!("{:x}\r\n", chunk.len()).as_bytes());
        out.extend_from_slice(chunk);
        out.extend_from_slice(b"\r\n");
    };
    for &s in sizes {
        let end = pos.checked_add(s).filter(|&e| e <= body.len());
        let Some(end) = end else {
            return Err(format!("chunk sizes overrun a {}-byte body", body.len()));
        };
        push(&body[pos..end], &mut out);
        pos = end;
    }
    if pos < body.len() {
        push(&body[pos..], &mut out);
    }
    out.extend_from_slice(b"0\r\n\r\n");
    Ok(out)
}

fn object_ref(body: &[u8]) -> (Option<String>, u64) {
    if body.is_empty() {
        (None, 0)
    } else {
        (Some(sha256_hex(body)), body.len() as u64)
    }
}

/// First header whose name matches (case-insensitive), value trimmed — the
/// same selection extraction applies.
fn header_value(headers: &[String], name: &str) -> Option<String> {
    for h in headers {
        let (n, v) = h.split_once(':')?;
        if n.trim().eq_ignore_ascii_case(name) {
            return Some(v.trim().to_string());
        }
    }
    None
}

fn push_marks(
    bundle: &mut CaptureBundle,
    capture_id: &str,
    device: &str,
    id: &str,
    hits: &[RawHit],
    evidence: &[RawEvidence],
) {
    for (j, e) in evidence.iter().enumerate() {
        bundle.evidence.push(EvidenceRow {
            evidence_id: evidence_id(id, j),
            capture_id: capture_id.to_string(),
            txn_id: id.to_string(),
            device: device.to_string(),
            kind: EvidenceKind::parse(&e.kind).expect("validated"),
            detail: e.detail.clone(),
            transport_plaintext: e.plaintext,
        });
    }
    for h in hits {
        bundle.hits.push(HitRow {
            txn_id: id.to_string(),
            keyword: h.keyword.clone(),
            location: HitLocation::parse(&h.location).expect("validated"),
            count: h.count,
        });
    }
}

#[derive(Default)]
struct Emitter {
    frames: Vec<(TimestampMicros, Vec<u8>)>,
}

impl Emitter {
    fn push(&mut self, frame: Vec<u8>) -> TimestampMicros {
        let ts = TS_BASE + (self.frames.len() as i64) * TS_STEP;
        self.frames.push((ts, frame));
        ts
    }

    /// Pushes a frame run and returns the first frame's timestamp.
    fn push_all(&mut self, frames: Vec<Vec<u8>>) -> TimestampMicros {
        let mut first = None;
        for f in frames {
            let ts = self.push(f);
            first.get_or_insert(ts);
        }
        first.expect("frame run is never empty")
    }

    fn close_tcp(&mut self, client: SocketAddrV4, server: SocketAddrV4, c_len: u32, s_len: u32) {
        let (cip, cport) = (*client.ip(), client.port());
        let (sip, sport) = (*server.ip(), server.port());
        let c_next = CLIENT_ISN.wrapping_add(1).wrapping_add(c_len);
        let s_next = SERVER_ISN.wrapping_add(1).wrapping_add(s_len);
        self.push(tcp_frame(
            cip,
            cport,
            sip,
            sport,
            TcpOpts { seq: c_next, ack: s_next, flags: TCP_FIN | TCP_ACK, window: WINDOW },
            &[],
        ));
        self.push(tcp_frame(
            sip,
            sport,
            cip,
            cport,
            TcpOpts {
                seq: s_next,
                ack: c_next.wrapping_add(1),
                flags: TCP_FIN | TCP_ACK,
                window: WINDOW,
            },
            &[],
        ));
        self.push(tcp_frame(
            cip,
            cport,
            sip,
            sport,
            TcpOpts {
                seq: c_next.wrapping_add(1),
                ack: s_next.wrapping_add(1),
                flags: TCP_ACK,
                window: WINDOW,
            },
            &[],
        ));
    }

    fn to_pcap(&self) -> Result<Vec<u8>, std::io::Error> {
        let mut w = PcapWriter::new(Vec::new(), LINKTYPE_ETHERNET)?;
        for (ts, frame) in &self.frames {
            w.write_frame(*ts, frame)?;
        }
        w.finish()
    }
}

// ---------------------------------------------------------------------------
// Built-in scenario set

const BUILTIN_TOML: &[&str] = &[
    include_str!("../../scenarios/nosec-update.toml"),
    include_str!("../../scenarios/outofband-update.toml"),
    include_str!("../../scenarios/full-tls.toml"),
    include_str!("../../scenarios/ssdp-updateservice.toml"),
    include_str!("../../scenarios/chunked-http.toml"),
    include_str!("../../scenarios/pipelined-http.toml"),
    include_str!("../../scenarios/midstream-flow.toml"),
    include_str!("../../scenarios/split-tls.toml"),
    include_str!("../../scenarios/downgrade-client.toml"),
    include_str!("../../scenarios/mixed-suites-client.toml"),
    include_str!("../../scenarios/version-advert.toml"),
    include_str!("../../scenarios/gzip-body.toml"),
    include_str!("../../scenarios/empty.toml"),
    include_str!("../../scenarios/tls13-client.toml"),
];

pub fn builtin_scenarios() -> Result<Vec<Scenario>, ScenarioError> {
    BUILTIN_TOML.iter().map(|t| Scenario::from_toml_str(t)).collect()
}

pub fn scenario_names() -> Vec<String> {
    builtin_scenarios()
        .map(|v| v.iter().map(|s| s.name().to_string()).collect())
        .unwrap_or_default()
}

/// Synthesizes every built-in scenario under `root` (the dataset root) and
/// returns the manifests in capture-id order — the order extraction visits
/// them.
pub fn synth_all(root: &Path) -> Result<Vec<Manifest>, ScenarioError> {
    let dataset =
        root.file_name().and_then(|s| s.to_str()).unwrap_or("fixtures").to_string();
    let mut manifests = Vec::new();
    for sc in builtin_scenarios()? {
        let out = sc.synth(&dataset)?;
        let path = root.join(&out.manifest.capture_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, &out.pcap)?;
        manifests.push(out.manifest);
    }
    manifests.sort_by(|a, b| a.capture_id.cmp(&b.capture_id));
    Ok(manifests)
}

// ---------------------------------------------------------------------------
// Verification

/// First row-level divergence between the store and a manifest.
#[derive(Debug)]
pub struct VerifyReport {
    pub scenario: String,
    pub table: String,
    pub expected: Option<String>,
    pub actual: Option<String>,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} diverges in table {}:", self.scenario, self.table)?;
        writeln!(f, "  expected: {}", self.expected.as_deref().unwrap_or("<no row>"))?;
        write!(f, "  actual:   {}", self.actual.as_deref().unwrap_or("<no row>"))
    }
}

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("{0}")]
    Mismatch(Box<VerifyReport>),
}

/// Checks that the rows the store holds for this capture are exactly the
/// manifest's expected rows, by comparing canonical dump lines. Rows from
/// other captures (and `run_info`) are ignored.
pub fn verify(store: &Store, manifest: &Manifest) -> Result<(), VerifyError> {
    let mut expected_store = Store::open_memory()?;
    expected_store.commit_capture(&manifest.expected)?;
    let expected = expected_store.dump_all()?;
    let actual = store.dump_all()?;

    let owns = |table: &str, line: &str| -> bool {
        let first = line.split('\t').next().unwrap_or("");
        match table {
            "captures" => first == manifest.capture_id,
            _ => first.starts_with(&format!("{}|", manifest.capture_id)),
        }
    };
    for table in TABLES {
        if table == "run_info" {
            continue;
        }
        let want: Vec<&str> =
            expected[table].lines().filter(|l| owns(table, l)).collect();
        let got: Vec<&str> = actual[table].lines().filter(|l| owns(table, l)).collect();
        for i in 0..want.len().max(got.len()) {
            let (w, g) = (want.get(i), got.get(i));
            if w != g {
                return Err(VerifyError::Mismatch(Box::new(VerifyReport {
                    scenario: manifest.scenario.clone(),
                    table: table.to_string(),
                    expected: w.map(|s| s.to_string()),
                    actual: g.map(|s| s.to_string()),
                })));
            }
        }
    }
    Ok(())
}
