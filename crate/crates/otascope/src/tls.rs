//! TLS handshake metadata extraction: ClientHello and ServerHello parsing
//! from reassembled streams. Only the plaintext portion of the handshake is
//! touched — enough to see offered/selected cipher suites, the negotiated
//! version (including the supported_versions extension), and the SNI host.
//!
//! Handshake messages may span record boundaries and records may span TCP
//! segments; parsing operates on the reassembled handshake byte sequence, so
//! fragmentation at either layer cannot change the result.

use std::fmt;

use crate::ciphers::is_grease;
use crate::flows::{FlowKey, Side, TcpStreamPair, TimestampMicros};

/// Protocol versions ordered oldest to newest; `Unknown` never compares as
/// newer or older than a real version — callers must treat it explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TlsVersion {
    Ssl30,
    Tls10,
    Tls11,
    Tls12,
    Tls13,
    Unknown,
}

impl TlsVersion {
    pub fn from_wire(v: u16) -> TlsVersion {
        match v {
            0x0300 => TlsVersion::Ssl30,
            0x0301 => TlsVersion::Tls10,
            0x0302 => TlsVersion::Tls11,
            0x0303 => TlsVersion::Tls12,
            0x0304 => TlsVersion::Tls13,
            _ => TlsVersion::Unknown,
        }
    }

    /// Ordering rank; `None` for `Unknown`.
    pub fn rank(&self) -> Option<u8> {
        match self {
            TlsVersion::Ssl30 => Some(0),
            TlsVersion::Tls10 => Some(1),
            TlsVersion::Tls11 => Some(2),
            TlsVersion::Tls12 => Some(3),
            TlsVersion::Tls13 => Some(4),
            TlsVersion::Unknown => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TlsVersion::Ssl30 => "SSL3.0",
            TlsVersion::Tls10 => "TLS1.0",
            TlsVersion::Tls11 => "TLS1.1",
            TlsVersion::Tls12 => "TLS1.2",
            TlsVersion::Tls13 => "TLS1.3",
            TlsVersion::Unknown => "unknown",
        }
    }

    pub fn parse(s: &str) -> Option<TlsVersion> {
        match s {
            "SSL3.0" => Some(TlsVersion::Ssl30),
            "TLS1.0" => Some(TlsVersion::Tls10),
            "TLS1.1" => Some(TlsVersion::Tls11),
            "TLS1.2" => Some(TlsVersion::Tls12),
            "TLS1.3" => Some(TlsVersion::Tls13),
            "unknown" => Some(TlsVersion::Unknown),
            _ => None,
        }
    }
}

impl fmt::Display for TlsVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HelloKind {
    Client,
    Server,
}

impl HelloKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            HelloKind::Client => "client",
            HelloKind::Server => "server",
        }
    }

    pub fn parse(s: &str) -> Option<HelloKind> {
        match s {
            "client" => Some(HelloKind::Client),
            "server" => Some(HelloKind::Server),
            _ => None,
        }
    }
}

/// One observed hello message. For clients `cipher_suites` is the offer list
/// in wire order (GREASE values included); for servers it is the single
/// selected suite.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TlsHello {
    /// Oriented sender -> receiver.
    pub flow: FlowKey,
    pub kind: HelloKind,
    /// legacy_version field from the hello body.
    pub legacy_version: TlsVersion,
    /// Version after applying the supported_versions extension.
    pub effective_version: TlsVersion,
    pub cipher_suites: Vec<u16>,
    pub server_name: Option<String>,
    pub ts: Option<TimestampMicros>,
    /// The stream ended inside this hello; fields reflect what was readable.
    pub incomplete: bool,
}

/// Resolves the version a hello actually advertises: the highest non-GREASE
/// value in supported_versions when the extension is present, otherwise the
/// legacy version. A legacy version newer than everything offered wins (a
/// malformed combination, but we never report lower than what is plainly
/// stated on the wire).
pub fn resolve_version(legacy: TlsVersion, supported: &[u16]) -> TlsVersion {
    let best = supported
        .iter()
        .filter(|v| !is_grease(**v))
        .map(|v| TlsVersion::from_wire(*v))
        .filter(|v| v.rank().is_some())
        .max_by_key(|v| v.rank());
    match (best, legacy.rank()) {
        (Some(b), Some(lr)) if lr > b.rank().unwrap_or(0) => legacy,
        (Some(b), _) => b,
        (None, _) => legacy,
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8]) -> Cursor<'a> {
        Cursor { data, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        if end > self.data.len() {
            return None;
        }
        let out = &self.data[self.pos..end];
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))
    }
}

struct HelloFields {
    legacy: TlsVersion,
    suites: Vec<u16>,
    server_name: Option<String>,
    supported_versions: Vec<u16>,
    incomplete: bool,
}

/// Parses a ClientHello body as far as it goes; a cut anywhere yields the
/// fields read so far with `incomplete` set.
fn parse_client_hello_body(body: &[u8], len_known: bool) -> Option<HelloFields> {
    let mut c = Cursor::new(body);
    let legacy = TlsVersion::from_wire(c.u16()?);
    let mut f = HelloFields {
        legacy,
        suites: Vec::new(),
        server_name: None,
        supported_versions: Vec::new(),
        incomplete: !len_known,
    };
    let incomplete = |mut f: HelloFields| {
        f.incomplete = true;
        Some(f)
    };
    if c.take(32).is_none() {
        return incomplete(f);
    }
    let Some(sid_len) = c.u8() else { return incomplete(f) };
    if c.take(usize::from(sid_len)).is_none() {
        return incomplete(f);
    }
    let Some(suites_len) = c.u16() else { return incomplete(f) };
    for _ in 0..suites_len / 2 {
        match c.u16() {
            Some(cs) => f.suites.push(cs),
            None => return incomplete(f),
        }
    }
    let Some(comp_len) = c.u8() else { return incomplete(f) };
    if c.take(usize::from(comp_len)).is_none() {
        return incomplete(f);
    }
    // Extensions are optional (absent in old clients).
    let Some(ext_total) = c.u16() else { return Some(f) };
    let ext_end = c.pos + usize::from(ext_total);
    while c.pos + 4 <= ext_end.min(body.len()) {
        let ext_type = c.u16()?;
        let ext_len = usize::from(c.u16()?);
        let Some(ext_data) = c.take(ext_len) else { return incomplete(f) };
        match ext_type {
            0 => {
                // server_name: list length, then (type, length, bytes).
                let mut e = Cursor::new(ext_data);
                if e.u16().is_some() && e.u8() == Some(0) {
                    if let Some(n) = e.u16() {
                        if let Some(name) = e.take(usize::from(n)) {
                            f.server_name = Some(String::from_utf8_lossy(name).into_owned());
                        }
                    }
                }
            }
            43 => {
                let mut e = Cursor::new(ext_data);
                if let Some(n) = e.u8() {
                    for _ in 0..n / 2 {
                        match e.u16() {
                            Some(v) => f.supported_versions.push(v),
                            None => break,
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if c.pos < ext_end && ext_end > body.len() {
        f.incomplete = true;
    }
    Some(f)
}

fn parse_server_hello_body(body: &[u8], len_known: bool) -> Option<HelloFields> {
    let mut c = Cursor::new(body);
    let legacy = TlsVersion::from_wire(c.u16()?);
    let mut f = HelloFields {
        legacy,
        suites: Vec::new(),
        server_name: None,
        supported_versions: Vec::new(),
        incomplete: !len_known,
    };
    let incomplete = |mut f: HelloFields| {
        f.incomplete = true;
        Some(f)
    };
    if c.take(32).is_none() {
        return incomplete(f);
    }
    let Some(sid_len) = c.u8() else { return incomplete(f) };
    if c.take(usize::from(sid_len)).is_none() {
        return incomplete(f);
    }
    let Some(suite) = c.u16() else { return incomplete(f) };
    f.suites.push(suite);
    if c.u8().is_none() {
        return incomplete(f);
    }
    let Some(ext_total) = c.u16() else { return Some(f) };
    let ext_end = c.pos + usize::from(ext_total);
    while c.pos + 4 <= ext_end.min(body.len()) {
        let ext_type = c.u16()?;
        let ext_len = usize::from(c.u16()?);
        let Some(ext_data) = c.take(ext_len) else { return incomplete(f) };
        if ext_type == 43 {
            // In a ServerHello this is the single selected version.
            let mut e = Cursor::new(ext_data);
            if let Some(v) = e.u16() {
                f.supported_versions.push(v);
            }
        }
    }
    if c.pos < ext_end && ext_end > body.len() {
        f.incomplete = true;
    }
    Some(f)
}

const CONTENT_HANDSHAKE: u8 = 22;
const CONTENT_CCS: u8 = 20;
const CONTENT_ALERT: u8 = 21;
const CONTENT_APPDATA: u8 = 23;
/// Record payloads are capped at 2^14 plus expansion; anything bigger is not
/// a TLS stream we should keep following.
const MAX_RECORD_LEN: usize = 18 * 1024;

fn plausible_record_header(b: &[u8]) -> bool {
    b.len() >= 3
        && matches!(b[0], CONTENT_CCS | CONTENT_ALERT | CONTENT_HANDSHAKE | CONTENT_APPDATA)
        && b[1] == 0x03
        && b[2] <= 0x04
}

/// Collects plaintext handshake bytes from one direction's stream: record
/// payloads of type handshake, up to the first change-cipher-spec or
/// application-data record. Returns `None` when the stream is not TLS.
fn handshake_bytes(bytes: &[u8]) -> Option<(Vec<u8>, bool)> {
    if !plausible_record_header(bytes) {
        return None;
    }
    let mut buf = Vec::new();
    let mut pos = 0usize;
    let mut cut = false;
    while pos + 5 <= bytes.len() {
        if !plausible_record_header(&bytes[pos..]) {
            // Mid-stream corruption; keep what we have.
            cut = true;
            break;
        }
        let content_type = bytes[pos];
        let len = usize::from(u16::from_be_bytes([bytes[pos + 3], bytes[pos + 4]]));
        if len > MAX_RECORD_LEN {
            cut = true;
            break;
        }
        let start = pos + 5;
        let end = start + len;
        if content_type == CONTENT_CCS || content_type == CONTENT_APPDATA {
            break;
        }
        if content_type == CONTENT_HANDSHAKE {
            let avail_end = end.min(bytes.len());
            buf.extend_from_slice(&bytes[start.min(avail_end)..avail_end]);
            if end > bytes.len() {
                cut = true;
                break;
            }
        }
        pos = end;
    }
    if pos + 5 > bytes.len() && pos < bytes.len() {
        cut = true;
    }
    Some((buf, cut))
}

/// Parses hello messages out of one direction of a stream.
pub fn parse_hello_stream(
    bytes: &[u8],
    flow: FlowKey,
    ts: Option<TimestampMicros>,
) -> Vec<TlsHello> {
    let Some((buf, cut)) = handshake_bytes(bytes) else {
        return Vec::new();
    };
    let mut hellos = Vec::new();
    let mut pos = 0usize;
    while pos + 4 <= buf.len() {
        let msg_type = buf[pos];
        let len = usize::from(buf[pos + 1]) << 16
            | usize::from(buf[pos + 2]) << 8
            | usize::from(buf[pos + 3]);
        let body_start = pos + 4;
        let body_end = body_start + len;
        let len_known = body_end <= buf.len();
        let body = &buf[body_start..body_end.min(buf.len())];
        let fields = match msg_type {
            0x01 => parse_client_hello_body(body, len_known).map(|f| (HelloKind::Client, f)),
            0x02 => parse_server_hello_body(body, len_known).map(|f| (HelloKind::Server, f)),
            _ => None,
        };
        if let Some((kind, f)) = fields {
            let effective = resolve_version(f.legacy, &f.supported_versions);
            hellos.push(TlsHello {
                flow,
                kind,
                legacy_version: f.legacy,
                effective_version: effective,
                cipher_suites: f.suites,
                server_name: f.server_name,
                ts,
                incomplete: f.incomplete || (!len_known && cut),
            });
        }
        if !len_known {
            break;
        }
        pos = body_end;
    }
    // A handshake cut mid-message with no parsed header yields nothing; a cut
    // inside the last hello is already marked on that hello.
    hellos
}

/// Extracts all plaintext hello messages from both directions of a stream
/// pair, each oriented from its sender.
pub fn extract_hellos(pair: &TcpStreamPair) -> Vec<TlsHello> {
    let mut out = Vec::new();
    for side in [Side::A, Side::B] {
        let sd = pair.stream(side);
        if sd.is_empty() {
            continue;
        }
        let flow = pair.flow_from(side);
        out.extend(parse_hello_stream(&sd.bytes, flow, sd.ts_at_offset(0)));
    }
    out
}
