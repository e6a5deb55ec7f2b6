//! HTTP transaction extraction: pairs pipelined requests with responses over
//! reassembled TCP streams, interprets SSDP datagrams as HTTP-shaped
//! messages, and decodes content-encoded bodies.

pub mod objects;
pub mod parser;

use std::borrow::Cow;
use std::fmt;
use std::io::Read;

pub use parser::{header_get, header_get_all, HeaderField};

use crate::flows::{FlowKey, Side, StreamData, TcpStreamPair, TimestampMicros, UdpFlowGroup};
use parser::{find_recovery_offset, scan_messages, ScanKind, ScanOutcome, ScannedMessage, StartLine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HttpTransport {
    Tcp,
    SsdpUdp,
}

impl HttpTransport {
    pub fn as_str(&self) -> &'static str {
        match self {
            HttpTransport::Tcp => "tcp",
            HttpTransport::SsdpUdp => "ssdp",
        }
    }

    pub fn parse(s: &str) -> Option<HttpTransport> {
        match s {
            "tcp" => Some(HttpTransport::Tcp),
            "ssdp" => Some(HttpTransport::SsdpUdp),
            _ => None,
        }
    }
}

impl fmt::Display for HttpTransport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Quality flags attached to a transaction. All are "the data was imperfect"
/// markers, never fatal: downstream consumers decide what to trust.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TxnFlags {
    /// A declared body was cut short by the capture.
    pub truncated: bool,
    /// A message head was cut short by the capture.
    pub parse_truncated: bool,
    /// Content-Encoding was declared but could not be decoded.
    pub decode_failed: bool,
    /// Recovered from a flow whose beginning was not captured.
    pub midstream: bool,
    /// Transfer-Encoding prevented locating the body.
    pub body_unavailable: bool,
}

impl TxnFlags {
    pub fn any(&self) -> bool {
        self.truncated
            || self.parse_truncated
            || self.decode_failed
            || self.midstream
            || self.body_unavailable
    }

    /// Canonical comma-joined rendering (alphabetical), used in storage.
    pub fn canonical(&self) -> String {
        let mut parts = Vec::new();
        if self.body_unavailable {
            parts.push("body_unavailable");
        }
        if self.decode_failed {
            parts.push("decode_failed");
        }
        if self.midstream {
            parts.push("midstream");
        }
        if self.parse_truncated {
            parts.push("parse_truncated");
        }
        if self.truncated {
            parts.push("truncated");
        }
        parts.join(",")
    }

    pub fn parse(s: &str) -> TxnFlags {
        let mut f = TxnFlags::default();
        for part in s.split(',') {
            match part.trim() {
                "truncated" => f.truncated = true,
                "parse_truncated" => f.parse_truncated = true,
                "decode_failed" => f.decode_failed = true,
                "midstream" => f.midstream = true,
                "body_unavailable" => f.body_unavailable = true,
                _ => {}
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestData {
    pub method: String,
    pub uri: String,
    pub version: String,
    pub headers: Vec<HeaderField>,
    /// Transfer-decoded body, still content-encoded if the sender encoded it.
    pub body: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseData {
    pub version: String,
    pub status: u16,
    pub reason: String,
    pub headers: Vec<HeaderField>,
    pub body: Vec<u8>,
}

/// One request/response exchange (either half may be missing when the capture
/// did not include it).
#[derive(Debug, Clone)]
pub struct HttpTransaction {
    /// Oriented client -> server, regardless of which half was observed.
    pub flow: FlowKey,
    pub transport: HttpTransport,
    pub request: Option<RequestData>,
    pub response: Option<ResponseData>,
    pub request_ts: Option<TimestampMicros>,
    pub response_ts: Option<TimestampMicros>,
    pub flags: TxnFlags,
}

impl HttpTransaction {
    /// Request time when known, otherwise response time.
    pub fn primary_ts(&self) -> Option<TimestampMicros> {
        self.request_ts.or(self.response_ts)
    }
}

// ---------------------------------------------------------------------------
// TCP transaction assembly

fn is_midstream(sd: &StreamData) -> bool {
    sd.gaps.first() == Some(&(0, 0))
}

/// End of the contiguous prefix is a true end-of-stream: FIN seen and no gap
/// hides later bytes.
fn clean_end(sd: &StreamData) -> bool {
    sd.fin && sd.gaps.iter().all(|g| *g == (0, 0))
}

fn region_offset(sd: &StreamData, kind: ScanKind) -> Option<usize> {
    if sd.bytes.is_empty() {
        return None;
    }
    if is_midstream(sd) {
        find_recovery_offset(&sd.bytes, kind)
    } else {
        Some(0)
    }
}

fn probe(sd: &StreamData) -> Option<ScanKind> {
    let req = region_offset(sd, ScanKind::Request);
    let resp = region_offset(sd, ScanKind::Response);
    match (req, resp) {
        (Some(r), Some(p)) => Some(if r <= p { ScanKind::Request } else { ScanKind::Response }),
        (Some(_), None) => Some(ScanKind::Request),
        (None, Some(_)) => Some(ScanKind::Response),
        (None, None) => None,
    }
}

fn pick_request_side(pair: &TcpStreamPair) -> Side {
    if let Some(client) = pair.client {
        return client;
    }
    let pa = probe(&pair.a_to_b);
    let pb = probe(&pair.b_to_a);
    match (pa, pb) {
        (Some(ScanKind::Request), Some(ScanKind::Request)) => Side::A,
        (Some(ScanKind::Request), _) => Side::A,
        (_, Some(ScanKind::Request)) => Side::B,
        (Some(ScanKind::Response), _) => Side::B,
        (_, Some(ScanKind::Response)) => Side::A,
        _ => Side::A,
    }
}

fn request_data(msg: &ScannedMessage) -> Option<RequestData> {
    match &msg.head.start_line {
        StartLine::Request { method, target, version } => Some(RequestData {
            method: method.clone(),
            uri: target.clone(),
            version: version.clone(),
            headers: msg.head.headers.clone(),
            body: msg.body.clone(),
        }),
        StartLine::Response { .. } => None,
    }
}

fn response_data(msg: &ScannedMessage) -> Option<ResponseData> {
    match &msg.head.start_line {
        StartLine::Response { version, status, reason } => Some(ResponseData {
            version: version.clone(),
            status: *status,
            reason: reason.clone(),
            headers: msg.head.headers.clone(),
            body: msg.body.clone(),
        }),
        StartLine::Request { .. } => None,
    }
}

/// Extracts HTTP transactions from one reassembled TCP connection.
///
/// Requests are parsed off the client stream, responses off the server
/// stream, and matched first-in-first-out (pipelining). When the capture
/// started mid-connection, leading unmatched responses are emitted as
/// response-only transactions.
pub fn parse_http(pair: &TcpStreamPair) -> Vec<HttpTransaction> {
    let req_side = pick_request_side(pair);
    let req_sd = pair.stream(req_side);
    let resp_sd = pair.stream(req_side.opposite());
    let flow = pair.flow_from(req_side);
    let midstream = is_midstream(req_sd) || is_midstream(resp_sd);

    let req_off = region_offset(req_sd, ScanKind::Request);
    let req_scan = match req_off {
        Some(off) => scan_messages(&req_sd.bytes[off..], ScanKind::Request, &[], clean_end(req_sd)),
        None => ScanOutcome::default(),
    };
    let methods: Vec<String> = req_scan
        .messages
        .iter()
        .filter_map(|m| match &m.head.start_line {
            StartLine::Request { method, .. } => Some(method.clone()),
            _ => None,
        })
        .collect();
    let resp_off = region_offset(resp_sd, ScanKind::Response);
    let resp_scan = match resp_off {
        Some(off) => {
            scan_messages(&resp_sd.bytes[off..], ScanKind::Response, &methods, clean_end(resp_sd))
        }
        None => ScanOutcome::default(),
    };

    let reqs = &req_scan.messages;
    let resps = &resp_scan.messages;
    // If the connection start is missing, the first responses likely answer
    // requests we never saw: align requests to the tail of the response list.
    let lead_resps = if midstream { resps.len().saturating_sub(reqs.len()) } else { 0 };

    let base_flags = TxnFlags { midstream, ..TxnFlags::default() };
    let mut txns = Vec::new();
    let mk_resp_ts = |m: &ScannedMessage| {
        resp_sd.ts_at_offset((resp_off.unwrap_or(0) + m.head_offset) as u64)
    };
    for resp in &resps[..lead_resps] {
        let mut flags = base_flags;
        flags.truncated |= resp.truncated;
        flags.body_unavailable |= resp.body_unavailable;
        txns.push(HttpTransaction {
            flow,
            transport: HttpTransport::Tcp,
            request: None,
            response: response_data(resp),
            request_ts: None,
            response_ts: mk_resp_ts(resp),
            flags,
        });
    }
    let mut parse_truncated_pending = resp_scan.partial_head_at_end;
    for (i, req) in reqs.iter().enumerate() {
        let resp = resps.get(lead_resps + i);
        let mut flags = base_flags;
        flags.truncated |= req.truncated || resp.is_some_and(|r| r.truncated);
        flags.body_unavailable |= req.body_unavailable || resp.is_some_and(|r| r.body_unavailable);
        if resp.is_none() && parse_truncated_pending {
            // The response head for this request was cut off mid-transfer.
            flags.parse_truncated = true;
            parse_truncated_pending = false;
        }
        txns.push(HttpTransaction {
            flow,
            transport: HttpTransport::Tcp,
            request: request_data(req),
            response: resp.and_then(|r| response_data(r)),
            request_ts: req_sd.ts_at_offset((req_off.unwrap_or(0) + req.head_offset) as u64),
            response_ts: resp.and_then(mk_resp_ts),
            flags,
        });
    }
    for resp in resps.iter().skip(lead_resps + reqs.len()) {
        let mut flags = base_flags;
        flags.truncated |= resp.truncated;
        flags.body_unavailable |= resp.body_unavailable;
        txns.push(HttpTransaction {
            flow,
            transport: HttpTransport::Tcp,
            request: None,
            response: response_data(resp),
            request_ts: None,
            response_ts: mk_resp_ts(resp),
            flags,
        });
    }
    // Drop degenerate entries (possible when a side carried the wrong kind).
    txns.retain(|t| t.request.is_some() || t.response.is_some());
    txns
}

// ---------------------------------------------------------------------------
// SSDP

/// Interprets each datagram of a UDP flow as an HTTP-shaped SSDP message.
/// Requests (NOTIFY, M-SEARCH) become request-only transactions oriented from
/// the sender; responses become response-only transactions oriented toward
/// the sender.
pub fn parse_ssdp(group: &UdpFlowGroup) -> Vec<HttpTransaction> {
    let mut txns = Vec::new();
    for (ts, payload) in &group.datagrams {
        let head = match parser::parse_head(payload) {
            parser::HeadParse::Ok(h) => h,
            _ => continue,
        };
        let rest = &payload[head.size..];
        let declared = parser::header_get(&head.headers, "Content-Length")
            .and_then(|v| v.trim().parse::<u64>().ok());
        let (body, truncated) = match declared {
            Some(n) => {
                let take = (n as usize).min(rest.len());
                (rest[..take].to_vec(), (take as u64) < n)
            }
            None => (rest.to_vec(), false),
        };
        let msg = ScannedMessage {
            head,
            head_offset: 0,
            body,
            truncated,
            body_unavailable: false,
        };
        let flags = TxnFlags { truncated, ..TxnFlags::default() };
        match &msg.head.start_line {
            StartLine::Request { .. } => txns.push(HttpTransaction {
                flow: group.flow,
                transport: HttpTransport::SsdpUdp,
                request: request_data(&msg),
                response: None,
                request_ts: Some(*ts),
                response_ts: None,
                flags,
            }),
            StartLine::Response { .. } => txns.push(HttpTransaction {
                flow: group.flow.reversed(),
                transport: HttpTransport::SsdpUdp,
                request: None,
                response: response_data(&msg),
                request_ts: None,
                response_ts: Some(*ts),
                flags,
            }),
        }
    }
    txns
}

// ---------------------------------------------------------------------------
// Body decoding

pub struct DecodedBody<'a> {
    pub bytes: Cow<'a, [u8]>,
    /// Lowercased declared encoding, when one was present.
    pub encoding: Option<String>,
    /// The declared encoding could not be applied; `bytes` is the raw body.
    pub failed: bool,
}

/// Decompression output cap; anything larger is treated as a decode failure
/// rather than an invitation to exhaust memory.
const MAX_DECODED_BYTES: u64 = 64 * 1024 * 1024;

fn read_limited<R: Read>(mut reader: R) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    match reader.by_ref().take(MAX_DECODED_BYTES + 1).read_to_end(&mut out) {
        Ok(_) if out.len() as u64 <= MAX_DECODED_BYTES => Some(out),
        _ => None,
    }
}

/// Applies the message's Content-Encoding to its body. Unknown or broken
/// encodings yield the raw bytes with `failed` set.
pub fn decode_body<'a>(headers: &[HeaderField], body: &'a [u8]) -> DecodedBody<'a> {
    let declared = header_get(headers, "Content-Encoding").map(|v| v.trim().to_ascii_lowercase());
    let raw = |failed: bool, encoding: Option<String>| DecodedBody {
        bytes: Cow::Borrowed(body),
        encoding,
        failed,
    };
    match declared.as_deref() {
        None | Some("") | Some("identity") => raw(false, None),
        Some("gzip") | Some("x-gzip") => {
            match read_limited(flate2::read::MultiGzDecoder::new(body)) {
                Some(out) => DecodedBody { bytes: Cow::Owned(out), encoding: declared, failed: false },
                None => raw(true, declared),
            }
        }
        Some("deflate") => {
            // Servers disagree on whether "deflate" means zlib-wrapped.
            let out = read_limited(flate2::read::ZlibDecoder::new(body))
                .or_else(|| read_limited(flate2::read::DeflateDecoder::new(body)));
            match out {
                Some(out) => DecodedBody { bytes: Cow::Owned(out), encoding: declared, failed: false },
                None => raw(true, declared),
            }
        }
        Some(_) => raw(true, declared),
    }
}

/// Gzip helper for fixture generation (single member, default level).
pub fn gzip_bytes(data: &[u8]) -> Vec<u8> {
    use flate2::write::GzEncoder;
    use std::io::Write;
    let mut enc = GzEncoder::new(Vec::new(), flate2::Compression::default());
    enc.write_all(data).expect("in-memory gzip");
    enc.finish().expect("in-memory gzip")
}

// ---------------------------------------------------------------------------
// Serialization (fixtures and round-trip testing)

/// Renders a request exactly; callers are responsible for framing headers.
pub fn serialize_request(r: &RequestData) -> Vec<u8> {
    let mut out = format!("{} {} {}\r\n", r.method, r.uri, r.version).into_bytes();
    for h in &r.headers {
        out.extend_from_slice(format!("{}: {}\r\n", h.name, h.value).as_bytes());
    }
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(&r.body);
    out
}

pub fn serialize_response(r: &ResponseData) -> Vec<u8> {
    let status_line = if r.reason.is_empty() {
        format!("{} {}\r\n", r.version, r.status)
    } else {
        format!("{} {} {}\r\n", r.version, r.status, r.reason)
    };
    let mut out = status_line.into_bytes();
    for h in &r.headers {
        out.extend_from_slice(format!("{}: {}\r\n", h.name, h.value).as_bytes());
    }
    out.extend_from_slice(b"\r\n");
    out.extend_from_slice(&r.body);
    out
}
