//! HTTP/1.x wire scanning: start lines, header blocks, and body framing
//! (content-length, chunked, connection-close) over a reassembled stream.
//! The scanner is deliberately lenient about what real devices emit — bare-LF
//! line endings, folded headers, missing reason phrases — but strict enough
//! that binary protocols never masquerade as HTTP.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeaderField {
    pub name: String,
    pub value: String,
}

impl HeaderField {
    pub fn new(name: &str, value: &str) -> HeaderField {
        HeaderField { name: name.to_string(), value: value.to_string() }
    }
}

/// First header whose name matches case-insensitively.
pub fn header_get<'a>(headers: &'a [HeaderField], name: &str) -> Option<&'a str> {
    headers
        .iter()
        .find(|h| h.name.eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str())
}

pub fn header_get_all<'a>(headers: &'a [HeaderField], name: &str) -> Vec<&'a str> {
    headers
        .iter()
        .filter(|h| h.name.eq_ignore_ascii_case(name))
        .map(|h| h.value.as_str())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StartLine {
    Request { method: String, target: String, version: String },
    Response { version: String, status: u16, reason: String },
}

#[derive(Debug, Clone)]
pub struct MessageHead {
    pub start_line: StartLine,
    pub headers: Vec<HeaderField>,
    /// Bytes consumed by the head, including the blank line.
    pub size: usize,
}

pub enum HeadParse {
    Ok(MessageHead),
    /// Data ran out before the blank line.
    Incomplete,
    /// The bytes at this position are not an HTTP message.
    NotHttp,
}

const MAX_HEAD_BYTES: usize = 256 * 1024;

fn is_token_byte(b: u8) -> bool {
    matches!(b,
        b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9'
        | b'!' | b'#' | b'$' | b'%' | b'&' | b'\'' | b'*' | b'+' | b'-' | b'.'
        | b'^' | b'_' | b'`' | b'|' | b'~')
}

fn is_http_version(s: &str) -> bool {
    let Some(rest) = s.strip_prefix("HTTP/") else { return false };
    let mut parts = rest.splitn(2, '.');
    let major = parts.next().unwrap_or("");
    if major.is_empty() || !major.bytes().all(|b| b.is_ascii_digit()) {
        return false;
    }
    match parts.next() {
        None => true,
        Some(minor) => !minor.is_empty() && minor.bytes().all(|b| b.is_ascii_digit()),
    }
}

pub fn parse_start_line(line: &[u8]) -> Option<StartLine> {
    if line.is_empty() || line.len() > 16 * 1024 {
        return None;
    }
    let s = String::from_utf8_lossy(line);
    if let Some(rest) = s.strip_prefix("HTTP/") {
        // Status line: HTTP/x.y SP 3DIGIT [SP reason]
        let mut it = rest.splitn(2, ' ');
        let version = format!("HTTP/{}", it.next()?);
        if !is_http_version(&version) {
            return None;
        }
        let rest = it.next()?.trim_start();
        let (status_str, reason) = match rest.split_once(' ') {
            Some((st, r)) => (st, r.trim().to_string()),
            None => (rest.trim_end(), String::new()),
        };
        if status_str.len() != 3 {
            return None;
        }
        let status: u16 = status_str.parse().ok()?;
        Some(StartLine::Response { version, status, reason })
    } else {
        // Request line: METHOD SP target SP HTTP/x.y
        let vi = s.rfind(" HTTP/")?;
        let version = s[vi + 1..].trim_end().to_string();
        if !is_http_version(&version) {
            return None;
        }
        let (method, target) = s[..vi].split_once(' ')?;
        if method.is_empty()
            || method.len() > 32
            || !method.bytes().all(is_token_byte)
            || target.is_empty()
        {
            return None;
        }
        Some(StartLine::Request {
            method: method.to_string(),
            target: target.trim().to_string(),
            version,
        })
    }
}

fn read_line(data: &[u8], pos: usize) -> Option<(&[u8], usize)> {
    let nl = data[pos..].iter().position(|&b| b == b'\n')?;
    let mut line = &data[pos..pos + nl];
    if line.last() == Some(&b'\r') {
        line = &line[..line.len() - 1];
    }
    Some((line, pos + nl + 1))
}

fn push_header_line(headers: &mut Vec<HeaderField>, line: &[u8]) {
    if line.first().is_some_and(|b| *b == b' ' || *b == b'\t') {
        // Obsolete line folding: continuation of the previous value.
        if let Some(last) = headers.last_mut() {
            let cont = String::from_utf8_lossy(line);
            let cont = cont.trim();
            if !cont.is_empty() {
                last.value.push(' ');
                last.value.push_str(cont);
            }
        }
        return;
    }
    let s = String::from_utf8_lossy(line);
    if let Some((name, value)) = s.split_once(':') {
        let name = name.trim_end();
        if !name.is_empty() && name.bytes().all(is_token_byte) {
            headers.push(HeaderField::new(name, value.trim()));
        }
    }
}

/// Parses one message head starting at `data[0]`.
pub fn parse_head(data: &[u8]) -> HeadParse {
    let Some((first, mut pos)) = read_line(data, 0) else {
        return if data.len() > MAX_HEAD_BYTES { HeadParse::NotHttp } else { HeadParse::Incomplete };
    };
    let Some(start_line) = parse_start_line(first) else {
        return HeadParse::NotHttp;
    };
    let mut headers = Vec::new();
    loop {
        if pos > MAX_HEAD_BYTES {
            return HeadParse::NotHttp;
        }
        let Some((line, next)) = read_line(data, pos) else {
            return HeadParse::Incomplete;
        };
        pos = next;
        if line.is_empty() {
            return HeadParse::Ok(MessageHead { start_line, headers, size: pos });
        }
        push_header_line(&mut headers, line);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyKind {
    None,
    Length(u64),
    Chunked,
    /// Delimited by the end of the stream.
    Close,
    /// Transfer-Encoding we cannot frame; the rest of the stream is unusable.
    Unframeable,
}

fn transfer_encoding_kind(headers: &[HeaderField]) -> Option<BodyKind> {
    let te = header_get_all(headers, "Transfer-Encoding");
    if te.is_empty() {
        return None;
    }
    let joined = te.join(",").to_ascii_lowercase();
    let codings: Vec<&str> = joined
        .split(',')
        .map(|c| c.trim())
        .filter(|c| !c.is_empty() && *c != "identity")
        .collect();
    if codings.is_empty() {
        return None;
    }
    if codings.last() == Some(&"chunked") {
        Some(BodyKind::Chunked)
    } else {
        Some(BodyKind::Unframeable)
    }
}

fn content_length(headers: &[HeaderField]) -> Option<u64> {
    header_get_all(headers, "Content-Length")
        .iter()
        .find_map(|v| v.trim().parse::<u64>().ok())
}

pub fn request_body_kind(headers: &[HeaderField]) -> BodyKind {
    if let Some(te) = transfer_encoding_kind(headers) {
        return te;
    }
    match content_length(headers) {
        Some(0) | None => BodyKind::None,
        Some(n) => BodyKind::Length(n),
    }
}

pub fn response_body_kind(status: u16, request_method: Option<&str>, headers: &[HeaderField]) -> BodyKind {
    if status / 100 == 1
        || status == 204
        || status == 304
        || request_method.is_some_and(|m| m.eq_ignore_ascii_case("HEAD"))
    {
        return BodyKind::None;
    }
    if let Some(te) = transfer_encoding_kind(headers) {
        return te;
    }
    match content_length(headers) {
        Some(n) => BodyKind::Length(n),
        None => BodyKind::Close,
    }
}

struct ChunkedBody {
    body: Vec<u8>,
    end: usize,
    complete: bool,
    trailers: Vec<HeaderField>,
}

fn parse_chunked(data: &[u8], mut pos: usize) -> ChunkedBody {
    let mut body = Vec::new();
    let mut trailers = Vec::new();
    let incomplete = |body: Vec<u8>, trailers: Vec<HeaderField>| ChunkedBody {
        body,
        end: data.len(),
        complete: false,
        trailers,
    };
    loop {
        let Some((line, next)) = read_line(data, pos) else {
            return incomplete(body, trailers);
        };
        let size_part = line
            .split(|&b| b == b';')
            .next()
            .unwrap_or_default();
        let size_str = String::from_utf8_lossy(size_part);
        let size_str = size_str.trim();
        if size_str.is_empty() || size_str.len() > 16 {
            return incomplete(body, trailers);
        }
        let Ok(size) = u64::from_str_radix(size_str, 16) else {
            return incomplete(body, trailers);
        };
        pos = next;
        if size == 0 {
            // Trailer section, terminated by a blank line.
            loop {
                let Some((tline, tnext)) = read_line(data, pos) else {
                    return incomplete(body, trailers);
                };
                pos = tnext;
                if tline.is_empty() {
                    return ChunkedBody { body, end: pos, complete: true, trailers };
                }
                push_header_line(&mut trailers, tline);
            }
        }
        let avail = data.len() - pos;
        let take = (size as usize).min(avail);
        body.extend_from_slice(&data[pos..pos + take]);
        pos += take;
        if take < size as usize {
            return incomplete(body, trailers);
        }
        // Chunk data is followed by CRLF.
        if data[pos..].starts_with(b"\r\n") {
            pos += 2;
        } else if data[pos..].starts_with(b"\n") {
            pos += 1;
        } else if pos == data.len() {
            return incomplete(body, trailers);
        } else {
            // Malformed chunk boundary; stop rather than guess.
            return ChunkedBody { body, end: pos, complete: false, trailers };
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanKind {
    Request,
    Response,
}

#[derive(Debug)]
pub struct ScannedMessage {
    pub head: MessageHead,
    /// Offset of the start line within the scanned region.
    pub head_offset: usize,
    /// Transfer-decoded (de-chunked) body, still content-encoded.
    pub body: Vec<u8>,
    /// Body bytes were declared but not present in the stream.
    pub truncated: bool,
    /// Body could not be framed at all (unknown transfer coding).
    pub body_unavailable: bool,
}

#[derive(Debug, Default)]
pub struct ScanOutcome {
    pub messages: Vec<ScannedMessage>,
    /// The region ended inside an unterminated message head.
    pub partial_head_at_end: bool,
}

/// Scans a stream region for a sequence of same-direction messages.
///
/// `request_methods[i]` supplies the framing context (HEAD has no response
/// body) for the i-th non-interim response; interim (1xx) responses are
/// consumed and dropped. `clean_end` tells the scanner whether the end of
/// `data` is an authoritative end-of-stream (FIN observed, no gap), which
/// decides whether close-delimited bodies are complete.
pub fn scan_messages(
    data: &[u8],
    kind: ScanKind,
    request_methods: &[String],
    clean_end: bool,
) -> ScanOutcome {
    let mut out = ScanOutcome::default();
    let mut pos = 0usize;
    let mut response_idx = 0usize;
    while pos < data.len() {
        // Tolerate stray blank lines between pipelined messages.
        if data[pos] == b'\r' || data[pos] == b'\n' {
            pos += 1;
            continue;
        }
        let head = match parse_head(&data[pos..]) {
            HeadParse::Ok(h) => h,
            HeadParse::Incomplete => {
                out.partial_head_at_end = true;
                break;
            }
            HeadParse::NotHttp => break,
        };
        let head_offset = pos;
        pos += head.size;
        let body_kind = match (&head.start_line, kind) {
            (StartLine::Request { .. }, ScanKind::Request) => request_body_kind(&head.headers),
            (StartLine::Response { status, .. }, ScanKind::Response) => {
                if *status / 100 == 1 {
                    // Interim response: head only, does not consume a request.
                    continue;
                }
                let method = request_methods.get(response_idx).map(|s| s.as_str());
                response_idx += 1;
                response_body_kind(*status, method, &head.headers)
            }
            // Direction carries the other kind of message: not our stream.
            _ => break,
        };
        let mut msg = ScannedMessage {
            head,
            head_offset,
            body: Vec::new(),
            truncated: false,
            body_unavailable: false,
        };
        match body_kind {
            BodyKind::None => {}
            BodyKind::Length(n) => {
                let avail = data.len() - pos;
                let take = (n as usize).min(avail);
                msg.body = data[pos..pos + take].to_vec();
                pos += take;
                if (take as u64) < n {
                    msg.truncated = true;
                }
            }
            BodyKind::Chunked => {
                let chunked = parse_chunked(data, pos);
                pos = chunked.end;
                msg.body = chunked.body;
                msg.truncated = !chunked.complete;
                msg.head.headers.extend(chunked.trailers);
            }
            BodyKind::Close => {
                msg.body = data[pos..].to_vec();
                pos = data.len();
                msg.truncated = !clean_end;
            }
            BodyKind::Unframeable => {
                msg.body_unavailable = true;
                out.messages.push(msg);
                break;
            }
        }
        out.messages.push(msg);
    }
    out
}

const RECOVERY_METHODS: [&str; 13] = [
    "GET", "HEAD", "POST", "PUT", "DELETE", "OPTIONS", "PATCH", "NOTIFY", "M-SEARCH", "SUBSCRIBE",
    "UNSUBSCRIBE", "PROPFIND", "REPORT",
];

/// Finds the earliest plausible message boundary in a stream captured
/// mid-flow. The preceding cut may be mid-line or mid-binary-body, so every
/// position where a method token or `HTTP/` appears is considered, and the
/// line starting there must parse as the requested kind of start line.
pub fn find_recovery_offset(data: &[u8], kind: ScanKind) -> Option<usize> {
    let line =
        |at: usize| -> &[u8] { read_line(data, at).map(|(l, _)| l).unwrap_or(&data[at..]) };
    let validate = |at: usize| -> bool {
        match (kind, parse_start_line(line(at))) {
            (ScanKind::Request, Some(StartLine::Request { method, .. })) => {
                RECOVERY_METHODS.contains(&method.as_str())
            }
            (ScanKind::Response, Some(StartLine::Response { .. })) => true,
            _ => false,
        }
    };
    let candidate = |at: usize| -> bool {
        match kind {
            ScanKind::Request => RECOVERY_METHODS.iter().any(|m| {
                data[at..].starts_with(m.as_bytes()) && data.get(at + m.len()) == Some(&b' ')
            }),
            ScanKind::Response => data[at..].starts_with(b"HTTP/"),
        }
    };
    (0..data.len()).find(|&at| candidate(at) && validate(at))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_request_head() {
        let data = b"GET /fw/image.bin?v=2 HTTP/1.1\r\nHost: updates.example\r\nAccept: */*\r\n\r\n";
        let HeadParse::Ok(head) = parse_head(data) else { panic!("expected head") };
        assert_eq!(head.size, data.len());
        match head.start_line {
            StartLine::Request { method, target, version } => {
                assert_eq!(method, "GET");
                assert_eq!(target, "/fw/image.bin?v=2");
                assert_eq!(version, "HTTP/1.1");
            }
            other => panic!("unexpected: {other:?}"),
        }
        assert_eq!(header_get(&head.headers, "host"), Some("updates.example"));
    }

    #[test]
    fn parses_response_head_without_reason() {
        let data = b"HTTP/1.0 204\r\n\r\n";
        let HeadParse::Ok(head) = parse_head(data) else { panic!() };
        assert_eq!(
            head.start_line,
            StartLine::Response { version: "HTTP/1.0".into(), status: 204, reason: "".into() }
        );
    }

    #[test]
    fn folded_headers_are_joined() {
        let data = b"HTTP/1.1 200 OK\r\nX-Note: part one\r\n  and two\r\n\r\n";
        let HeadParse::Ok(head) = parse_head(data) else { panic!() };
        assert_eq!(header_get(&head.headers, "X-Note"), Some("part one and two"));
    }

    #[test]
    fn bare_lf_lines_are_accepted() {
        let data = b"GET / HTTP/1.1\nHost: a\n\n";
        assert!(matches!(parse_head(data), HeadParse::Ok(_)));
    }

    #[test]
    fn binary_data_is_not_http() {
        assert!(matches!(parse_head(&[0x16, 0x03, 0x01, 0x02, 0x00, b'\n']), HeadParse::NotHttp));
        assert!(matches!(parse_head(b"random words\r\n\r\n"), HeadParse::NotHttp));
    }

    #[test]
    fn unterminated_head_is_incomplete() {
        assert!(matches!(parse_head(b"GET / HTTP/1.1\r\nHost: a\r\n"), HeadParse::Incomplete));
        assert!(matches!(parse_head(b"GET / HT"), HeadParse::Incomplete));
    }

    #[test]
    fn content_length_framing() {
        let data = b"POST /u HTTP/1.1\r\nContent-Length: 5\r\n\r\nhelloGET /next HTTP/1.1\r\n\r\n";
        let out = scan_messages(data, ScanKind::Request, &[], true);
        assert_eq!(out.messages.len(), 2);
        assert_eq!(out.messages[0].body, b"hello");
        assert!(!out.messages[0].truncated);
    }

    #[test]
    fn short_content_length_marks_truncated() {
        let data = b"POST /u HTTP/1.1\r\nContent-Length: 50\r\n\r\nonly this";
        let out = scan_messages(data, ScanKind::Request, &[], false);
        assert_eq!(out.messages.len(), 1);
        assert_eq!(out.messages[0].body, b"only this");
        assert!(out.messages[0].truncated);
    }

    #[test]
    fn chunked_framing_with_extensions_and_trailers() {
        let data = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n\
                     4;ext=1\r\nWiki\r\n5\r\npedia\r\n0\r\nX-Sum: abc\r\n\r\n";
        let out = scan_messages(data, ScanKind::Response, &[], true);
        assert_eq!(out.messages.len(), 1);
        assert_eq!(out.messages[0].body, b"Wikipedia");
        assert!(!out.messages[0].truncated);
        assert_eq!(header_get(&out.messages[0].head.headers, "X-Sum"), Some("abc"));
    }

    #[test]
    fn incomplete_chunked_body_is_truncated() {
        let data = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\nff\r\nshort";
        let out = scan_messages(data, ScanKind::Response, &[], true);
        assert_eq!(out.messages.len(), 1);
        assert_eq!(out.messages[0].body, b"short");
        assert!(out.messages[0].truncated);
    }

    #[test]
    fn close_delimited_body_runs_to_stream_end() {
        let data = b"HTTP/1.1 200 OK\r\nServer: x\r\n\r\neverything until fin";
        let out = scan_messages(data, ScanKind::Response, &[], true);
        assert_eq!(out.messages[0].body, b"everything until fin");
        assert!(!out.messages[0].truncated);
        let out = scan_messages(data, ScanKind::Response, &[], false);
        assert!(out.messages[0].truncated, "no FIN means the body may be cut");
    }

    #[test]
    fn head_response_and_no_body_statuses() {
        let data = b"HTTP/1.1 200 OK\r\nContent-Length: 10\r\n\r\nHTTP/1.1 304 Not Modified\r\nContent-Length: 99\r\n\r\n";
        let methods = vec!["HEAD".to_string(), "GET".to_string()];
        let out = scan_messages(data, ScanKind::Response, &methods, true);
        assert_eq!(out.messages.len(), 2);
        assert!(out.messages[0].body.is_empty());
        assert!(out.messages[1].body.is_empty());
    }

    #[test]
    fn interim_responses_are_skipped() {
        let data = b"HTTP/1.1 100 Continue\r\n\r\nHTTP/1.1 200 OK\r\nContent-Length: 2\r\n\r\nok";
        let out = scan_messages(data, ScanKind::Response, &["POST".to_string()], true);
        assert_eq!(out.messages.len(), 1);
        assert_eq!(out.messages[0].body, b"ok");
    }

    #[test]
    fn transfer_encoding_wins_over_content_length() {
        let data = b"HTTP/1.1 200 OK\r\nContent-Length: 999\r\nTransfer-Encoding: chunked\r\n\r\n2\r\nhi\r\n0\r\n\r\n";
        let out = scan_messages(data, ScanKind::Response, &[], true);
        assert_eq!(out.messages[0].body, b"hi");
        assert!(!out.messages[0].truncated);
    }

    #[test]
    fn unknown_transfer_coding_stops_the_scan() {
        let data = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: gzip\r\n\r\nxxxxxxGET / HTTP/1.1\r\n\r\n";
        let out = scan_messages(data, ScanKind::Response, &[], true);
        assert_eq!(out.messages.len(), 1);
        assert!(out.messages[0].body_unavailable);
    }

    #[test]
    fn partial_trailing_head_is_reported() {
        let data = b"GET /a HTTP/1.1\r\n\r\nGET /b HTTP/1.1\r\nHost: cut";
        let out = scan_messages(data, ScanKind::Request, &[], false);
        assert_eq!(out.messages.len(), 1);
        assert!(out.partial_head_at_end);
    }

    #[test]
    fn recovery_finds_first_boundary() {
        let mut data = b"...garbage tail of older message...\r\n".to_vec();
        data.extend_from_slice(b"GET /found HTTP/1.1\r\n\r\n");
        let off = find_recovery_offset(&data, ScanKind::Request).unwrap();
        let out = scan_messages(&data[off..], ScanKind::Request, &[], true);
        assert_eq!(out.messages.len(), 1);
        assert!(find_recovery_offset(b"\x00\x01\x02 junk only", ScanKind::Request).is_none());
        // A boundary directly after binary bytes, without any newline.
        let mut data = b"binary\x00junk".to_vec();
        data.extend_from_slice(b"HTTP/1.1 200 OK\r\n\r\n");
        assert_eq!(find_recovery_offset(&data, ScanKind::Response), Some(11));
    }

    #[test]
    fn request_with_unsolicited_response_kind_stops() {
        // A response appearing on the request side ends the request scan.
        let data = b"HTTP/1.1 200 OK\r\nContent-Length: 0\r\n\r\n";
        let out = scan_messages(data, ScanKind::Request, &[], true);
        assert!(out.messages.is_empty());
    }
}
