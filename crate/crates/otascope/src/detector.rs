//! Update-traffic detection: case-insensitive keyword scanning over extracted
//! HTTP content, plus targeted evidence extractors (firmware URLs, version
//! advertisements, update services, out-of-band signature fields, large
//! firmware-shaped payloads). Scanning is substring-based on purpose — it
//! over-approximates, and per-location hit records let stricter filters be
//! layered afterwards without rescanning captures.

use std::collections::BTreeMap;
use std::fmt;

use regex::bytes::{Regex, RegexBuilder};
use thiserror::Error;
use url::Url;

use crate::config::DetectorConfig;
use crate::http::{decode_body, header_get, HeaderField, HttpTransaction, HttpTransport};

#[derive(Debug, Error)]
pub enum DetectorError {
    #[error("bad detector pattern {pattern:?}: {source}")]
    Pattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
}

/// Where in a transaction a keyword matched. SSDP messages are scanned as a
/// single unit since they are datagram-shaped rather than streamed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HitLocation {
    RequestUri,
    RequestHeaders,
    RequestBody,
    ResponseHeaders,
    ResponseBody,
    SsdpMessage,
}

impl HitLocation {
    pub fn as_str(&self) -> &'static str {
        match self {
            HitLocation::RequestUri => "request_uri",
            HitLocation::RequestHeaders => "request_headers",
            HitLocation::RequestBody => "request_body",
            HitLocation::ResponseHeaders => "response_headers",
            HitLocation::ResponseBody => "response_body",
            HitLocation::SsdpMessage => "ssdp_message",
        }
    }

    pub fn parse(s: &str) -> Option<HitLocation> {
        Some(match s {
            "request_uri" => HitLocation::RequestUri,
            "request_headers" => HitLocation::RequestHeaders,
            "request_body" => HitLocation::RequestBody,
            "response_headers" => HitLocation::ResponseHeaders,
            "response_body" => HitLocation::ResponseBody,
            "ssdp_message" => HitLocation::SsdpMessage,
            _ => return None,
        })
    }
}

impl fmt::Display for HitLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordHit {
    pub keyword: String,
    pub count: u64,
    pub location: HitLocation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EvidenceKind {
    KeywordFlag,
    FirmwareUrl,
    VersionAdvertisement,
    UpdateService,
    SignatureField,
    FirmwarePayload,
}

impl EvidenceKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EvidenceKind::KeywordFlag => "KeywordFlag",
            EvidenceKind::FirmwareUrl => "FirmwareUrl",
            EvidenceKind::VersionAdvertisement => "VersionAdvertisement",
            EvidenceKind::UpdateService => "UpdateService",
            EvidenceKind::SignatureField => "SignatureField",
            EvidenceKind::FirmwarePayload => "FirmwarePayload",
        }
    }

    pub fn parse(s: &str) -> Option<EvidenceKind> {
        Some(match s {
            "KeywordFlag" => EvidenceKind::KeywordFlag,
            "FirmwareUrl" => EvidenceKind::FirmwareUrl,
            "VersionAdvertisement" => EvidenceKind::VersionAdvertisement,
            "UpdateService" => EvidenceKind::UpdateService,
            "SignatureField" => EvidenceKind::SignatureField,
            "FirmwarePayload" => EvidenceKind::FirmwarePayload,
            _ => return None,
        })
    }
}

impl fmt::Display for EvidenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A detector finding, not yet bound to a device or store row. For
/// `FirmwareUrl` the plaintext flag reflects the URL scheme (where the image
/// would be fetched); for everything else it reflects the carrying transport,
/// which for extracted HTTP/SSDP is always plaintext.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evidence {
    pub kind: EvidenceKind,
    pub detail: String,
    pub transport_plaintext: bool,
}

/// True iff the capture produced at least one keyword hit anywhere.
pub fn flag_capture(hits: &[KeywordHit]) -> bool {
    hits.iter().any(|h| h.count > 0)
}

fn ascii_regex(pattern: &str) -> Result<Regex, DetectorError> {
    RegexBuilder::new(pattern)
        .case_insensitive(true)
        .unicode(false)
        .build()
        .map_err(|source| DetectorError::Pattern { pattern: pattern.to_string(), source })
}

/// Compiled detector: keyword automata plus the evidence patterns, built once
/// per run and shared read-only across workers.
#[derive(Debug)]
pub struct Detector {
    keywords: Vec<(String, Regex)>,
    url_pattern: Regex,
    version_pattern: Regex,
    json_key_pattern: Regex,
    xml_tag_pattern: Regex,
    xml_name_pattern: Regex,
    service_type_pattern: Regex,
    control_url_pattern: Regex,
    cfg: DetectorConfig,
}

impl Detector {
    pub fn new(cfg: &DetectorConfig) -> Result<Detector, DetectorError> {
        let mut keywords = Vec::new();
        for kw in &cfg.keywords {
            keywords.push((kw.clone(), ascii_regex(&regex::escape(kw))?));
        }
        // Version adverts: a firmware-ish key token followed, within the same
        // line and a short window, by a dotted version number.
        let tokens: Vec<String> =
            cfg.version_key_tokens.iter().map(|t| regex::escape(t)).collect();
        let version_pattern = ascii_regex(&format!(
            "(?:{})[^\\r\\n]{{0,32}}?({})",
            tokens.join("|"),
            cfg.version_regex.as_str()
        ))?;
        Ok(Detector {
            keywords,
            url_pattern: ascii_regex(r#"https?://[^\s"'<>\\]+"#)?,
            version_pattern,
            json_key_pattern: ascii_regex(r#""([A-Za-z0-9_.-]{1,64})"\s*:"#)?,
            xml_tag_pattern: ascii_regex(r"<([A-Za-z][A-Za-z0-9_.:-]{0,63})[\s>/]")?,
            xml_name_pattern: ascii_regex(r"<name>\s*([A-Za-z0-9_.:-]{1,100})\s*</name>")?,
            service_type_pattern: ascii_regex(r"<serviceType>\s*([^<]{1,200}?)\s*</serviceType>")?,
            control_url_pattern: ascii_regex(r"<controlURL>\s*([^<]{1,200}?)\s*</controlURL>")?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Case-insensitive substring counts over arbitrary bytes. Matches for
    /// one keyword never overlap each other; different keywords are counted
    /// independently and may overlap.
    pub fn scan_keywords(&self, content: &[u8]) -> Vec<(String, u64)> {
        let mut out = Vec::new();
        for (kw, re) in &self.keywords {
            let count = re.find_iter(content).count() as u64;
            if count > 0 {
                out.push((kw.clone(), count));
            }
        }
        out
    }

    /// Scans every surface of a transaction and reports per-location hits.
    /// Bodies are scanned in decoded (decompressed) form.
    pub fn scan_transaction(&self, txn: &HttpTransaction) -> Vec<KeywordHit> {
        let mut hits = Vec::new();
        let scan_into = |content: &[u8], location: HitLocation, hits: &mut Vec<KeywordHit>| {
            for (keyword, count) in self.scan_keywords(content) {
                hits.push(KeywordHit { keyword, count, location });
            }
        };
        if txn.transport == HttpTransport::SsdpUdp {
            // Datagram messages are one scan surface each.
            let mut buf = Vec::new();
            if let Some(req) = &txn.request {
                buf.extend_from_slice(format!("{} {} {}\r\n", req.method, req.uri, req.version).as_bytes());
                push_header_lines(&mut buf, &req.headers);
                buf.extend_from_slice(&req.body);
            }
            if let Some(resp) = &txn.response {
                buf.extend_from_slice(
                    format!("{} {} {}\r\n", resp.version, resp.status, resp.reason).as_bytes(),
                );
                push_header_lines(&mut buf, &resp.headers);
                buf.extend_from_slice(&resp.body);
            }
            scan_into(&buf, HitLocation::SsdpMessage, &mut hits);
            return merge_hits(hits);
        }
        if let Some(req) = &txn.request {
            scan_into(req.uri.as_bytes(), HitLocation::RequestUri, &mut hits);
            scan_into(&header_block(&req.headers), HitLocation::RequestHeaders, &mut hits);
            let body = decode_body(&req.headers, &req.body);
            scan_into(&body.bytes, HitLocation::RequestBody, &mut hits);
        }
        if let Some(resp) = &txn.response {
            scan_into(&header_block(&resp.headers), HitLocation::ResponseHeaders, &mut hits);
            let body = decode_body(&resp.headers, &resp.body);
            scan_into(&body.bytes, HitLocation::ResponseBody, &mut hits);
        }
        merge_hits(hits)
    }

    /// All evidence for one transaction. `hits` must be the output of
    /// [`Detector::scan_transaction`] for the same transaction; signature
    /// fields are only searched in keyword-flagged transactions.
    pub fn evidence_for(&self, txn: &HttpTransaction, hits: &[KeywordHit]) -> Vec<Evidence> {
        let mut out = Vec::new();
        if !hits.is_empty() {
            let mut parts: Vec<String> = hits
                .iter()
                .map(|h| format!("{}:{} @{}", h.keyword, h.count, h.location))
                .collect();
            parts.sort();
            out.push(Evidence {
                kind: EvidenceKind::KeywordFlag,
                detail: parts.join(", "),
                transport_plaintext: true,
            });
        }
        out.extend(self.detect_firmware_url(txn));
        out.extend(self.detect_version_advertisement(txn));
        out.extend(self.detect_update_service(txn));
        if !hits.is_empty() {
            out.extend(self.detect_signature_fields(txn));
        }
        out.extend(self.detect_firmware_payload(txn));
        out
    }

    /// Absolute URLs in bodies or header values that look like firmware
    /// downloads: path ends in a firmware extension, or the URL itself
    /// contains a corpus keyword.
    pub fn detect_firmware_url(&self, txn: &HttpTransaction) -> Vec<Evidence> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for surface in evidence_surfaces(txn) {
            for m in self.url_pattern.find_iter(&surface) {
                let Ok(text) = std::str::from_utf8(m.as_bytes()) else { continue };
                // Trailing XML/JSON punctuation is not part of the URL.
                let text = text.trim_end_matches(['.', ',', ';', ')', ']', '}']);
                let Ok(url) = Url::parse(text) else { continue };
                let path = url.path().to_ascii_lowercase();
                let by_extension =
                    self.cfg.firmware_extensions.iter().any(|ext| path.ends_with(ext.as_str()));
                let lower = text.to_ascii_lowercase();
                let by_keyword = self.cfg.keywords.iter().any(|kw| lower.contains(kw.as_str()));
                if !(by_extension || by_keyword) {
                    continue;
                }
                if seen.contains(&text.to_string()) {
                    continue;
                }
                seen.push(text.to_string());
                out.push(Evidence {
                    kind: EvidenceKind::FirmwareUrl,
                    detail: text.to_string(),
                    transport_plaintext: url.scheme() == "http",
                });
            }
        }
        out
    }

    /// Dotted version numbers adjacent to a firmware-ish key name, reported
    /// verbatim.
    pub fn detect_version_advertisement(&self, txn: &HttpTransaction) -> Vec<Evidence> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        let mut surfaces = evidence_surfaces(txn);
        if let Some(req) = &txn.request {
            surfaces.push(req.uri.clone().into_bytes());
        }
        for surface in surfaces {
            for cap in self.version_pattern.captures_iter(&surface) {
                let Some(version) = cap.get(1) else { continue };
                let Ok(version) = std::str::from_utf8(version.as_bytes()) else { continue };
                if seen.contains(&version.to_string()) {
                    continue;
                }
                seen.push(version.to_string());
                out.push(Evidence {
                    kind: EvidenceKind::VersionAdvertisement,
                    detail: version.to_string(),
                    transport_plaintext: true,
                });
            }
        }
        out
    }

    /// Update-named services: SSDP NT/ST/USN URNs and XML service listings
    /// whose action or service names carry an update token.
    pub fn detect_update_service(&self, txn: &HttpTransaction) -> Vec<Evidence> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        let mut push = |name: &str, control: Option<&str>, out: &mut Vec<Evidence>| {
            let lower = name.to_ascii_lowercase();
            if !self.cfg.service_tokens.iter().any(|t| lower.contains(t.as_str())) {
                return;
            }
            let detail = match control {
                Some(c) => format!("{name} @ {c}"),
                None => name.to_string(),
            };
            if seen.contains(&detail) {
                return;
            }
            seen.push(detail.clone());
            out.push(Evidence {
                kind: EvidenceKind::UpdateService,
                detail,
                transport_plaintext: true,
            });
        };
        let mut headers: Vec<&HeaderField> = Vec::new();
        if let Some(req) = &txn.request {
            headers.extend(req.headers.iter());
        }
        if let Some(resp) = &txn.response {
            headers.extend(resp.headers.iter());
        }
        for h in headers {
            if ["nt", "st", "usn"].contains(&h.name.to_ascii_lowercase().as_str()) {
                push(h.value.trim(), None, &mut out);
            }
        }
        for surface in evidence_surfaces(txn) {
            // A single control URL in the listing is taken to govern the
            // advertised actions; multiple URLs are ambiguous, so omitted.
            let controls: Vec<String> = self
                .control_url_pattern
                .captures_iter(&surface)
                .filter_map(|c| c.get(1))
                .filter_map(|m| std::str::from_utf8(m.as_bytes()).ok())
                .map(|s| s.to_string())
                .collect();
            let control = match controls.as_slice() {
                [only] => Some(only.clone()),
                _ => None,
            };
            for pat in [&self.xml_name_pattern, &self.service_type_pattern] {
                for cap in pat.captures_iter(&surface) {
                    let Some(name) = cap.get(1) else { continue };
                    let Ok(name) = std::str::from_utf8(name.as_bytes()) else { continue };
                    push(name, control.as_deref(), &mut out);
                }
            }
        }
        out
    }

    /// Integrity-metadata field names (signature, certificate, ...) in
    /// structured bodies. Callers restrict this to keyword-flagged
    /// transactions to avoid counting routine TLS-certificate chatter.
    pub fn detect_signature_fields(&self, txn: &HttpTransaction) -> Vec<Evidence> {
        let mut seen = Vec::new();
        let mut out = Vec::new();
        for surface in evidence_surfaces(txn) {
            for pat in [&self.json_key_pattern, &self.xml_tag_pattern] {
                for cap in pat.captures_iter(&surface) {
                    let Some(key) = cap.get(1) else { continue };
                    let Ok(key) = std::str::from_utf8(key.as_bytes()) else { continue };
                    let lower = key.to_ascii_lowercase();
                    if !self.cfg.signature_tokens.iter().any(|t| lower.contains(t.as_str())) {
                        continue;
                    }
                    if seen.contains(&key.to_string()) {
                        continue;
                    }
                    seen.push(key.to_string());
                    out.push(Evidence {
                        kind: EvidenceKind::SignatureField,
                        detail: key.to_string(),
                        transport_plaintext: true,
                    });
                }
            }
        }
        out
    }

    /// Large response bodies that look like firmware images: size over the
    /// threshold and either an eligible content type or known container
    /// magic, with media types excluded.
    pub fn detect_firmware_payload(&self, txn: &HttpTransaction) -> Option<Evidence> {
        let resp = txn.response.as_ref()?;
        let body = decode_body(&resp.headers, &resp.body);
        let size = body.bytes.len() as u64;
        if size < self.cfg.payload_threshold {
            return None;
        }
        let content_type = header_get(&resp.headers, "Content-Type")
            .map(|v| v.split(';').next().unwrap_or(v).trim().to_ascii_lowercase());
        if let Some(ct) = &content_type {
            if self.cfg.payload_content_type_deny.iter().any(|p| ct.starts_with(p.as_str())) {
                return None;
            }
        }
        let by_type = content_type
            .as_ref()
            .is_some_and(|ct| self.cfg.payload_content_types.iter().any(|a| a == ct));
        if !(by_type || container_magic(&body.bytes).is_some()) {
            return None;
        }
        let label = content_type.unwrap_or_else(|| "unknown".to_string());
        Some(Evidence {
            kind: EvidenceKind::FirmwarePayload,
            detail: format!("{label};size={size}"),
            transport_plaintext: true,
        })
    }
}

/// Magic-byte sniffing for firmware container formats.
fn container_magic(body: &[u8]) -> Option<&'static str> {
    if body.starts_with(b"PK\x03\x04") {
        return Some("zip");
    }
    if body.starts_with(b"hsqs") || body.starts_with(b"sqsh") {
        return Some("squashfs");
    }
    if body.starts_with(&[0x27, 0x05, 0x19, 0x56]) {
        return Some("uimage");
    }
    if body.starts_with(&[0x1f, 0x8b]) {
        return Some("gzip");
    }
    None
}

fn push_header_lines(buf: &mut Vec<u8>, headers: &[HeaderField]) {
    for h in headers {
        buf.extend_from_slice(h.name.as_bytes());
        buf.extend_from_slice(b": ");
        buf.extend_from_slice(h.value.as_bytes());
        buf.extend_from_slice(b"\r\n");
    }
    buf.extend_from_slice(b"\r\n");
}

fn header_block(headers: &[HeaderField]) -> Vec<u8> {
    let mut buf = Vec::new();
    push_header_lines(&mut buf, headers);
    buf
}

/// Decoded request and response bodies plus header values: the surfaces the
/// evidence extractors search.
fn evidence_surfaces(txn: &HttpTransaction) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    if let Some(req) = &txn.request {
        out.push(header_block(&req.headers));
        out.push(decode_body(&req.headers, &req.body).bytes.into_owned());
    }
    if let Some(resp) = &txn.response {
        out.push(header_block(&resp.headers));
        out.push(decode_body(&resp.headers, &resp.body).bytes.into_owned());
    }
    out
}

/// Collapses duplicate (keyword, location) entries by summing counts and
/// orders deterministically.
fn merge_hits(hits: Vec<KeywordHit>) -> Vec<KeywordHit> {
    let mut merged: BTreeMap<(String, HitLocation), u64> = BTreeMap::new();
    for h in hits {
        *merged.entry((h.keyword, h.location)).or_insert(0) += h.count;
    }
    merged
        .into_iter()
        .map(|((keyword, location), count)| KeywordHit { keyword, count, location })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DetectorConfig;
    use crate::flows::FlowKey;
    use crate::http::{RequestData, ResponseData, TxnFlags};

    fn det() -> Detector {
        Detector::new(&DetectorConfig::default()).unwrap()
    }

    fn counts(content: &[u8]) -> BTreeMap<String, u64> {
        det().scan_keywords(content).into_iter().collect()
    }

    #[test]
    fn keyword_scan_matches_published_example() {
        let got = counts(b"Firmware-Update available; no updates queued");
        let want: BTreeMap<String, u64> =
            [("firmware".to_string(), 1), ("update".to_string(), 2)].into_iter().collect();
        assert_eq!(got, want);
        assert_eq!(counts(b"UPGRADE"), BTreeMap::from([("upgrade".to_string(), 1)]));
    }

    #[test]
    fn keyword_scan_is_ascii_case_insensitive_and_binary_safe() {
        let mut buf = vec![0u8, 255, 13, 10];
        buf.extend_from_slice(b"DoWnLoAd");
        buf.push(0);
        assert_eq!(counts(&buf), BTreeMap::from([("download".to_string(), 1)]));
        assert!(counts(&[0u8; 1024]).is_empty());
    }

    #[test]
    fn per_keyword_matches_do_not_overlap() {
        // "updateupdate" = 2; "updatupdate" = 1.
        assert_eq!(counts(b"updateupdate"), BTreeMap::from([("update".to_string(), 2)]));
        assert_eq!(counts(b"updatupdate"), BTreeMap::from([("update".to_string(), 1)]));
    }

    /// Reference scanner: literal every-offset walk with skip-past-match.
    fn naive_scan(content: &[u8], keyword: &str) -> u64 {
        let kw = keyword.as_bytes();
        let mut count = 0;
        let mut i = 0;
        while i + kw.len() <= content.len() {
            if content[i..i + kw.len()].eq_ignore_ascii_case(kw) {
                count += 1;
                i += kw.len();
            } else {
                i += 1;
            }
        }
        count
    }

    #[test]
    fn scan_agrees_with_naive_oracle_on_seeded_buffers() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = det();
        for _ in 0..500 {
            let len = rng.gen_range(0..2048);
            let mut buf: Vec<u8> = (0..len).map(|_| rng.gen_range(0x20..0x7f)).collect();
            // Seed some real keywords so matches actually occur.
            for _ in 0..rng.gen_range(0..4) {
                if buf.len() > 8 {
                    let pos = rng.gen_range(0..buf.len() - 8);
                    buf[pos..pos + 6].copy_from_slice(b"UpDaTe");
                }
            }
            let got: BTreeMap<String, u64> = d.scan_keywords(&buf).into_iter().collect();
            for kw in crate::config::DEFAULT_KEYWORDS {
                assert_eq!(
                    got.get(kw).copied().unwrap_or(0),
                    naive_scan(&buf, kw),
                    "keyword {kw} on {buf:?}"
                );
            }
        }
    }

    fn txn(req: Option<RequestData>, resp: Option<ResponseData>) -> HttpTransaction {
        HttpTransaction {
            flow: FlowKey::tcp([10, 0, 0, 5].into(), 40000, [203, 0, 113, 9].into(), 80),
            transport: HttpTransport::Tcp,
            request: req,
            response: resp,
            request_ts: Some(1_600_000_000_000_000),
            response_ts: Some(1_600_000_000_100_000),
            flags: TxnFlags::default(),
        }
    }

    fn get(uri: &str) -> RequestData {
        RequestData {
            method: "GET".to_string(),
            uri: uri.to_string(),
            version: "HTTP/1.1".to_string(),
            headers: vec![HeaderField::new("Host", "dev.example")],
            body: Vec::new(),
        }
    }

    fn ok_with(content_type: &str, body: &[u8]) -> ResponseData {
        ResponseData {
            version: "HTTP/1.1".to_string(),
            status: 200,
            reason: "OK".to_string(),
            headers: vec![HeaderField::new("Content-Type", content_type)],
            body: body.to_vec(),
        }
    }

    #[test]
    fn transaction_scan_reports_locations() {
        let t = txn(
            Some(get("/fw/update?download=1")),
            Some(ok_with("text/xml", b"<note>update firmware update</note>")),
        );
        let hits = det().scan_transaction(&t);
        let uri: Vec<_> =
            hits.iter().filter(|h| h.location == HitLocation::RequestUri).collect();
        assert_eq!(uri.len(), 2); // download, update
        let body: Vec<_> =
            hits.iter().filter(|h| h.location == HitLocation::ResponseBody).collect();
        assert_eq!(body.len(), 2); // firmware:1, update:2
        assert!(flag_capture(&hits));
        assert!(!flag_capture(&[]));
    }

    #[test]
    fn firmware_url_by_extension_and_scheme() {
        let t = txn(
            Some(get("/check")),
            Some(ok_with("text/xml", b"<url>http://cdn.example/fw/v2.bin</url>")),
        );
        let ev = det().detect_firmware_url(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "http://cdn.example/fw/v2.bin");
        assert!(ev[0].transport_plaintext);

        let t = txn(
            Some(get("/check")),
            Some(ok_with("application/json", br#"{"download":"https://x.example/y.img"}"#)),
        );
        let ev = det().detect_firmware_url(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "https://x.example/y.img");
        assert!(!ev[0].transport_plaintext);

        let t = txn(Some(get("/check")), Some(ok_with("text/plain", b"no urls here")));
        assert!(det().detect_firmware_url(&t).is_empty());
    }

    #[test]
    fn firmware_url_by_keyword_in_url() {
        let t = txn(
            None,
            Some(ok_with("text/plain", b"see http://cdn.example/firmware/latest for info")),
        );
        let ev = det().detect_firmware_url(&t);
        assert_eq!(ev.len(), 1);
        assert!(ev[0].detail.contains("/firmware/latest"));
    }

    #[test]
    fn version_advertisement_examples() {
        let t = txn(Some(get("/check?fw_version=2.1.4")), None);
        let ev = det().detect_version_advertisement(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "2.1.4");

        let t = txn(
            None,
            Some(ok_with("text/xml", b"<firmwareVersion>1.0.9</firmwareVersion>")),
        );
        let ev = det().detect_version_advertisement(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "1.0.9");

        let t = txn(None, Some(ok_with("text/plain", b"firmware team rocks")));
        assert!(det().detect_version_advertisement(&t).is_empty());
    }

    #[test]
    fn update_service_from_xml_and_ssdp() {
        let body = b"<service><name>UpdateFirmware</name><controlURL>/upnp/control/u1</controlURL></service>";
        let t = txn(None, Some(ok_with("text/xml", body)));
        let ev = det().detect_update_service(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "UpdateFirmware @ /upnp/control/u1");

        let body = b"<service><name>GetBinaryState</name></service>";
        let t = txn(None, Some(ok_with("text/xml", body)));
        assert!(det().detect_update_service(&t).is_empty());

        let mut req = get("*");
        req.method = "NOTIFY".to_string();
        req.headers.push(HeaderField::new("ST", "urn:Belkin:service:firmwareupdate:1"));
        let mut t = txn(Some(req), None);
        t.transport = HttpTransport::SsdpUdp;
        let ev = det().detect_update_service(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "urn:Belkin:service:firmwareupdate:1");
    }

    #[test]
    fn signature_fields_found_in_structured_bodies() {
        let t = txn(
            None,
            Some(ok_with("text/xml", b"<signature>MEUCIQ</signature><certificate>MIIC</certificate>")),
        );
        let mut details: Vec<String> =
            det().detect_signature_fields(&t).into_iter().map(|e| e.detail).collect();
        details.sort();
        assert_eq!(details, vec!["certificate".to_string(), "signature".to_string()]);

        let t = txn(None, Some(ok_with("application/json", br#"{"certificate":"MIIC"}"#)));
        let ev = det().detect_signature_fields(&t);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].detail, "certificate");
    }

    #[test]
    fn signature_fields_gated_by_keyword_flag() {
        let d = det();
        // Body has a signature-ish key but no keywords anywhere.
        let t = txn(None, Some(ok_with("application/json", br#"{"hashbrown":"recipe"}"#)));
        let hits = d.scan_transaction(&t);
        assert!(hits.is_empty());
        assert!(d.evidence_for(&t, &hits).is_empty());
        // Same body in a flagged transaction is reported.
        let t = txn(
            Some(get("/update")),
            Some(ok_with("application/json", br#"{"hashbrown":"recipe"}"#)),
        );
        let hits = d.scan_transaction(&t);
        let kinds: Vec<EvidenceKind> =
            d.evidence_for(&t, &hits).into_iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EvidenceKind::SignatureField));
        assert!(kinds.contains(&EvidenceKind::KeywordFlag));
    }

    #[test]
    fn firmware_payload_rules() {
        let d = det();
        let mut big = vec![b'A'; 2 * 1024 * 1024];
        big[..4].copy_from_slice(b"PK\x03\x04");
        let t = txn(None, Some(ok_with("application/octet-stream", &big)));
        let ev = d.detect_firmware_payload(&t).unwrap();
        assert_eq!(ev.kind, EvidenceKind::FirmwarePayload);
        assert!(ev.detail.starts_with("application/octet-stream;size=2097152"));

        // Too small.
        let t = txn(None, Some(ok_with("application/octet-stream", b"PK\x03\x04tiny")));
        assert!(d.detect_firmware_payload(&t).is_none());
        // Media type denied even with magic.
        let t = txn(None, Some(ok_with("video/mp4", &big)));
        assert!(d.detect_firmware_payload(&t).is_none());
        // No magic, no eligible type.
        let plain = vec![b'x'; 2 * 1024 * 1024];
        let t = txn(None, Some(ok_with("text/plain", &plain)));
        assert!(d.detect_firmware_payload(&t).is_none());
        // Magic alone qualifies an unknown type.
        let mut squash = vec![0u8; 2 * 1024 * 1024];
        squash[..4].copy_from_slice(b"hsqs");
        let t = txn(None, Some(ok_with("application/x-thing", &squash)));
        assert!(d.detect_firmware_payload(&t).is_some());
    }

    #[test]
    fn ssdp_messages_scan_as_one_surface() {
        let mut req = get("*");
        req.method = "NOTIFY".to_string();
        req.headers.push(HeaderField::new("NT", "urn:vendor:service:softwareupdate:1"));
        let mut t = txn(Some(req), None);
        t.transport = HttpTransport::SsdpUdp;
        let hits = det().scan_transaction(&t);
        assert!(hits.iter().all(|h| h.location == HitLocation::SsdpMessage));
        let kw: BTreeMap<&str, u64> =
            hits.iter().map(|h| (h.keyword.as_str(), h.count)).collect();
        assert_eq!(kw.get("software"), Some(&1));
        assert_eq!(kw.get("update"), Some(&1));
    }

    #[test]
    fn hit_locations_round_trip() {
        for loc in [
            HitLocation::RequestUri,
            HitLocation::RequestHeaders,
            HitLocation::RequestBody,
            HitLocation::ResponseHeaders,
            HitLocation::ResponseBody,
            HitLocation::SsdpMessage,
        ] {
            assert_eq!(HitLocation::parse(loc.as_str()), Some(loc));
        }
        for kind in [
            EvidenceKind::KeywordFlag,
            EvidenceKind::FirmwareUrl,
            EvidenceKind::VersionAdvertisement,
            EvidenceKind::UpdateService,
            EvidenceKind::SignatureField,
            EvidenceKind::FirmwarePayload,
        ] {
            assert_eq!(EvidenceKind::parse(kind.as_str()), Some(kind));
        }
    }
}
