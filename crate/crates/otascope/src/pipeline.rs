//! End-to-end extraction: decode a capture, reassemble flows, parse HTTP and
//! TLS, run the detector, persist bodies to the object store, and commit one
//! bundle per capture. The multi-worker driver lives here too; workers only
//! ever produce immutable bundles, and a single committer writes the store,
//! so results cannot depend on scheduling.

use std::path::Path;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::ciphers::CipherCatalog;
use crate::config::Config;
use crate::detector::{flag_capture, Detector, DetectorError};
use crate::flows::{decode_capture, group_udp, reassemble_tcp, DecodeResult};
use crate::http::objects::{sha256_hex, ObjectStore};
use crate::http::{decode_body, header_get, parse_http, parse_ssdp, HttpTransaction};
use crate::ingest::{partition_work, scan_dataset, CaptureMeta, IngestError};
use crate::store::{
    evidence_id, handshake_id, txn_id, CaptureBundle, CaptureRow, EvidenceRow, HandshakeRow,
    HitRow, Store, StoreError, TxnRow,
};
use crate::tls::extract_hellos;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error("object store: {0}")]
    Objects(#[from] std::io::Error),
    #[error("worker thread panicked")]
    WorkerPanic,
}

/// Totals for one extraction run. Worker count and wall-clock stay out of the
/// store so its content is schedule-independent; they are reported here only.
#[derive(Debug, Clone, Default)]
pub struct ExtractStats {
    pub captures: u64,
    /// (capture_id, error) for captures that failed to decode.
    pub failures: Vec<(String, String)>,
    pub transactions: u64,
    pub handshakes: u64,
    pub keyword_hits: u64,
    pub evidence: u64,
    pub flagged_captures: u64,
    pub elapsed: Duration,
}

impl ExtractStats {
    pub fn captures_per_sec(&self) -> f64 {
        let secs = self.elapsed.as_secs_f64();
        if secs > 0.0 {
            self.captures as f64 / secs
        } else {
            0.0
        }
    }

    fn absorb(&mut self, bundle: &CaptureBundle) {
        self.captures += 1;
        if let Some(cap) = &bundle.capture {
            if let Some(err) = &cap.error {
                self.failures.push((cap.capture_id.clone(), err.clone()));
            }
            if cap.flagged {
                self.flagged_captures += 1;
            }
        }
        self.transactions += bundle.transactions.len() as u64;
        self.handshakes += bundle.handshakes.len() as u64;
        self.keyword_hits += bundle.hits.iter().map(|h| h.count).sum::<u64>();
        self.evidence += bundle.evidence.len() as u64;
    }
}

/// Stable sort key for transactions within a capture; index-derived row ids
/// depend on it.
fn txn_sort_key(t: &HttpTransaction) -> (i64, String, String, String) {
    (
        t.primary_ts().unwrap_or(i64::MAX),
        t.flow.to_string(),
        t.request.as_ref().map(|r| r.uri.clone()).unwrap_or_default(),
        t.request.as_ref().map(|r| r.method.clone()).unwrap_or_default(),
    )
}

/// Builds every store row for one decoded capture. `objects` is optional so
/// embedders can analyze without touching the filesystem; refs and lengths
/// are computed either way.
pub fn build_bundle(
    meta: &CaptureMeta,
    decoded: &DecodeResult,
    detector: &Detector,
    objects: Option<&ObjectStore>,
) -> Result<CaptureBundle, PipelineError> {
    let pairs = reassemble_tcp(&decoded.packets);
    let groups = group_udp(&decoded.packets);

    let mut txns: Vec<HttpTransaction> = Vec::new();
    let mut hellos = Vec::new();
    for pair in &pairs {
        txns.extend(parse_http(pair));
        hellos.extend(extract_hellos(pair));
    }
    for group in groups.iter().filter(|g| g.ssdp_candidate) {
        txns.extend(parse_ssdp(group));
    }
    txns.sort_by_cached_key(txn_sort_key);
    hellos.sort_by_cached_key(|h| (h.ts.unwrap_or(i64::MAX), h.flow.to_string(), h.kind.as_str()));

    let mut bundle = CaptureBundle::default();
    let mut any_hit = false;
    for (i, txn) in txns.iter().enumerate() {
        let id = txn_id(&meta.capture_id, i);
        let store_side = |headers: &[crate::http::parser::HeaderField],
                          body: &[u8]|
         -> Result<(Option<String>, u64), PipelineError> {
            let decoded_body = decode_body(headers, body);
            let len = decoded_body.bytes.len() as u64;
            if len == 0 {
                return Ok((None, 0));
            }
            let sha = match objects {
                Some(store) => store.put(&decoded_body.bytes)?.sha256,
                None => sha256_hex(&decoded_body.bytes),
            };
            Ok((Some(sha), len))
        };
        let (request_object, request_len) = match &txn.request {
            Some(r) => {
                let (obj, len) = store_side(&r.headers, &r.body)?;
                (obj, Some(len))
            }
            None => (None, None),
        };
        let (response_object, response_len) = match &txn.response {
            Some(r) => {
                let (obj, len) = store_side(&r.headers, &r.body)?;
                (obj, Some(len))
            }
            None => (None, None),
        };
        let content_type = txn
            .response
            .as_ref()
            .and_then(|r| header_get(&r.headers, "Content-Type"))
            .map(|v| v.trim().to_string());

        let hits = detector.scan_transaction(txn);
        any_hit |= flag_capture(&hits);
        for (j, ev) in detector.evidence_for(txn, &hits).into_iter().enumerate() {
            bundle.evidence.push(EvidenceRow {
                evidence_id: evidence_id(&id, j),
                capture_id: meta.capture_id.clone(),
                txn_id: id.clone(),
                device: meta.device_name.clone(),
                kind: ev.kind,
                detail: ev.detail,
                transport_plaintext: ev.transport_plaintext,
            });
        }
        for hit in hits {
            bundle.hits.push(HitRow {
                txn_id: id.clone(),
                keyword: hit.keyword,
                location: hit.location,
                count: hit.count,
            });
        }
        bundle.transactions.push(TxnRow {
            txn_id: id,
            capture_id: meta.capture_id.clone(),
            flow: txn.flow.to_string(),
            transport: txn.transport.as_str().to_string(),
            method: txn.request.as_ref().map(|r| r.method.clone()),
            uri: txn.request.as_ref().map(|r| r.uri.clone()),
            status: txn.response.as_ref().map(|r| r.status),
            request_object,
            request_len,
            response_object,
            response_len,
            content_type,
            flags: txn.flags.canonical(),
            ts: txn.primary_ts(),
        });
    }
    for (i, hello) in hellos.iter().enumerate() {
        bundle.handshakes.push(HandshakeRow {
            hs_id: handshake_id(&meta.capture_id, i),
            capture_id: meta.capture_id.clone(),
            flow: hello.flow.to_string(),
            kind: hello.kind.as_str().to_string(),
            legacy_version: hello.legacy_version,
            effective_version: hello.effective_version,
            server_name: hello.server_name.clone(),
            incomplete: hello.incomplete,
            ts: hello.ts,
            suites: hello.cipher_suites.clone(),
        });
    }
    bundle.capture = Some(CaptureRow {
        capture_id: meta.capture_id.clone(),
        dataset: meta.dataset_name.clone(),
        region: meta.region.as_str().to_string(),
        device: meta.device_name.clone(),
        experiment: meta.experiment_label.clone(),
        event_category: meta.event_category,
        file_size: meta.file_size,
        frame_count: decoded.frame_count,
        truncated: decoded.truncated,
        error: None,
        txn_count: bundle.transactions.len() as u64,
        flagged: any_hit,
    });
    Ok(bundle)
}

/// Decodes and analyzes one capture file. Decode failures produce a bundle
/// whose capture row carries the error, with no child rows — the capture still
/// counts, as the totals must account for every file discovered.
pub fn process_capture(
    meta: &CaptureMeta,
    root: &Path,
    detector: &Detector,
    objects: Option<&ObjectStore>,
) -> Result<CaptureBundle, PipelineError> {
    let path = meta.absolute_path(root);
    match decode_capture(&path) {
        Ok(decoded) => build_bundle(meta, &decoded, detector, objects),
        Err(e) => Ok(CaptureBundle {
            capture: Some(CaptureRow {
                capture_id: meta.capture_id.clone(),
                dataset: meta.dataset_name.clone(),
                region: meta.region.as_str().to_string(),
                device: meta.device_name.clone(),
                experiment: meta.experiment_label.clone(),
                event_category: meta.event_category,
                file_size: meta.file_size,
                frame_count: 0,
                truncated: false,
                error: Some(e.to_string()),
                txn_count: 0,
                flagged: false,
            }),
            ..Default::default()
        }),
    }
}

pub struct ExtractRequest<'a> {
    pub dataset_root: &'a Path,
    pub store: &'a mut Store,
    pub objects_dir: &'a Path,
    pub config: &'a Config,
    pub catalog: &'a CipherCatalog,
    pub workers: usize,
}

/// Runs the whole pipeline: scan, fan out per-capture work, commit bundles as
/// they arrive. The progress callback fires once per finished capture with
/// (done, total, capture_id, error).
pub fn run_extract(
    req: ExtractRequest<'_>,
    mut progress: impl FnMut(usize, usize, &str, Option<&str>),
) -> Result<ExtractStats, PipelineError> {
    let started = Instant::now();
    let detector = Arc::new(Detector::new(&req.config.detector)?);
    let objects = ObjectStore::create(req.objects_dir)?;
    let metas = scan_dataset(req.dataset_root, req.config)?;
    let total = metas.len();

    req.store.set_run_info("tool_version", env!("CARGO_PKG_VERSION"))?;
    req.store.set_run_info("config_digest", &req.config.digest())?;
    req.store.set_run_info("catalog_snapshot_date", &req.catalog.snapshot_date)?;

    let mut stats = ExtractStats::default();
    let mut done = 0usize;
    let mut commit = |bundle: CaptureBundle,
                      store: &mut Store,
                      done: &mut usize|
     -> Result<(), PipelineError> {
        stats.absorb(&bundle);
        store.commit_capture(&bundle)?;
        *done += 1;
        if let Some(cap) = &bundle.capture {
            progress(*done, total, &cap.capture_id, cap.error.as_deref());
        }
        Ok(())
    };

    if req.workers <= 1 {
        for meta in &metas {
            let bundle =
                process_capture(meta, req.dataset_root, &detector, Some(&objects))?;
            commit(bundle, req.store, &mut done)?;
        }
    } else {
        let batches = partition_work(metas, req.workers)?;
        let (tx, rx) = mpsc::channel::<Result<CaptureBundle, PipelineError>>();
        std::thread::scope(|scope| -> Result<(), PipelineError> {
            for batch in batches {
                let tx = tx.clone();
                let detector = Arc::clone(&detector);
                let objects = objects.clone();
                let root = req.dataset_root;
                scope.spawn(move || {
                    for meta in &batch {
                        let result = process_capture(meta, root, &detector, Some(&objects));
                        if tx.send(result).is_err() {
                            return; // committer gone; nothing left to do
                        }
                    }
                });
            }
            drop(tx);
            for result in rx {
                commit(result?, req.store, &mut done)?;
            }
            Ok(())
        })?;
    }

    stats.elapsed = started.elapsed();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{EventCategory, Region};
    use crate::detector::EvidenceKind;
    use crate::fixtures::frames::{self, ConversationOpts};
    use crate::fixtures::pcapio::{PcapWriter, LINKTYPE_ETHERNET};
    use crate::store::Mode;
    use std::net::Ipv4Addr;

    const CLIENT: Ipv4Addr = Ipv4Addr::new(192, 168, 1, 50);
    const SERVER: Ipv4Addr = Ipv4Addr::new(203, 0, 113, 80);

    fn http_capture_bytes(response_body: &str) -> Vec<u8> {
        let request = b"GET /fwcheck HTTP/1.1\r\nHost: x\r\n\r\n".to_vec();
        let response = format!(
            "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\n\r\n{}",
            response_body.len(),
            response_body
        )
        .into_bytes();
        let frames = frames::tcp_conversation(
            CLIENT,
            40000,
            SERVER,
            80,
            &request,
            &response,
            &ConversationOpts::default(),
        );
        let mut w = PcapWriter::new(Vec::new(), LINKTYPE_ETHERNET).unwrap();
        for (i, f) in frames.iter().enumerate() {
            w.write_frame(1_600_000_000_000_000 + i as i64 * 1000, f).unwrap();
        }
        w.finish().unwrap()
    }

    fn meta_for(dir: &Path, rel: &str, bytes: &[u8]) -> CaptureMeta {
        let path = dir.join(rel);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, bytes).unwrap();
        CaptureMeta {
            capture_id: rel.to_string(),
            dataset_name: "demo".to_string(),
            region: Region::Us,
            device_name: "cam".to_string(),
            experiment_label: "power".to_string(),
            event_category: EventCategory::Power,
            file_size: bytes.len() as u64,
        }
    }

    #[test]
    fn capture_flows_through_to_bundle() {
        let dir = tempfile::tempdir().unwrap();
        let bytes = http_capture_bytes("firmware update ready at http://203.0.113.80/fw.bin now");
        let meta = meta_for(dir.path(), "US/cam/power/0.pcap", &bytes);
        let detector = Detector::new(&Config::default().detector).unwrap();
        let objects = ObjectStore::create(&dir.path().join("objects")).unwrap();
        let bundle =
            process_capture(&meta, dir.path(), &detector, Some(&objects)).unwrap();

        let cap = bundle.capture.as_ref().unwrap();
        assert_eq!(cap.error, None);
        assert!(cap.flagged);
        assert_eq!(cap.txn_count, 1);
        assert!(cap.frame_count >= 6);

        let txn = &bundle.transactions[0];
        assert_eq!(txn.method.as_deref(), Some("GET"));
        assert_eq!(txn.uri.as_deref(), Some("/fwcheck"));
        assert_eq!(txn.status, Some(200));
        assert_eq!(txn.request_object, None, "empty request body stores nothing");
        assert_eq!(txn.request_len, Some(0));
        let body_sha = txn.response_object.as_ref().unwrap();
        assert!(objects.path_for(body_sha).exists());
        assert_eq!(txn.content_type.as_deref(), Some("text/plain"));

        assert!(bundle.hits.iter().any(|h| h.keyword == "firmware" && h.count == 1));
        assert!(bundle.hits.iter().any(|h| h.keyword == "update" && h.count == 1));
        assert!(bundle
            .evidence
            .iter()
            .any(|e| e.kind == EvidenceKind::FirmwareUrl && e.detail.contains("/fw.bin")));
        // Evidence ids are dense per transaction.
        let ids: Vec<&str> = bundle.evidence.iter().map(|e| e.evidence_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), ids.len());
    }

    #[test]
    fn unreadable_capture_becomes_error_row() {
        let dir = tempfile::tempdir().unwrap();
        let meta = meta_for(dir.path(), "US/cam/power/bad.pcap", b"not a pcap at all");
        let detector = Detector::new(&Config::default().detector).unwrap();
        let bundle = process_capture(&meta, dir.path(), &detector, None).unwrap();
        let cap = bundle.capture.unwrap();
        assert!(cap.error.is_some());
        assert_eq!(cap.txn_count, 0);
        assert!(bundle.transactions.is_empty());
    }

    #[test]
    fn run_extract_commits_and_reports() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        let bytes = http_capture_bytes("update check: nothing new");
        for rel in ["US/cam/power/0.pcap", "US/cam/power/1.pcap", "US/plug/idle/0.pcap"] {
            let path = root.join(rel);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &bytes).unwrap();
        }
        std::fs::write(root.join("US/plug/idle/junk.pcap"), b"junk").unwrap();

        let mut store = Store::open(&dir.path().join("store.sqlite"), Mode::Write).unwrap();
        let config = Config::default();
        let catalog = CipherCatalog::bundled();
        let mut seen = Vec::new();
        let stats = run_extract(
            ExtractRequest {
                dataset_root: &root,
                store: &mut store,
                objects_dir: &dir.path().join("objects"),
                config: &config,
                catalog: &catalog,
                workers: 1,
            },
            |done, total, id, _err| seen.push((done, total, id.to_string())),
        )
        .unwrap();

        assert_eq!(stats.captures, 4);
        assert_eq!(stats.failures.len(), 1);
        assert_eq!(stats.transactions, 3);
        assert_eq!(stats.flagged_captures, 3);
        assert_eq!(seen.len(), 4);
        assert!(seen.iter().all(|(_, total, _)| *total == 4));

        assert_eq!(store.captures().unwrap().len(), 4);
        let info = store.run_info().unwrap();
        assert_eq!(info.get("config_digest"), Some(&config.digest()));
        assert!(info.contains_key("catalog_snapshot_date"));
        assert!(!info.contains_key("workers"));
    }

    #[test]
    fn worker_count_does_not_change_store_content() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("data");
        for (i, rel) in ["US/cam/power/0.pcap", "US/cam/power/1.pcap", "US/plug/idle/0.pcap",
                         "US/plug/idle/1.pcap", "US/tv/android_x/0.pcap"]
        .iter()
        .enumerate()
        {
            let body = format!("firmware v{i}.0 update http://203.0.113.80/fw{i}.bin");
            let path = root.join(rel);
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, http_capture_bytes(&body)).unwrap();
        }
        let config = Config::default();
        let catalog = CipherCatalog::bundled();

        let mut dumps = Vec::new();
        for workers in [1usize, 4] {
            let out = tempfile::tempdir().unwrap();
            let mut store = Store::open(&out.path().join("store.sqlite"), Mode::Write).unwrap();
            run_extract(
                ExtractRequest {
                    dataset_root: &root,
                    store: &mut store,
                    objects_dir: &out.path().join("objects"),
                    config: &config,
                    catalog: &catalog,
                    workers,
                },
                |_, _, _, _| {},
            )
            .unwrap();
            dumps.push(store.dump_all().unwrap());
        }
        assert_eq!(dumps[0], dumps[1]);
    }
}
