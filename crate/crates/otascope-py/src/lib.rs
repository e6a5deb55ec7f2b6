//! Python bindings: thin wrappers over the analysis library so notebooks and
//! scripts can scan buffers, inspect catalogs, run extractions, and read the
//! resulting stores without shelling out to the CLI.

use std::fs;
use std::path::PathBuf;

use pyo3::exceptions::{PyFileNotFoundError, PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use otascope::analysis::StoreSnapshot;
use otascope::ciphers::{CipherCatalog as CoreCatalog, SuiteDisposition};
use otascope::config::{Config, EventCategory, Region};
use otascope::detector::Detector;
use otascope::fixtures::scenarios;
use otascope::ingest::CaptureMeta;
use otascope::pipeline::{process_capture, run_extract, ExtractRequest};
use otascope::report::{build_reports, write_reports, ReportFormat};
use otascope::store::{CaptureBundle, Mode, Store as CoreStore, StoreError};

fn val_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn io_err(e: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn store_err(e: StoreError) -> PyErr {
    match e {
        StoreError::Missing(_) => PyFileNotFoundError::new_err(e.to_string()),
        other => io_err(other),
    }
}

/// Accepts `str` (encoded as UTF-8) or any bytes-like argument.
fn content_bytes(data: &Bound<'_, PyAny>) -> PyResult<Vec<u8>> {
    if let Ok(s) = data.extract::<String>() {
        return Ok(s.into_bytes());
    }
    data.extract::<Vec<u8>>()
}

/// Detector built from the default config, with the keyword corpus swapped
/// out when the caller provides one.
fn detector_for(keywords: Option<Vec<String>>) -> PyResult<(Config, Detector)> {
    let mut config = Config::default();
    if let Some(ks) = keywords {
        config.detector.keywords = ks;
    }
    let detector = Detector::new(&config.detector).map_err(val_err)?;
    Ok((config, detector))
}

/// Case-insensitive keyword counts for a buffer, as `{keyword: count}`.
#[pyfunction]
#[pyo3(signature = (data, keywords=None))]
fn scan_keywords<'py>(
    py: Python<'py>,
    data: &Bound<'py, PyAny>,
    keywords: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let bytes = content_bytes(data)?;
    let (_, detector) = detector_for(keywords)?;
    let out = PyDict::new_bound(py);
    for (keyword, count) in detector.scan_keywords(&bytes) {
        out.set_item(keyword, count)?;
    }
    Ok(out)
}

/// The built-in update-related keyword corpus.
#[pyfunction]
fn default_keywords() -> Vec<String> {
    Config::default().detector.keywords
}

fn bundle_to_dict<'py>(py: Python<'py>, bundle: &CaptureBundle) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new_bound(py);
    if let Some(cap) = &bundle.capture {
        let d = PyDict::new_bound(py);
        d.set_item("capture_id", &cap.capture_id)?;
        d.set_item("frame_count", cap.frame_count)?;
        d.set_item("truncated", cap.truncated)?;
        d.set_item("error", cap.error.as_deref())?;
        d.set_item("txn_count", cap.txn_count)?;
        d.set_item("flagged", cap.flagged)?;
        out.set_item("capture", d)?;
    }
    let txns = PyList::empty_bound(py);
    for t in &bundle.transactions {
        let d = PyDict::new_bound(py);
        d.set_item("txn_id", &t.txn_id)?;
        d.set_item("flow", &t.flow)?;
        d.set_item("transport", &t.transport)?;
        d.set_item("method", t.method.as_deref())?;
        d.set_item("uri", t.uri.as_deref())?;
        d.set_item("status", t.status)?;
        d.set_item("request_len", t.request_len)?;
        d.set_item("response_len", t.response_len)?;
        d.set_item("request_object", t.request_object.as_deref())?;
        d.set_item("response_object", t.response_object.as_deref())?;
        d.set_item("content_type", t.content_type.as_deref())?;
        d.set_item("flags", &t.flags)?;
        d.set_item("ts", t.ts)?;
        txns.append(d)?;
    }
    out.set_item("transactions", txns)?;
    let hellos = PyList::empty_bound(py);
    for h in &bundle.handshakes {
        let d = PyDict::new_bound(py);
        d.set_item("hs_id", &h.hs_id)?;
        d.set_item("flow", &h.flow)?;
        d.set_item("kind", &h.kind)?;
        d.set_item("legacy_version", h.legacy_version.as_str())?;
        d.set_item("effective_version", h.effective_version.as_str())?;
        d.set_item("server_name", h.server_name.as_deref())?;
        d.set_item("incomplete", h.incomplete)?;
        d.set_item("ts", h.ts)?;
        d.set_item("suites", h.suites.clone())?;
        hellos.append(d)?;
    }
    out.set_item("handshakes", hellos)?;
    let hits = PyList::empty_bound(py);
    for h in &bundle.hits {
        let d = PyDict::new_bound(py);
        d.set_item("txn_id", &h.txn_id)?;
        d.set_item("keyword", &h.keyword)?;
        d.set_item("location", h.location.as_str())?;
        d.set_item("count", h.count)?;
        hits.append(d)?;
    }
    out.set_item("keyword_hits", hits)?;
    let evidence = PyList::empty_bound(py);
    for e in &bundle.evidence {
        let d = PyDict::new_bound(py);
        d.set_item("evidence_id", &e.evidence_id)?;
        d.set_item("txn_id", &e.txn_id)?;
        d.set_item("kind", e.kind.as_str())?;
        d.set_item("detail", &e.detail)?;
        d.set_item("plaintext", e.transport_plaintext)?;
        evidence.append(d)?;
    }
    out.set_item("evidence", evidence)?;
    Ok(out)
}

/// Decodes and analyzes one pcap file in isolation (no store, no object
/// files) and returns every row the pipeline would produce for it.
#[pyfunction]
#[pyo3(signature = (path, keywords=None))]
fn analyze_capture<'py>(
    py: Python<'py>,
    path: PathBuf,
    keywords: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let meta_fs = fs::metadata(&path)
        .map_err(|e| PyFileNotFoundError::new_err(format!("{}: {e}", path.display())))?;
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| val_err("path has no file name"))?
        .to_string();
    let root = path.parent().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("."));
    let meta = CaptureMeta {
        capture_id: name,
        dataset_name: "adhoc".to_string(),
        region: Region::Unknown,
        device_name: "adhoc".to_string(),
        experiment_label: "adhoc".to_string(),
        event_category: EventCategory::Other,
        file_size: meta_fs.len(),
    };
    let (_, detector) = detector_for(keywords)?;
    let bundle = process_capture(&meta, &root, &detector, None).map_err(io_err)?;
    bundle_to_dict(py, &bundle)
}

/// Runs the full extraction pipeline over a dataset directory, writing
/// `store.sqlite` and extracted objects under `out`. Returns run totals.
#[pyfunction]
#[pyo3(signature = (dataset, out, workers=1, config=None, force=false))]
fn extract_dataset<'py>(
    py: Python<'py>,
    dataset: PathBuf,
    out: PathBuf,
    workers: usize,
    config: Option<PathBuf>,
    force: bool,
) -> PyResult<Bound<'py, PyDict>> {
    if workers == 0 {
        return Err(val_err("workers must be at least 1"));
    }
    let config = match config {
        Some(p) => Config::load(&p).map_err(val_err)?,
        None => Config::default(),
    };
    let store_path = out.join("store.sqlite");
    if store_path.exists() {
        if !force {
            return Err(val_err(format!(
                "{} already exists; pass force=True to overwrite",
                store_path.display()
            )));
        }
        fs::remove_file(&store_path).map_err(io_err)?;
    }
    fs::create_dir_all(&out).map_err(io_err)?;
    let catalog = CoreCatalog::bundled();
    let mut store = CoreStore::open(&store_path, Mode::Write).map_err(store_err)?;
    let stats = run_extract(
        ExtractRequest {
            dataset_root: &dataset,
            store: &mut store,
            objects_dir: &out.join("objects"),
            config: &config,
            catalog: &catalog,
            workers,
        },
        |_, _, _, _| {},
    )
    .map_err(io_err)?;

    let d = PyDict::new_bound(py);
    d.set_item("store", store_path.display().to_string())?;
    d.set_item("captures", stats.captures)?;
    d.set_item("failed", stats.failures.len())?;
    d.set_item("failures", stats.failures.clone())?;
    d.set_item("transactions", stats.transactions)?;
    d.set_item("handshakes", stats.handshakes)?;
    d.set_item("keyword_hits", stats.keyword_hits)?;
    d.set_item("evidence", stats.evidence)?;
    d.set_item("flagged_captures", stats.flagged_captures)?;
    d.set_item("elapsed_seconds", stats.elapsed.as_secs_f64())?;
    d.set_item("captures_per_sec", stats.captures_per_sec())?;
    Ok(d)
}

/// Writes the report files for an extracted store and returns their paths.
/// `format` is "csv", "json", or "all".
#[pyfunction]
#[pyo3(signature = (store, out, format="csv", keywords=None))]
fn write_report_files(
    store: PathBuf,
    out: PathBuf,
    format: &str,
    keywords: Option<Vec<String>>,
) -> PyResult<Vec<String>> {
    let format = ReportFormat::parse(format)
        .ok_or_else(|| val_err(format!("unknown format {format:?} (csv, json, or all)")))?;
    let (config, _) = detector_for(keywords)?;
    let store = CoreStore::open(&store, Mode::Read).map_err(store_err)?;
    let snap = StoreSnapshot::load(&store).map_err(store_err)?;
    let set = build_reports(&snap, &CoreCatalog::bundled(), &config.detector.keywords);
    let files = write_reports(&out, &set, format).map_err(io_err)?;
    Ok(files.into_iter().map(|p| p.display().to_string()).collect())
}

/// The full report set for an extracted store as one JSON document.
#[pyfunction]
#[pyo3(signature = (store, keywords=None))]
fn report_json(store: PathBuf, keywords: Option<Vec<String>>) -> PyResult<String> {
    let (config, _) = detector_for(keywords)?;
    let store = CoreStore::open(&store, Mode::Read).map_err(store_err)?;
    let snap = StoreSnapshot::load(&store).map_err(store_err)?;
    let set = build_reports(&snap, &CoreCatalog::bundled(), &config.detector.keywords);
    serde_json::to_string_pretty(&set).map_err(val_err)
}

/// Names of the built-in test scenarios.
#[pyfunction]
fn list_scenarios() -> Vec<String> {
    scenarios::scenario_names()
}

/// Synthesizes the built-in scenario dataset under `out`; returns the
/// capture ids (paths relative to `out`).
#[pyfunction]
fn synth_scenarios(out: PathBuf) -> PyResult<Vec<String>> {
    let manifests = scenarios::synth_all(&out).map_err(io_err)?;
    Ok(manifests.into_iter().map(|m| m.capture_id).collect())
}

/// Cipher-suite catalog: code point -> name, class, and forward secrecy.
#[pyclass(name = "CipherCatalog")]
struct PyCipherCatalog {
    inner: CoreCatalog,
}

#[pymethods]
impl PyCipherCatalog {
    /// The catalog snapshot compiled into the library.
    #[staticmethod]
    fn bundled() -> PyCipherCatalog {
        PyCipherCatalog { inner: CoreCatalog::bundled() }
    }

    /// Loads and fully validates a catalog file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<PyCipherCatalog> {
        Ok(PyCipherCatalog { inner: CoreCatalog::load(&path).map_err(val_err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn snapshot_date(&self) -> String {
        self.inner.snapshot_date.clone()
    }

    /// Record for a code point, or None when the catalog does not list it.
    fn lookup<'py>(&self, py: Python<'py>, code_point: u16) -> PyResult<Option<Bound<'py, PyDict>>> {
        match self.inner.lookup(code_point) {
            None => Ok(None),
            Some(rec) => {
                let d = PyDict::new_bound(py);
                d.set_item("code_point", rec.code_point)?;
                d.set_item("name", &rec.name)?;
                d.set_item("class", rec.class.as_str())?;
                d.set_item("pfs", rec.pfs)?;
                d.set_item("kex", &rec.kex)?;
                d.set_item("cipher", &rec.cipher)?;
                d.set_item("mac", &rec.mac)?;
                Ok(Some(d))
            }
        }
    }

    /// How a wire code point relates to the catalog:
    /// "known", "grease", "signaling", or "unknown".
    fn disposition(&self, code_point: u16) -> &'static str {
        match self.inner.disposition(code_point) {
            SuiteDisposition::Known(_) => "known",
            SuiteDisposition::Grease => "grease",
            SuiteDisposition::Signaling => "signaling",
            SuiteDisposition::Unknown => "unknown",
        }
    }

    /// Suite counts per class.
    fn class_counts<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new_bound(py);
        for rec in self.inner.iter() {
            let key = rec.class.as_str();
            let next = match d.get_item(key)? {
                Some(v) => v.extract::<u64>()? + 1,
                None => 1,
            };
            d.set_item(key, next)?;
        }
        Ok(d)
    }
}

/// Read-only view of an extraction store.
#[pyclass(name = "Store")]
struct PyStore {
    inner: CoreStore,
}

#[pymethods]
impl PyStore {
    #[staticmethod]
    fn open(path: PathBuf) -> PyResult<PyStore> {
        Ok(PyStore { inner: CoreStore::open(&path, Mode::Read).map_err(store_err)? })
    }

    /// Table names in canonical dump order.
    fn tables(&self) -> Vec<String> {
        otascope::store::TABLES.iter().map(|t| t.to_string()).collect()
    }

    /// Canonical tab-separated dump of one table (header row included).
    fn dump_table(&self, table: &str) -> PyResult<String> {
        self.inner.dump_table(table).map_err(store_err)
    }

    /// Run metadata (tool version, config digest, catalog snapshot date).
    fn run_info<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new_bound(py);
        for (k, v) in self.inner.run_info().map_err(store_err)? {
            d.set_item(k, v)?;
        }
        Ok(d)
    }
}

#[pymodule]
fn otascope_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(scan_keywords, m)?)?;
    m.add_function(wrap_pyfunction!(default_keywords, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_capture, m)?)?;
    m.add_function(wrap_pyfunction!(extract_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_report_files, m)?)?;
    m.add_function(wrap_pyfunction!(report_json, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(synth_scenarios, m)?)?;
    m.add_class::<PyCipherCatalog>()?;
    m.add_class::<PyStore>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
