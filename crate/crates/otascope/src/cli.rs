//! Command-line front end. Progress and human-oriented notes go to stderr;
//! stdout carries exactly one machine-readable JSON summary line per command.
//!
//! Exit codes are a stable contract: 0 success, 1 partial or runtime failure
//! (e.g. some captures failed to decode), 2 usage or configuration error
//! (nothing useful was written).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::StoreSnapshot;
use crate::ciphers::{CipherCatalog, SuiteClass};
use crate::config::Config;
use crate::fixtures::scenarios;
use crate::pipeline::{run_extract, ExtractRequest, ExtractStats};
use crate::report::{build_reports, write_reports, ReportFormat};
use crate::store::{Mode, Store, StoreError, TABLES};

/// Environment variable consulted for the config file path when `--config`
/// is not given.
pub const CONFIG_ENV: &str = "OTASCOPE_CONFIG";

#[derive(Parser)]
#[command(
    name = "otascope",
    version,
    about = "Analyze IoT packet captures for software update traffic",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Decode a dataset of pcap files into a results store
    Extract(ExtractArgs),
    /// Write aggregate report files from an extracted store
    Report(ReportArgs),
    /// Validate a cipher-suite catalog and print class counts
    CatalogCheck(CatalogCheckArgs),
    /// Print canonical tab-separated dumps of store tables
    Dump(DumpArgs),
    /// Synthesize the built-in test scenarios as a pcap dataset
    Fixtures(FixturesArgs),
}

#[derive(Args)]
struct ExtractArgs {
    /// Dataset root directory (scanned recursively for *.pcap)
    dataset: PathBuf,
    /// Output directory for the store and extracted objects
    #[arg(long)]
    out: PathBuf,
    /// Store path (defaults to OUT/store.sqlite)
    #[arg(long)]
    store: Option<PathBuf>,
    /// Worker threads for capture decoding
    #[arg(long, default_value_t = 1, value_parser = parse_workers)]
    workers: usize,
    /// Config file (TOML); falls back to $OTASCOPE_CONFIG, then defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cipher-suite catalog file; the bundled snapshot when omitted
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Overwrite an existing store instead of refusing
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory from a previous extract (holds store.sqlite)
    run_dir: Option<PathBuf>,
    /// Store path (defaults to RUN_DIR/store.sqlite)
    #[arg(long)]
    store: Option<PathBuf>,
    /// Directory for report files (defaults to the run directory)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Serialization for the tabular outputs
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: ReportFormat,
    /// Config file (TOML); falls back to $OTASCOPE_CONFIG, then defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cipher-suite catalog file; the bundled snapshot when omitted
    #[arg(long)]
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct CatalogCheckArgs {
    /// Catalog file to validate; the bundled snapshot when omitted
    catalog: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    /// Run directory from a previous extract (holds store.sqlite)
    run_dir: Option<PathBuf>,
    /// Store path (defaults to RUN_DIR/store.sqlite)
    #[arg(long)]
    store: Option<PathBuf>,
    /// Dump a single table instead of all of them
    #[arg(long)]
    table: Option<String>,
    /// Write one TSV file per table into this directory instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FixturesArgs {
    /// Directory to synthesize the scenario dataset into
    out: PathBuf,
}

fn parse_workers(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|_| format!("invalid worker count {s:?}"))?;
    if n == 0 {
        return Err("worker count must be at least 1".to_string());
    }
    Ok(n)
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    ReportFormat::parse(s)
        .ok_or_else(|| format!("unknown format {s:?} (expected csv, json, or all)"))
}

/// A command failure carrying the exit code it maps to.
struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

fn runtime(message: impl std::fmt::Display) -> Failure {
    Failure { code: 1, message: message.to_string() }
}

/// Parses `args` and runs the selected command, returning the process exit
/// code. Kept separate from `main` so tests can drive the CLI in-process.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            // --help/--version arrive here too; those print to stdout and
            // exit 0, everything else is a usage error.
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Extract(a) => cmd_extract(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::CatalogCheck(a) => cmd_catalog_check(a),
        Cmd::Dump(a) => cmd_dump(a),
        Cmd::Fixtures(a) => cmd_fixtures(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// `--config` wins; otherwise the environment override applies.
fn config_path(flag: Option<&Path>, env_override: Option<OsString>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf).or_else(|| env_override.map(PathBuf::from))
}

fn load_config(flag: Option<&Path>) -> Result<Config, Failure> {
    let path = config_path(flag, std::env::var_os(CONFIG_ENV));
    match path {
        Some(p) => {
            log::debug!("loading config from {}", p.display());
            Config::load(&p).map_err(|e| usage(format!("config {}: {e}", p.display())))
        }
        None => Ok(Config::default()),
    }
}

fn load_catalog(flag: Option<&Path>) -> Result<CipherCatalog, Failure> {
    match flag {
        Some(p) => CipherCatalog::load(p)
            .map_err(|e| usage(format!("catalog {}: {e}", p.display()))),
        None => Ok(CipherCatalog::bundled()),
    }
}

fn open_store_read(store: Option<PathBuf>, run_dir: Option<PathBuf>) -> Result<Store, Failure> {
    let path = store
        .or_else(|| run_dir.map(|d| d.join("store.sqlite")))
        .ok_or_else(|| usage("pass a run directory or --store"))?;
    Store::open(&path, Mode::Read).map_err(|e| match e {
        StoreError::Missing(_) | StoreError::VersionMismatch { .. } => usage(e.to_string()),
        other => runtime(other),
    })
}

fn print_summary(value: serde_json::Value) {
    // One line so downstream tooling can read stdout as JSON-per-invocation.
    println!("{value}");
}

fn cmd_extract(a: ExtractArgs) -> Result<(), Failure> {
    let config = load_config(a.config.as_deref())?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    if !a.dataset.is_dir() {
        return Err(usage(format!("dataset root {} is not a directory", a.dataset.display())));
    }
    // The dataset must not double as the output directory; compare resolved
    // paths, tolerating an output directory that does not exist yet.
    let dataset_canon = fs::canonicalize(&a.dataset)
        .map_err(|e| usage(format!("dataset root {}: {e}", a.dataset.display())))?;
    if let Ok(out_canon) = fs::canonicalize(&a.out) {
        if out_canon == dataset_canon {
            return Err(usage("output directory must differ from the dataset root"));
        }
    }
    let store_path = a.store.clone().unwrap_or_else(|| a.out.join("store.sqlite"));
    if store_path.exists() {
        if !a.force {
            return Err(usage(format!(
                "{} already exists; pass --force to overwrite",
                store_path.display()
            )));
        }
        fs::remove_file(&store_path).map_err(|e| {
            usage(format!("cannot remove {}: {e}", store_path.display()))
        })?;
    }
    fs::create_dir_all(&a.out)
        .map_err(|e| usage(format!("cannot create {}: {e}", a.out.display())))?;

    let mut store = Store::open(&store_path, Mode::Write).map_err(|e| runtime(e))?;
    let objects_dir = a.out.join("objects");
    let stats = run_extract(
        ExtractRequest {
            dataset_root: &a.dataset,
            store: &mut store,
            objects_dir: &objects_dir,
            config: &config,
            catalog: &catalog,
            workers: a.workers,
        },
        |done, total, capture_id, error| match error {
            Some(e) => eprintln!("[{done}/{total}] {capture_id} ERROR: {e}"),
            None => eprintln!("[{done}/{total}] {capture_id}"),
        },
    )
    .map_err(|e| runtime(e))?;

    report_extract_stats(&stats);
    print_summary(serde_json::json!({
        "command": "extract",
        "dataset": a.dataset.display().to_string(),
        "out": a.out.display().to_string(),
        "store": store_path.display().to_string(),
        "workers": a.workers,
        "captures": stats.captures,
        "failed": stats.failures.len(),
        "transactions": stats.transactions,
        "handshakes": stats.handshakes,
        "keyword_hits": stats.keyword_hits,
        "evidence": stats.evidence,
        "flagged_captures": stats.flagged_captures,
        "elapsed_seconds": stats.elapsed.as_secs_f64(),
        "captures_per_sec": stats.captures_per_sec(),
    }));
    if stats.failures.is_empty() {
        Ok(())
    } else {
        Err(runtime(format!("{} capture(s) failed to decode", stats.failures.len())))
    }
}

fn report_extract_stats(stats: &ExtractStats) {
    eprintln!(
        "decoded {} capture(s): {} transactions, {} handshakes, {} keyword hits, \
         {} evidence rows, {} flagged",
        stats.captures,
        stats.transactions,
        stats.handshakes,
        stats.keyword_hits,
        stats.evidence,
        stats.flagged_captures,
    );
    eprintln!(
        "elapsed {:.2}s ({:.1} captures/sec)",
        stats.elapsed.as_secs_f64(),
        stats.captures_per_sec()
    );
    if !stats.failures.is_empty() {
        eprintln!("{} capture(s) failed:", stats.failures.len());
        for (capture_id, error) in &stats.failures {
            eprintln!("  {capture_id}: {error}");
        }
    }
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let config = load_config(a.config.as_deref())?;
    let catalog = load_catalog(a.catalog.as_deref())?;
    let mut out_dir = a
        .out
        .clone()
        .or_else(|| a.run_dir.clone())
        .or_else(|| a.store.as_ref().and_then(|s| s.parent().map(Path::to_path_buf)))
        .ok_or_else(|| usage("pass a run directory or --out"))?;
    if out_dir.as_os_str().is_empty() {
        out_dir = PathBuf::from(".");
    }
    let store = open_store_read(a.store, a.run_dir)?;
    let snap = StoreSnapshot::load(&store).map_err(|e| runtime(e))?;
    let set = build_reports(&snap, &catalog, &config.detector.keywords);
    let files = write_reports(&out_dir, &set, a.format).map_err(|e| runtime(e))?;
    eprintln!("wrote {} report file(s) to {}", files.len(), out_dir.display());
    print_summary(serde_json::json!({
        "command": "report",
        "out": out_dir.display().to_string(),
        "format": a.format.as_str(),
        "captures": snap.captures.len(),
        "devices": set.device_reports.len(),
        "files": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    }));
    Ok(())
}

fn cmd_catalog_check(a: CatalogCheckArgs) -> Result<(), Failure> {
    let catalog = load_catalog(a.catalog.as_deref())?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for class in [SuiteClass::Insecure, SuiteClass::Weak, SuiteClass::Secure, SuiteClass::Recommended]
    {
        counts.insert(class.as_str(), 0);
    }
    let mut pfs_violations = Vec::new();
    for record in catalog.iter() {
        *counts.entry(record.class.as_str()).or_default() += 1;
        if record.class == SuiteClass::Recommended && !record.pfs {
            pfs_violations.push(record.name.clone());
        }
    }
    eprintln!("catalog: {} suites (snapshot {})", catalog.len(), catalog.snapshot_date);
    for (class, n) in &counts {
        eprintln!("  {class}: {n}");
    }
    if pfs_violations.is_empty() {
        eprintln!("  Recommended/PFS consistency: ok");
    }
    print_summary(serde_json::json!({
        "command": "catalog-check",
        "suites": catalog.len(),
        "classes": counts,
        "pfs_consistent": pfs_violations.is_empty(),
        "snapshot_date": catalog.snapshot_date,
    }));
    if pfs_violations.is_empty() {
        Ok(())
    } else {
        Err(usage(format!(
            "{} Recommended suite(s) without forward secrecy: {}",
            pfs_violations.len(),
            pfs_violations.join(", ")
        )))
    }
}

fn cmd_dump(a: DumpArgs) -> Result<(), Failure> {
    if let Some(table) = &a.table {
        if !TABLES.contains(&table.as_str()) {
            return Err(usage(format!(
                "unknown table {table:?}; expected one of: {}",
                TABLES.join(", ")
            )));
        }
    }
    let store = open_store_read(a.store, a.run_dir)?;
    if let Some(dir) = &a.out {
        store.dump_to_dir(dir).map_err(|e| runtime(e))?;
        eprintln!("wrote {} table dump(s) to {}", TABLES.len(), dir.display());
        print_summary(serde_json::json!({
            "command": "dump",
            "out": dir.display().to_string(),
            "tables": TABLES,
        }));
        return Ok(());
    }
    match &a.table {
        Some(table) => {
            let text = store.dump_table(table).map_err(|e| runtime(e))?;
            print!("{text}");
        }
        None => {
            for table in TABLES {
                println!("# {table}");
                print!("{}", store.dump_table(table).map_err(|e| runtime(e))?);
                println!();
            }
        }
    }
    Ok(())
}

fn cmd_fixtures(a: FixturesArgs) -> Result<(), Failure> {
    let manifests = scenarios::synth_all(&a.out).map_err(|e| runtime(e))?;
    for m in &manifests {
        eprintln!("wrote {} ({})", m.capture_id, m.scenario);
    }
    print_summary(serde_json::json!({
        "command": "fixtures",
        "out": a.out.display().to_string(),
        "captures": manifests.iter().map(|m| m.capture_id.clone()).collect::<Vec<_>>(),
    }));
    Ok(())
}
