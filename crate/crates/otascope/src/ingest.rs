//! Dataset discovery: walks a capture tree, binds naming metadata from the
//! configured path pattern, and splits the resulting capture list into
//! balanced batches for worker threads.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{Config, EventCategory, Region};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("dataset root {0:?} is not a readable directory")]
    BadRoot(PathBuf),
    #[error("failed to walk dataset: {0}")]
    Walk(#[from] walkdir::Error),
    #[error("worker count must be positive")]
    ZeroWorkers,
}

/// Everything known about a capture before it is opened.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptureMeta {
    /// `/`-separated path relative to the dataset root; primary key everywhere.
    pub capture_id: String,
    pub dataset_name: String,
    pub region: Region,
    pub device_name: String,
    pub experiment_label: String,
    pub event_category: EventCategory,
    pub file_size: u64,
}

impl CaptureMeta {
    pub fn absolute_path(&self, root: &Path) -> PathBuf {
        let mut p = root.to_path_buf();
        for comp in self.capture_id.split('/') {
            p.push(comp);
        }
        p
    }
}

fn is_capture_file(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".pcap") || lower.ends_with(".pcapng")
}

/// Walks `root` and produces one [`CaptureMeta`] per `.pcap`/`.pcapng` file,
/// sorted by capture id. Files that do not match the configured path pattern
/// still yield a record (device `"unknown"`, event `Other`) plus a warning,
/// so nothing silently disappears from totals.
pub fn scan_dataset(root: &Path, config: &Config) -> Result<Vec<CaptureMeta>, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::BadRoot(root.to_path_buf()));
    }
    let dataset_name = config.dataset_name.clone().unwrap_or_else(|| {
        root.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    });

    let mut metas = Vec::new();
    for entry in walkdir::WalkDir::new(root).follow_links(false) {
        let entry = entry?;
        if !entry.file_type().is_file() {
            continue;
        }
        let name = entry.file_name().to_string_lossy();
        if !is_capture_file(&name) {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root");
        let capture_id = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        let file_size = match entry.metadata() {
            Ok(md) => md.len(),
            Err(e) => {
                log::warn!("skipping unreadable capture {capture_id:?}: {e}");
                continue;
            }
        };
        let (region, device_name, experiment_label) =
            match config.path_pattern.match_path(&capture_id) {
                Some(b) => (b.region, b.device, b.experiment),
                None => {
                    log::warn!(
                        "capture {capture_id:?} does not match path pattern {:?}; \
                         recording under device \"unknown\"",
                        config.path_pattern.as_str()
                    );
                    (Region::Unknown, "unknown".to_string(), String::new())
                }
            };
        let event_category = if experiment_label.is_empty() {
            EventCategory::Other
        } else {
            config.event_mapping.lookup(&experiment_label)
        };
        metas.push(CaptureMeta {
            capture_id,
            dataset_name: dataset_name.clone(),
            region,
            device_name,
            experiment_label,
            event_category,
            file_size,
        });
    }
    metas.sort_by(|a, b| a.capture_id.cmp(&b.capture_id));
    Ok(metas)
}

/// Splits `items` into at most `workers` contiguous batches whose sizes differ
/// by at most one. Empty batches are dropped, so the result may be shorter
/// than `workers`; zero items yields an empty list.
pub fn partition_work<T>(items: Vec<T>, workers: usize) -> Result<Vec<Vec<T>>, IngestError> {
    if workers == 0 {
        return Err(IngestError::ZeroWorkers);
    }
    let total = items.len();
    if total == 0 {
        return Ok(Vec::new());
    }
    let batches = workers.min(total);
    let base = total / batches;
    let extra = total % batches;
    let mut out = Vec::with_capacity(batches);
    let mut it = items.into_iter();
    for i in 0..batches {
        let take = base + usize::from(i < extra);
        out.push(it.by_ref().take(take).collect());
    }
    Ok(out)
}
