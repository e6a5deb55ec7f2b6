//! Run configuration: dataset naming rules, experiment-to-event mapping, and
//! detector tunables. Everything is loadable from a single TOML file and has
//! sensible defaults, so a bare `extract` run works without any config at all.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("config is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid path pattern {pattern:?}: {reason}")]
    Pattern { pattern: String, reason: String },
    #[error("invalid keyword {keyword:?}: {reason}")]
    Keyword { keyword: String, reason: String },
    #[error("invalid event category {0:?} (expected Power, Idle, AlexaInteraction, AndroidInteraction, or Other)")]
    EventCategory(String),
    #[error("invalid version pattern: {0}")]
    VersionPattern(#[from] regex::Error),
    #[error("invalid {field}: {reason}")]
    Field { field: &'static str, reason: String },
}

/// Geographic deployment tag parsed out of a capture path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    Us,
    Uk,
    Unknown,
}

impl Region {
    pub fn parse(s: &str) -> Region {
        match s.to_ascii_lowercase().as_str() {
            "us" | "usa" => Region::Us,
            "uk" | "gb" => Region::Uk,
            _ => Region::Unknown,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Us => "US",
            Region::Uk => "UK",
            Region::Unknown => "unknown",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Coarse experiment grouping used as matrix columns in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventCategory {
    Power,
    Idle,
    AlexaInteraction,
    AndroidInteraction,
    Other,
}

impl EventCategory {
    pub fn parse(s: &str) -> Option<EventCategory> {
        match s {
            "Power" => Some(EventCategory::Power),
            "Idle" => Some(EventCategory::Idle),
            "AlexaInteraction" => Some(EventCategory::AlexaInteraction),
            "AndroidInteraction" => Some(EventCategory::AndroidInteraction),
            "Other" => Some(EventCategory::Other),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            EventCategory::Power => "Power",
            EventCategory::Idle => "Idle",
            EventCategory::AlexaInteraction => "AlexaInteraction",
            EventCategory::AndroidInteraction => "AndroidInteraction",
            EventCategory::Other => "Other",
        }
    }
}

impl fmt::Display for EventCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Region,
    Device,
    Experiment,
}

/// Compiled form of a dataset layout pattern such as
/// `{region}/{device}/{experiment}/...`.
///
/// Directory components bind the named groups; a trailing `...` swallows any
/// remaining components (subdirectories and the capture filename). Patterns
/// must bind `{device}` and `{experiment}`; `{region}` is optional.
#[derive(Debug, Clone)]
pub struct PathPattern {
    raw: String,
    dirs: Vec<Segment>,
    rest: bool,
}

/// Group values bound by matching a capture path against a [`PathPattern`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathBindings {
    pub region: Region,
    pub device: String,
    pub experiment: String,
}

impl PathPattern {
    pub fn parse(pattern: &str) -> Result<PathPattern, ConfigError> {
        let err = |reason: &str| ConfigError::Pattern {
            pattern: pattern.to_string(),
            reason: reason.to_string(),
        };
        if pattern.is_empty() {
            return Err(err("pattern is empty"));
        }
        let comps: Vec<&str> = pattern.split('/').collect();
        let mut dirs = Vec::new();
        let mut rest = false;
        for (i, comp) in comps.iter().enumerate() {
            if comp.is_empty() {
                return Err(err("empty path component"));
            }
            if *comp == "..." {
                if i + 1 != comps.len() {
                    return Err(err("`...` is only allowed as the final component"));
                }
                rest = true;
                continue;
            }
            let seg = match *comp {
                "{region}" => Segment::Region,
                "{device}" => Segment::Device,
                "{experiment}" => Segment::Experiment,
                other if other.starts_with('{') && other.ends_with('}') => {
                    return Err(err(&format!(
                        "unknown group {other:?} (expected {{region}}, {{device}}, or {{experiment}})"
                    )));
                }
                other => Segment::Literal(other.to_string()),
            };
            if matches!(seg, Segment::Region | Segment::Device | Segment::Experiment)
                && dirs.contains(&seg)
            {
                return Err(err(&format!("group {comp:?} bound more than once")));
            }
            dirs.push(seg);
        }
        if !dirs.contains(&Segment::Device) {
            return Err(err("pattern must bind {device}"));
        }
        if !dirs.contains(&Segment::Experiment) {
            return Err(err("pattern must bind {experiment}"));
        }
        Ok(PathPattern {
            raw: pattern.to_string(),
            dirs,
            rest,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// Matches a `/`-separated capture path (relative to the dataset root).
    /// The final component is the capture filename and never binds a group.
    pub fn match_path(&self, rel_path: &str) -> Option<PathBindings> {
        let comps: Vec<&str> = rel_path.split('/').collect();
        if comps.iter().any(|c| c.is_empty()) {
            return None;
        }
        // Last component is the filename; directory components bind groups.
        let n_dirs = comps.len().checked_sub(1)?;
        if self.rest {
            if n_dirs < self.dirs.len() {
                return None;
            }
        } else if n_dirs != self.dirs.len() {
            return None;
        }
        let mut region = Region::Unknown;
        let mut device = None;
        let mut experiment = None;
        for (seg, comp) in self.dirs.iter().zip(comps.iter()) {
            match seg {
                Segment::Literal(lit) => {
                    if lit != comp {
                        return None;
                    }
                }
                Segment::Region => region = Region::parse(comp),
                Segment::Device => device = Some(comp.to_string()),
                Segment::Experiment => experiment = Some(comp.to_string()),
            }
        }
        Some(PathBindings {
            region,
            device: device?,
            experiment: experiment?,
        })
    }
}

/// Maps experiment directory labels to [`EventCategory`] values.
///
/// Exact (case-insensitive) matches win; otherwise trailing-`*` globs are
/// tried longest-prefix first; anything unmatched falls back to `Other`.
#[derive(Debug, Clone)]
pub struct EventMapping {
    exact: BTreeMap<String, EventCategory>,
    globs: Vec<(String, EventCategory)>,
}

impl Default for EventMapping {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("power".to_string(), EventCategory::Power);
        m.insert("idle".to_string(), EventCategory::Idle);
        EventMapping {
            exact: m,
            globs: vec![
                ("alexa_".to_string(), EventCategory::AlexaInteraction),
                ("android_".to_string(), EventCategory::AndroidInteraction),
            ],
        }
    }
}

impl EventMapping {
    pub fn from_rules(rules: &BTreeMap<String, String>) -> Result<EventMapping, ConfigError> {
        let mut exact = BTreeMap::new();
        let mut globs = Vec::new();
        for (label, category) in rules {
            let category = EventCategory::parse(category)
                .ok_or_else(|| ConfigError::EventCategory(category.clone()))?;
            let label = label.to_ascii_lowercase();
            if let Some(prefix) = label.strip_suffix('*') {
                globs.push((prefix.to_string(), category));
            } else {
                exact.insert(label, category);
            }
        }
        // Longest prefix first so `alexa_voice_*` beats `alexa_*`.
        globs.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.0.cmp(&b.0)));
        Ok(EventMapping { exact, globs })
    }

    pub fn lookup(&self, label: &str) -> EventCategory {
        let label = label.to_ascii_lowercase();
        if let Some(cat) = self.exact.get(&label) {
            return *cat;
        }
        for (prefix, cat) in &self.globs {
            if label.starts_with(prefix.as_str()) {
                return *cat;
            }
        }
        EventCategory::Other
    }

    fn rules_for_digest(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for (k, v) in &self.exact {
            out.insert(k.clone(), v.to_string());
        }
        for (prefix, v) in &self.globs {
            out.insert(format!("{prefix}*"), v.to_string());
        }
        out
    }
}

/// Detector tunables: the keyword corpus plus the token sets and thresholds
/// used by the update-evidence heuristics.
#[derive(Debug, Clone)]
pub struct DetectorConfig {
    /// Lowercase ASCII substrings scanned for in every transaction.
    pub keywords: Vec<String>,
    /// URL path suffixes treated as firmware image names.
    pub firmware_extensions: Vec<String>,
    /// Tokens that mark integrity/authenticity metadata fields.
    pub signature_tokens: Vec<String>,
    /// Minimum body size (bytes) for the firmware-payload heuristic.
    pub payload_threshold: u64,
    /// Version-number shape, e.g. `1.2.3`.
    pub version_regex: Regex,
    /// Tokens that must appear near a version number to count as an advert.
    pub version_key_tokens: Vec<String>,
    /// Lowercased tokens identifying update services in SSDP/SOAP traffic.
    pub service_tokens: Vec<String>,
    /// Content types eligible for the firmware-payload heuristic.
    pub payload_content_types: Vec<String>,
    /// Content-type prefixes that never count as firmware payloads.
    pub payload_content_type_deny: Vec<String>,
}

pub const DEFAULT_KEYWORDS: [&str; 5] = ["update", "upgrade", "firmware", "software", "download"];

const DEFAULT_VERSION_PATTERN: &str = r"\d+(\.\d+){1,3}";

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            keywords: DEFAULT_KEYWORDS.iter().map(|s| s.to_string()).collect(),
            firmware_extensions: [".bin", ".img", ".fw", ".swu", ".pkg", ".ipsw", ".trx"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            signature_tokens: ["signature", "certificate", "digest", "hash", "measurement"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            payload_threshold: 1024 * 1024,
            version_regex: Regex::new(DEFAULT_VERSION_PATTERN).expect("default version pattern"),
            version_key_tokens: ["firmware", "fw", "sw"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            service_tokens: ["updatefirmware", "firmwareupdate", "update"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            payload_content_types: ["application/octet-stream", "application/zip"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            payload_content_type_deny: ["video/", "audio/", "image/"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

fn validate_keywords(keywords: &[String]) -> Result<(), ConfigError> {
    if keywords.is_empty() {
        return Err(ConfigError::Field {
            field: "keywords",
            reason: "corpus must not be empty".to_string(),
        });
    }
    for kw in keywords {
        let err = |reason: &str| ConfigError::Keyword {
            keyword: kw.clone(),
            reason: reason.to_string(),
        };
        if kw.is_empty() {
            return Err(err("keyword is empty"));
        }
        if !kw.is_ascii() {
            return Err(err("keyword must be ASCII"));
        }
        if kw.bytes().any(|b| b.is_ascii_uppercase()) {
            return Err(err("keyword must be lowercase"));
        }
        if kw.bytes().any(|b| b.is_ascii_control()) {
            return Err(err("keyword must not contain control characters"));
        }
    }
    Ok(())
}

/// Fully validated run configuration.
#[derive(Debug, Clone)]
pub struct Config {
    /// Dataset label stored alongside results; defaults to the root dir name.
    pub dataset_name: Option<String>,
    pub path_pattern: PathPattern,
    pub event_mapping: EventMapping,
    pub detector: DetectorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            dataset_name: None,
            path_pattern: PathPattern::parse("{region}/{device}/{experiment}/...")
                .expect("default pattern"),
            event_mapping: EventMapping::default(),
            detector: DetectorConfig::default(),
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    events: Option<BTreeMap<String, String>>,
    #[serde(default)]
    detector: RawDetector,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    name: Option<String>,
    path_pattern: Option<String>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDetector {
    keywords: Option<Vec<String>>,
    firmware_extensions: Option<Vec<String>>,
    signature_tokens: Option<Vec<String>>,
    payload_threshold: Option<u64>,
    version_pattern: Option<String>,
    version_key_tokens: Option<Vec<String>>,
    service_tokens: Option<Vec<String>>,
    payload_content_types: Option<Vec<String>>,
    payload_content_type_deny: Option<Vec<String>>,
}

fn lower_all(v: Vec<String>) -> Vec<String> {
    v.into_iter().map(|s| s.to_ascii_lowercase()).collect()
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Config::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Config, ConfigError> {
        let raw: RawConfig = toml::from_str(text)?;
        let defaults = Config::default();
        let det_defaults = DetectorConfig::default();

        let path_pattern = match raw.dataset.path_pattern {
            Some(p) => PathPattern::parse(&p)?,
            None => defaults.path_pattern,
        };
        let event_mapping = match raw.events {
            Some(rules) => EventMapping::from_rules(&rules)?,
            None => EventMapping::default(),
        };
        let d = raw.detector;
        // Keywords are deliberately not normalized: a mixed-case entry is a
        // config mistake and silently folding it would mask the error.
        let keywords = d.keywords.unwrap_or(det_defaults.keywords);
        validate_keywords(&keywords)?;
        let payload_threshold = d.payload_threshold.unwrap_or(det_defaults.payload_threshold);
        if payload_threshold == 0 {
            return Err(ConfigError::Field {
                field: "payload_threshold",
                reason: "must be positive".to_string(),
            });
        }
        let version_regex = match d.version_pattern {
            Some(p) => Regex::new(&p)?,
            None => det_defaults.version_regex,
        };
        let detector = DetectorConfig {
            keywords,
            firmware_extensions: lower_all(
                d.firmware_extensions.unwrap_or(det_defaults.firmware_extensions),
            ),
            signature_tokens: lower_all(d.signature_tokens.unwrap_or(det_defaults.signature_tokens)),
            payload_threshold,
            version_regex,
            version_key_tokens: lower_all(
                d.version_key_tokens.unwrap_or(det_defaults.version_key_tokens),
            ),
            service_tokens: lower_all(d.service_tokens.unwrap_or(det_defaults.service_tokens)),
            payload_content_types: lower_all(
                d.payload_content_types.unwrap_or(det_defaults.payload_content_types),
            ),
            payload_content_type_deny: lower_all(
                d.payload_content_type_deny
                    .unwrap_or(det_defaults.payload_content_type_deny),
            ),
        };
        Ok(Config {
            dataset_name: raw.dataset.name,
            path_pattern,
            event_mapping,
            detector,
        })
    }

    /// Stable digest of the effective configuration, recorded with results so
    /// reports can tell when two stores were produced under the same rules.
    pub fn digest(&self) -> String {
        let d = &self.detector;
        let value = serde_json::json!({
            "dataset_name": self.dataset_name,
            "path_pattern": self.path_pattern.as_str(),
            "events": self.event_mapping.rules_for_digest(),
            "keywords": d.keywords,
            "firmware_extensions": d.firmware_extensions,
            "signature_tokens": d.signature_tokens,
            "payload_threshold": d.payload_threshold,
            "version_pattern": d.version_regex.as_str(),
            "version_key_tokens": d.version_key_tokens,
            "service_tokens": d.service_tokens,
            "payload_content_types": d.payload_content_types,
            "payload_content_type_deny": d.payload_content_type_deny,
        });
        // serde_json object keys are ordered, so this rendering is canonical.
        let canon = serde_json::to_string(&value).expect("config digest serialization");
        hex::encode(Sha256::digest(canon.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_pattern_binds_all_groups() {
        let cfg = Config::default();
        let b = cfg
            .path_pattern
            .match_path("US/echodot/power/2019-04-26_15:00:01.22s.pcap")
            .unwrap();
        assert_eq!(b.region, Region::Us);
        assert_eq!(b.device, "echodot");
        assert_eq!(b.experiment, "power");
    }

    #[test]
    fn rest_component_swallows_subdirs() {
        let p = PathPattern::parse("{device}/{experiment}/...").unwrap();
        let b = p.match_path("cam/idle/part2/0.pcap").unwrap();
        assert_eq!(b.device, "cam");
        assert_eq!(b.experiment, "idle");
        // Without `...` the file must sit directly in the experiment dir.
        let p2 = PathPattern::parse("{device}/{experiment}").unwrap();
        assert!(p2.match_path("cam/idle/part2/0.pcap").is_none());
        assert!(p2.match_path("cam/idle/0.pcap").is_some());
    }

    #[test]
    fn pattern_requires_device_and_experiment() {
        assert!(PathPattern::parse("{region}/{experiment}/...").is_err());
        assert!(PathPattern::parse("{device}/...").is_err());
        assert!(PathPattern::parse("{device}/{device}/{experiment}").is_err());
        assert!(PathPattern::parse("{foo}/{device}/{experiment}").is_err());
        assert!(PathPattern::parse(".../{device}/{experiment}").is_err());
    }

    #[test]
    fn literal_components_must_match() {
        let p = PathPattern::parse("captures/{device}/{experiment}/...").unwrap();
        assert!(p.match_path("captures/tv/power/0.pcap").is_some());
        assert!(p.match_path("other/tv/power/0.pcap").is_none());
    }

    #[test]
    fn too_short_paths_do_not_match() {
        let cfg = Config::default();
        assert!(cfg.path_pattern.match_path("US/echodot/loose.pcap").is_none());
        assert!(cfg.path_pattern.match_path("loose.pcap").is_none());
    }

    #[test]
    fn event_mapping_defaults() {
        let m = EventMapping::default();
        assert_eq!(m.lookup("power"), EventCategory::Power);
        assert_eq!(m.lookup("Idle"), EventCategory::Idle);
        assert_eq!(m.lookup("alexa_on"), EventCategory::AlexaInteraction);
        assert_eq!(m.lookup("android_photo"), EventCategory::AndroidInteraction);
        assert_eq!(m.lookup("local_move"), EventCategory::Other);
    }

    #[test]
    fn event_mapping_prefers_exact_then_longest_glob() {
        let mut rules = BTreeMap::new();
        rules.insert("alexa_*".to_string(), "AlexaInteraction".to_string());
        rules.insert("alexa_stop".to_string(), "Power".to_string());
        rules.insert("alexa_voice_*".to_string(), "Other".to_string());
        let m = EventMapping::from_rules(&rules).unwrap();
        assert_eq!(m.lookup("alexa_stop"), EventCategory::Power);
        assert_eq!(m.lookup("alexa_voice_cmd"), EventCategory::Other);
        assert_eq!(m.lookup("alexa_on"), EventCategory::AlexaInteraction);
    }

    #[test]
    fn rejects_bad_event_category() {
        let mut rules = BTreeMap::new();
        rules.insert("power".to_string(), "Energize".to_string());
        assert!(EventMapping::from_rules(&rules).is_err());
    }

    #[test]
    fn keyword_corpus_is_validated() {
        for bad in ["[detector]\nkeywords = []", "[detector]\nkeywords = [\"Update\"]"] {
            assert!(Config::from_toml_str(bad).is_err(), "accepted: {bad}");
        }
        let cfg = Config::from_toml_str("[detector]\nkeywords = [\"ota\"]").unwrap();
        assert_eq!(cfg.detector.keywords, vec!["ota"]);
    }

    #[test]
    fn default_corpus_matches_expected_terms() {
        let cfg = Config::default();
        assert_eq!(
            cfg.detector.keywords,
            vec!["update", "upgrade", "firmware", "software", "download"]
        );
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(Config::from_toml_str("[dataset]\nnmae = \"x\"").is_err());
        assert!(Config::from_toml_str("[detektor]\n").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = Config::default().digest();
        let b = Config::default().digest();
        assert_eq!(a, b);
        let c = Config::from_toml_str("[detector]\nkeywords = [\"ota\"]")
            .unwrap()
            .digest();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_config_equals_defaults() {
        let loaded = Config::from_toml_str("").unwrap();
        assert_eq!(loaded.digest(), Config::default().digest());
    }
}
