//! otascope analyzes packet captures from IoT test deployments to find and
//! characterize software/firmware update traffic: plaintext HTTP object
//! transfers, TLS handshake hygiene, update-related keywords, and the overall
//! update delivery design of each device.

pub mod analysis;
pub mod ciphers;
pub mod cli;
pub mod config;
pub mod detector;
pub mod fixtures;
pub mod flows;
pub mod http;
pub mod ingest;
pub mod pipeline;
pub mod report;
pub mod store;
pub mod tls;
