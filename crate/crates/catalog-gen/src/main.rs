//! Regenerates the bundled cipher suite catalog from the registry database
//! vendored by the tls-parser crate. Components (key exchange, cipher, MAC)
//! are derived from the registered suite name, classes come from
//! `otascope::ciphers` rules, and the Recommended tier is applied from the
//! registry recommendation flags embedded below. The output is re-parsed
//! through the strict catalog loader before being written, so a generator
//! bug cannot produce a file the library would accept but misread.

use std::fmt::Write as _;

use anyhow::{bail, ensure, Context, Result};
use otascope::ciphers::{
    classify_components, is_grease, is_pfs_kex, is_signaling, CipherCatalog, SuiteClass,
    SuiteRecord,
};
use tls_parser::TlsCipherSuite;

/// Date this snapshot of the registry database was taken.
const SNAPSHOT_DATE: &str = "2026-08-25";

/// Code points carrying the registry's "Recommended = Y" flag. Maintained by
/// hand when the snapshot is refreshed; the generator fails if any entry is
/// missing from the database or fails the Secure-with-PFS precondition.
const RECOMMENDED: [u16; 26] = [
    0x009e, 0x009f, 0x00aa, 0x00ab, 0x1301, 0x1302, 0x1303, 0x1304, 0xc02b, 0xc02c, 0xc02f,
    0xc030, 0xc09e, 0xc09f, 0xc0a6, 0xc0a7, 0xc0ac, 0xc0ad, 0xcca8, 0xcca9, 0xccaa, 0xccac,
    0xccad, 0xd001, 0xd002, 0xd005,
];

/// Tokens that terminate a suite name as its MAC (or PRF hash) component.
const MAC_TAIL: [&str; 8] = ["NULL", "MD5", "SHA", "SHA256", "SHA384", "SHA512", "SM3", "IMIT"];

/// Splits a registered suite name into (kex, cipher, mac) component strings.
fn split_name(name: &str) -> Result<(String, String, String)> {
    let rest = name.strip_prefix("TLS_").context("name lacks TLS_ prefix")?;
    let split_tail = |tail: &str| -> (String, String) {
        let tokens: Vec<&str> = tail.split('_').collect();
        match tokens.as_slice() {
            [head @ .., last] if MAC_TAIL.contains(last) && !head.is_empty() => {
                (head.join("_"), (*last).to_string())
            }
            // OMAC suites name the MAC mode with its final two tokens.
            [head @ .., mode, "OMAC"] if !head.is_empty() => {
                (head.join("_"), format!("{mode}_OMAC"))
            }
            // No recognizable MAC token: an AEAD suite where the cipher
            // provides integrity itself.
            _ => (tail.to_string(), "AEAD".to_string()),
        }
    };
    if let Some((kex_part, tail)) = rest.split_once("_WITH_") {
        let kex = kex_part.to_ascii_uppercase();
        let (cipher, mac) = split_tail(tail);
        Ok((kex, cipher, mac))
    } else {
        // TLS 1.3 style names carry no key exchange; integrity-only suites
        // (TLS_SHA256_SHA256) have no cipher either.
        let (cipher, mac) = if let Some(hash) = rest.strip_prefix("SHA") {
            let full = format!("SHA{hash}");
            let mac = full.split('_').next_back().unwrap_or_default().to_string();
            ("NULL".to_string(), mac)
        } else {
            split_tail(rest)
        };
        Ok(("TLS13".to_string(), cipher, mac))
    }
}

fn generate() -> Result<String> {
    let mut rows: Vec<SuiteRecord> = Vec::new();
    for id in 0u16..=0xffff {
        let Some(suite) = TlsCipherSuite::from_id(id) else { continue };
        if is_grease(id) || is_signaling(id) {
            continue;
        }
        let name = suite.name.to_string();
        let (kex, cipher, mac) =
            split_name(&name).with_context(|| format!("0x{id:04X} {name}"))?;
        let pfs = is_pfs_kex(&kex).with_context(|| format!("0x{id:04X} {name}"))?;
        let base = classify_components(&kex, &cipher, &mac)
            .with_context(|| format!("0x{id:04X} {name}"))?;
        let class = if RECOMMENDED.contains(&id) {
            ensure!(
                base == SuiteClass::Secure && pfs,
                "0x{id:04X} {name} is flagged Recommended but classifies as {base} (pfs={pfs})"
            );
            SuiteClass::Recommended
        } else {
            base
        };
        rows.push(SuiteRecord { code_point: id, name, class, pfs, kex, cipher, mac });
    }
    for want in RECOMMENDED {
        if !rows.iter().any(|r| r.code_point == want) {
            bail!("recommended suite 0x{want:04X} missing from the suite database");
        }
    }

    let mut out = String::new();
    writeln!(out, "# TLS cipher suite catalog. Generated by catalog-gen; do not edit by hand.")?;
    writeln!(out, "# Fields: code_point,name,class,pfs,kex,cipher,mac")?;
    writeln!(out, "# snapshot_date: {SNAPSHOT_DATE}")?;
    writeln!(out, "# source: IANA TLS Cipher Suites registry via the tls-parser crate database")?;
    for row in &rows {
        writeln!(out, "{}", row.to_row())?;
    }
    Ok(out)
}

fn main() -> Result<()> {
    let out_path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/otascope/data/cipher_catalog.txt".to_string());
    let text = generate()?;
    let catalog = CipherCatalog::parse(&text)
        .context("generated catalog failed strict validation")?;
    std::fs::write(&out_path, &text).with_context(|| format!("writing {out_path}"))?;
    eprintln!(
        "wrote {} suites ({} recommended) to {out_path}",
        catalog.len(),
        catalog.iter().filter(|r| r.class == SuiteClass::Recommended).count()
    );
    Ok(())
}
