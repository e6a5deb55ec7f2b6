//! Cipher suite hygiene: a bundled catalog of registered TLS cipher suites,
//! each classified as Insecure, Weak, Secure, or Recommended, plus the rules
//! that derive those classes from a suite's components. The catalog file is a
//! point-in-time snapshot generated from the public registry (see the
//! `catalog-gen` tool); the loader re-derives every row's class and rejects
//! any file whose contents disagree with the rules, so a stale or tampered
//! catalog cannot silently skew results.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// GREASE reserved values (both bytes end in 0xA). These appear in offers to
/// keep middleboxes honest and are never real suites.
pub fn is_grease(code_point: u16) -> bool {
    code_point & 0x0f0f == 0x0a0a
}

/// Signaling values (renegotiation / fallback SCSVs): not cipher suites.
pub fn is_signaling(code_point: u16) -> bool {
    code_point == 0x00ff || code_point == 0x5600
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SuiteClass {
    Insecure,
    Weak,
    Secure,
    Recommended,
}

impl SuiteClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            SuiteClass::Insecure => "Insecure",
            SuiteClass::Weak => "Weak",
            SuiteClass::Secure => "Secure",
            SuiteClass::Recommended => "Recommended",
        }
    }

    pub fn parse(s: &str) -> Option<SuiteClass> {
        match s {
            "Insecure" => Some(SuiteClass::Insecure),
            "Weak" => Some(SuiteClass::Weak),
            "Secure" => Some(SuiteClass::Secure),
            "Recommended" => Some(SuiteClass::Recommended),
            _ => None,
        }
    }
}

impl fmt::Display for SuiteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error)]
pub enum CipherRuleError {
    #[error("unrecognized key exchange token {0:?}")]
    UnknownKex(String),
    #[error("unrecognized cipher token {0:?}")]
    UnknownCipher(String),
    #[error("unrecognized MAC token {0:?}")]
    UnknownMac(String),
}

const KEX_TOKENS: [&str; 17] = [
    "NULL", "RSA", "DH", "DHE", "ECDH", "ECDHE", "DSS", "ECDSA", "ANON", "EXPORT", "EXPORT1024",
    "PSK", "KRB5", "SRP", "SHA", "ECCPWD", "TLS13",
];

const MAC_TOKENS: [&str; 10] =
    ["NULL", "MD5", "SHA", "SHA256", "SHA384", "SHA512", "AEAD", "SM3", "OMAC", "IMIT"];

const CIPHER_FAMILIES: [&str; 16] = [
    "NULL", "RC4", "RC2", "DES", "DES40", "3DES", "IDEA", "SEED", "AES", "CAMELLIA", "ARIA",
    "CHACHA20", "SM4", "AEGIS", "KUZNYECHIK", "MAGMA",
];

// Russian GOST suites name their kex by algorithm revision rather than
// exchange shape; treated as one opaque token.
const KEX_TOKENS_EXTRA: [&str; 3] = ["GOSTR341112", "256", "28147"];

fn validate_kex(kex: &str) -> Result<Vec<&str>, CipherRuleError> {
    let tokens: Vec<&str> = kex.split('_').collect();
    if tokens.is_empty() || kex.is_empty() {
        return Err(CipherRuleError::UnknownKex(kex.to_string()));
    }
    for t in &tokens {
        if !KEX_TOKENS.contains(t) && !KEX_TOKENS_EXTRA.contains(t) {
            return Err(CipherRuleError::UnknownKex(kex.to_string()));
        }
    }
    Ok(tokens)
}

fn validate_cipher(cipher: &str) -> Result<(), CipherRuleError> {
    let family = cipher.split('_').next().unwrap_or_default();
    if CIPHER_FAMILIES.contains(&family) || family == "28147" {
        Ok(())
    } else {
        Err(CipherRuleError::UnknownCipher(cipher.to_string()))
    }
}

/// Forward secrecy is a property of the key exchange alone: ephemeral
/// (EC)DHE-style exchanges qualify, static key transport does not.
pub fn is_pfs_kex(kex: &str) -> Result<bool, CipherRuleError> {
    let tokens = validate_kex(kex)?;
    Ok(kex == "TLS13"
        || tokens.contains(&"DHE")
        || tokens.contains(&"ECDHE")
        || tokens.first() == Some(&"SRP")
        || tokens.first() == Some(&"ECCPWD"))
}

/// Derives the base class (Insecure / Weak / Secure) from suite components.
///
/// Insecure: anything broken outright — unauthenticated or export-grade key
/// exchange, NULL encryption, RC4/RC2/DES/40-bit ciphers, MD5 or NULL MACs.
/// Weak: not broken but below current practice — no forward secrecy, 3DES,
/// or CBC paired with HMAC-SHA1.
/// Secure: the rest. The Recommended tier additionally requires the registry
/// recommendation flag and forward secrecy, and is applied by the catalog.
pub fn classify_components(kex: &str, cipher: &str, mac: &str) -> Result<SuiteClass, CipherRuleError> {
    let kex_tokens = validate_kex(kex)?;
    validate_cipher(cipher)?;
    if !MAC_TOKENS.contains(&mac) {
        return Err(CipherRuleError::UnknownMac(mac.to_string()));
    }
    let pfs = is_pfs_kex(kex)?;

    let cipher_family = cipher.split('_').next().unwrap_or_default();
    let insecure = kex == "NULL"
        || kex_tokens.contains(&"ANON")
        || kex_tokens.iter().any(|t| t.starts_with("EXPORT"))
        || cipher == "NULL"
        || matches!(cipher_family, "RC4" | "RC2" | "DES" | "DES40")
        || cipher.contains("40")
        || mac == "MD5"
        || mac == "NULL";
    if insecure {
        return Ok(SuiteClass::Insecure);
    }
    let weak = !pfs
        || cipher_family == "3DES"
        || (cipher.ends_with("_CBC") && mac == "SHA");
    if weak {
        return Ok(SuiteClass::Weak);
    }
    Ok(SuiteClass::Secure)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteRecord {
    pub code_point: u16,
    pub name: String,
    pub class: SuiteClass,
    pub pfs: bool,
    pub kex: String,
    pub cipher: String,
    pub mac: String,
}

impl SuiteRecord {
    /// Renders the record as a catalog row.
    pub fn to_row(&self) -> String {
        format!(
            "0x{:04X},{},{},pfs={},{},{},{}",
            self.code_point,
            self.name,
            self.class,
            u8::from(self.pfs),
            self.kex,
            self.cipher,
            self.mac
        )
    }
}

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
    #[error("catalog line {line}: {reason}")]
    Row { line: usize, reason: String },
    #[error("catalog is empty")]
    Empty,
}

/// How a code point seen on the wire relates to the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteDisposition<'a> {
    Known(&'a SuiteRecord),
    Grease,
    Signaling,
    Unknown,
}

#[derive(Debug, Clone)]
pub struct CipherCatalog {
    records: BTreeMap<u16, SuiteRecord>,
    pub snapshot_date: String,
    pub source: String,
}

pub const BUNDLED_CATALOG: &str = include_str!("../data/cipher_catalog.txt");

impl CipherCatalog {
    /// Parses and fully validates catalog text: field shapes, no duplicates,
    /// and — crucially — that each row's class and pfs flag agree with
    /// [`classify_components`] / [`is_pfs_kex`].
    pub fn parse(text: &str) -> Result<CipherCatalog, CatalogError> {
        let err = |line: usize, reason: String| CatalogError::Row { line, reason };
        let mut records = BTreeMap::new();
        let mut snapshot_date = String::new();
        let mut source = String::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw_line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                let comment = comment.trim();
                if let Some(v) = comment.strip_prefix("snapshot_date:") {
                    snapshot_date = v.trim().to_string();
                } else if let Some(v) = comment.strip_prefix("source:") {
                    source = v.trim().to_string();
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                return Err(err(line_no, format!("expected 7 fields, found {}", fields.len())));
            }
            let code_str = fields[0];
            let code_point = code_str
                .strip_prefix("0x")
                .and_then(|h| u16::from_str_radix(h, 16).ok())
                .ok_or_else(|| err(line_no, format!("bad code point {code_str:?}")))?;
            if is_grease(code_point) || is_signaling(code_point) {
                return Err(err(line_no, format!("0x{code_point:04X} is not a cipher suite")));
            }
            let name = fields[1].to_string();
            if name.is_empty() {
                return Err(err(line_no, "empty suite name".to_string()));
            }
            let class = SuiteClass::parse(fields[2])
                .ok_or_else(|| err(line_no, format!("bad class {:?}", fields[2])))?;
            let pfs = match fields[3] {
                "pfs=1" | "1" => true,
                "pfs=0" | "0" => false,
                other => return Err(err(line_no, format!("bad pfs field {other:?}"))),
            };
            let (kex, cipher, mac) =
                (fields[4].to_string(), fields[5].to_string(), fields[6].to_string());

            let rule_pfs = is_pfs_kex(&kex).map_err(|e| err(line_no, e.to_string()))?;
            if rule_pfs != pfs {
                return Err(err(
                    line_no,
                    format!("pfs flag {pfs} contradicts key exchange {kex:?}"),
                ));
            }
            let rule_class =
                classify_components(&kex, &cipher, &mac).map_err(|e| err(line_no, e.to_string()))?;
            let consistent = match class {
                SuiteClass::Recommended => rule_class == SuiteClass::Secure && pfs,
                other => other == rule_class,
            };
            if !consistent {
                return Err(err(
                    line_no,
                    format!("class {class} contradicts components ({kex}/{cipher}/{mac})"),
                ));
            }
            let record =
                SuiteRecord { code_point, name, class, pfs, kex, cipher, mac };
            if records.insert(code_point, record).is_some() {
                return Err(err(line_no, format!("duplicate code point 0x{code_point:04X}")));
            }
        }
        if records.is_empty() {
            return Err(CatalogError::Empty);
        }
        Ok(CipherCatalog { records, snapshot_date, source })
    }

    pub fn load(path: &Path) -> Result<CipherCatalog, CatalogError> {
        let text = std::fs::read_to_string(path)?;
        CipherCatalog::parse(&text)
    }

    /// The catalog compiled into the binary.
    pub fn bundled() -> CipherCatalog {
        CipherCatalog::parse(BUNDLED_CATALOG).expect("bundled catalog is validated by tests")
    }

    pub fn lookup(&self, code_point: u16) -> Option<&SuiteRecord> {
        self.records.get(&code_point)
    }

    pub fn disposition(&self, code_point: u16) -> SuiteDisposition<'_> {
        if is_grease(code_point) {
            return SuiteDisposition::Grease;
        }
        if is_signaling(code_point) {
            return SuiteDisposition::Signaling;
        }
        match self.records.get(&code_point) {
            Some(r) => SuiteDisposition::Known(r),
            None => SuiteDisposition::Unknown,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &SuiteRecord> {
        self.records.values()
    }
}
