//! Metapolicy document model: domain types, structural validation, and the
//! canonical text serialization used for signing and DNS publication.

mod text;

pub use text::{parse, parse_header_prefix, ParseError};

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use thiserror::Error;

/// Maximum presentation length of a domain name in bytes.
const MAX_NAME_LEN: usize = 253;
/// Maximum length of a single label in bytes.
const MAX_LABEL_LEN: usize = 63;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DomainNameError {
    #[error("domain name is empty")]
    Empty,
    #[error("domain name exceeds {MAX_NAME_LEN} bytes")]
    TooLong,
    #[error("invalid label {0:?}")]
    BadLabel(String),
}

/// A fully-qualified DNS name, stored lowercase without the trailing dot.
///
/// Labels follow LDH rules, with a leading underscore additionally allowed
/// for service labels such as `_metapolicy` and `_dmarc`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DomainName {
    labels: Vec<String>,
}

fn label_ok(label: &str) -> bool {
    if label.is_empty() || label.len() > MAX_LABEL_LEN {
        return false;
    }
    let body = label.strip_prefix('_').unwrap_or(label);
    if body.is_empty() {
        return false;
    }
    let bytes = body.as_bytes();
    if bytes[0] == b'-' || bytes[bytes.len() - 1] == b'-' {
        return false;
    }
    bytes
        .iter()
        .all(|b| b.is_ascii_alphanumeric() || *b == b'-')
}

impl DomainName {
    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// True if `self` is a strict DNS descendant of `ancestor`
    /// (e.g. `mail.a.com` under `a.com`).
    pub fn is_descendant_of(&self, ancestor: &DomainName) -> bool {
        self.labels.len() > ancestor.labels.len()
            && self.labels.ends_with(&ancestor.labels)
    }

    /// Prepends `label` to this name, e.g. `a.com` -> `_metapolicy.a.com`.
    pub fn prepend(&self, label: &str) -> Result<DomainName, DomainNameError> {
        let mut s = String::with_capacity(label.len() + 1 + self.to_string().len());
        s.push_str(label);
        s.push('.');
        s.push_str(&self.to_string());
        s.parse()
    }
}

impl FromStr for DomainName {
    type Err = DomainNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.strip_suffix('.').unwrap_or(s);
        if s.is_empty() {
            return Err(DomainNameError::Empty);
        }
        if s.len() > MAX_NAME_LEN {
            return Err(DomainNameError::TooLong);
        }
        let mut labels = Vec::new();
        for raw in s.split('.') {
            let label = raw.to_ascii_lowercase();
            if !label_ok(&label) {
                return Err(DomainNameError::BadLabel(raw.to_string()));
            }
            labels.push(label);
        }
        Ok(DomainName { labels })
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.labels.join("."))
    }
}

/// One entry of the header's subdomain list: either a concrete subdomain or
/// a wildcard pattern `*.suffix`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubdomainPattern {
    Exact(DomainName),
    Wildcard(DomainName),
}

impl SubdomainPattern {
    /// Whether `name` falls under this pattern. Wildcards match a single
    /// extra label by default; `multi_label` widens them to any depth.
    pub fn matches(&self, name: &DomainName, multi_label: bool) -> bool {
        match self {
            SubdomainPattern::Exact(d) => d == name,
            SubdomainPattern::Wildcard(suffix) => {
                if !name.is_descendant_of(suffix) {
                    return false;
                }
                multi_label || name.labels().len() == suffix.labels().len() + 1
            }
        }
    }
}

impl FromStr for SubdomainPattern {
    type Err = DomainNameError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(suffix) = s.strip_prefix("*.") {
            Ok(SubdomainPattern::Wildcard(suffix.parse()?))
        } else if s == "*" {
            // A bare "*" has no suffix to anchor matching on.
            Err(DomainNameError::BadLabel("*".to_string()))
        } else {
            Ok(SubdomainPattern::Exact(s.parse()?))
        }
    }
}

impl fmt::Display for SubdomainPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubdomainPattern::Exact(d) => write!(f, "{d}"),
            SubdomainPattern::Wildcard(d) => write!(f, "*.{d}"),
        }
    }
}

/// Inclusive validity period, whole UTC days.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValidityWindow {
    pub valid_from: NaiveDate,
    pub valid_to: NaiveDate,
}

impl ValidityWindow {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.valid_from <= date && date <= self.valid_to
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub domain: DomainName,
    pub version: u64,
    pub validity: ValidityWindow,
    pub parts: u64,
    pub subdomains: Vec<SubdomainPattern>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailMode {
    Hard,
    Soft,
    Ignore,
}

impl FailMode {
    pub fn token(self) -> &'static str {
        match self {
            FailMode::Hard => "hard",
            FailMode::Soft => "soft",
            FailMode::Ignore => "ignore",
        }
    }
}

impl FromStr for FailMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hard" => Ok(FailMode::Hard),
            "soft" => Ok(FailMode::Soft),
            "ignore" => Ok(FailMode::Ignore),
            other => Err(format!("unknown fail mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailDirective {
    pub mode: FailMode,
    pub report_addresses: Vec<String>,
}

/// One security policy inside a metapolicy. The id is the RFC number of the
/// policy type; the specification body is opaque at this layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyEntry {
    pub id: u64,
    pub specification: String,
    pub fail: FailDirective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignatureAlgorithm {
    RsaPkcs1Sha256,
    EcdsaP256Sha256,
    Ed25519,
}

impl SignatureAlgorithm {
    pub fn token(self) -> &'static str {
        match self {
            SignatureAlgorithm::RsaPkcs1Sha256 => "rsa-pkcs1-sha256",
            SignatureAlgorithm::EcdsaP256Sha256 => "ecdsa-p256-sha256",
            SignatureAlgorithm::Ed25519 => "ed25519",
        }
    }

    /// Plausible raw signature length range in bytes.
    fn length_range(self) -> (usize, usize) {
        match self {
            // 2048- to 4096-bit moduli
            SignatureAlgorithm::RsaPkcs1Sha256 => (256, 512),
            // ASN.1 DER encoded (r, s)
            SignatureAlgorithm::EcdsaP256Sha256 => (8, 80),
            SignatureAlgorithm::Ed25519 => (64, 64),
        }
    }
}

impl FromStr for SignatureAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rsa-pkcs1-sha256" => Ok(SignatureAlgorithm::RsaPkcs1Sha256),
            "ecdsa-p256-sha256" => Ok(SignatureAlgorithm::EcdsaP256Sha256),
            "ed25519" => Ok(SignatureAlgorithm::Ed25519),
            other => Err(format!("unknown signature algorithm {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignatureBlock {
    pub algorithm: SignatureAlgorithm,
    pub value: Vec<u8>,
}

/// DER-encoded X.509 certificates, leaf first, excluding the trust-anchor
/// root. Empty when the metapolicy is DNSSEC-signed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CertificateChain {
    pub certificates: Vec<Vec<u8>>,
}

impl CertificateChain {
    pub fn is_empty(&self) -> bool {
        self.certificates.is_empty()
    }
}

/// The four-section signed policy document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Metapolicy {
    pub header: Header,
    pub policies: Vec<PolicyEntry>,
    pub signature: SignatureBlock,
    pub chain: CertificateChain,
}

/// Header and policies only; what the publisher builds before signing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnsignedMetapolicy {
    pub header: Header,
    pub policies: Vec<PolicyEntry>,
}

impl UnsignedMetapolicy {
    pub fn into_signed(self, signature: SignatureBlock, chain: CertificateChain) -> Metapolicy {
        Metapolicy {
            header: self.header,
            policies: self.policies,
            signature,
            chain,
        }
    }
}

impl Metapolicy {
    /// Canonical UTF-8 text of the whole document. Deterministic: equal
    /// values produce byte-identical output.
    pub fn canonical_serialize(&self) -> Result<Vec<u8>, StructuralError> {
        self.ensure_valid()?;
        Ok(text::serialize(self))
    }

    /// The bytes the signature covers: the Header and Policies sections
    /// only, excluding Signature and Certificate.
    pub fn signing_input(&self) -> Result<Vec<u8>, StructuralError> {
        signing_input(&self.header, &self.policies)
    }

    pub fn validate_structure(&self) -> Vec<Violation> {
        let mut v = validate_header_policies(&self.header, &self.policies);
        let (lo, hi) = self.signature.algorithm.length_range();
        if self.signature.value.is_empty() {
            v.push(Violation::new("Signature", "signature value must be non-empty"));
        } else if self.signature.value.len() < lo || self.signature.value.len() > hi {
            v.push(Violation::new(
                "Signature",
                format!(
                    "signature length {} inconsistent with {} (expected {}..={} bytes)",
                    self.signature.value.len(),
                    self.signature.algorithm.token(),
                    lo,
                    hi
                ),
            ));
        }
        validate_chain_structure(&self.chain, &mut v);
        v
    }

    fn ensure_valid(&self) -> Result<(), StructuralError> {
        match self.validate_structure().into_iter().next() {
            None => Ok(()),
            Some(first) => Err(StructuralError(first)),
        }
    }
}

impl UnsignedMetapolicy {
    pub fn signing_input(&self) -> Result<Vec<u8>, StructuralError> {
        signing_input(&self.header, &self.policies)
    }

    pub fn validate_structure(&self) -> Vec<Violation> {
        validate_header_policies(&self.header, &self.policies)
    }
}

fn signing_input(header: &Header, policies: &[PolicyEntry]) -> Result<Vec<u8>, StructuralError> {
    match validate_header_policies(header, policies).into_iter().next() {
        None => Ok(text::serialize_header_policies(header, policies)),
        Some(first) => Err(StructuralError(first)),
    }
}

/// One violated structural invariant, naming the field and the rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub rule: String,
}

impl Violation {
    fn new(field: impl Into<String>, rule: impl Into<String>) -> Self {
        Violation {
            field: field.into(),
            rule: rule.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.rule)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("structurally invalid metapolicy: {0}")]
pub struct StructuralError(pub Violation);

pub fn email_address_ok(addr: &str) -> bool {
    let mut parts = addr.split('@');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(local), Some(domain), None) => !local.is_empty() && !domain.is_empty(),
        _ => false,
    }
}

fn validate_header_policies(header: &Header, policies: &[PolicyEntry]) -> Vec<Violation> {
    let mut v = Vec::new();
    if header.version < 1 {
        v.push(Violation::new("Header.Version", "version must be >= 1"));
    }
    if header.parts < 1 {
        v.push(Violation::new("Header.Parts", "parts must be >= 1"));
    }
    if header.validity.valid_from > header.validity.valid_to {
        v.push(Violation::new(
            "Header.Valid From/Valid To",
            "valid_from must not be after valid_to",
        ));
    }
    for sub in &header.subdomains {
        let under = match sub {
            SubdomainPattern::Exact(d) => d.is_descendant_of(&header.domain),
            SubdomainPattern::Wildcard(suffix) => {
                suffix == &header.domain || suffix.is_descendant_of(&header.domain)
            }
        };
        if !under {
            v.push(Violation::new(
                "Header.Subdomains",
                format!("{sub} is not a descendant of {}", header.domain),
            ));
        }
    }
    if policies.is_empty() {
        v.push(Violation::new("Policies", "at least one policy entry required"));
    }
    let mut seen = std::collections::HashSet::new();
    for p in policies {
        if p.id < 1 {
            v.push(Violation::new("Policies.Id", "policy id must be >= 1"));
        }
        if !seen.insert(p.id) {
            v.push(Violation::new(
                "Policies.Id",
                format!("duplicate policy id {}", p.id),
            ));
        }
        if p.specification.is_empty() {
            v.push(Violation::new(
                "Policies.Specification",
                format!("policy {} specification must be non-empty", p.id),
            ));
        } else if p.specification.chars().any(|c| c.is_control()) {
            v.push(Violation::new(
                "Policies.Specification",
                format!("policy {} specification must be a single line without control characters", p.id),
            ));
        }
        for addr in &p.fail.report_addresses {
            if !email_address_ok(addr) {
                v.push(Violation::new(
                    "Policies.Fail",
                    format!("invalid report address {addr:?}"),
                ));
            }
        }
    }
    v
}

fn validate_chain_structure(chain: &CertificateChain, v: &mut Vec<Violation>) {
    use x509_parser::prelude::*;
    let mut parsed = Vec::new();
    for (i, der) in chain.certificates.iter().enumerate() {
        match X509Certificate::from_der(der) {
            Ok((_, cert)) => parsed.push(Some(cert)),
            Err(_) => {
                v.push(Violation::new(
                    "Certificate",
                    format!("certificate {i} is not valid DER"),
                ));
                parsed.push(None);
            }
        }
    }
    for pair in parsed.windows(2) {
        if let (Some(child), Some(issuer)) = (&pair[0], &pair[1]) {
            if child.issuer() != issuer.subject() {
                v.push(Violation::new(
                    "Certificate",
                    format!(
                        "issuer {:?} does not match next certificate's subject {:?}",
                        child.issuer().to_string(),
                        issuer.subject().to_string()
                    ),
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests;
