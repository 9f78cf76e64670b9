//! Signing and verification of metapolicies.
//!
//! A metapolicy is signed either with the private key of the domain's TLS
//! certificate (the certificate chain travels inside the document) or with a
//! DNSSEC key (empty chain; the public key comes from the domain's DNSKEY
//! record checked against configured trust anchors). Verification covers
//! chain validation, domain coverage, the detached signature over the
//! header+policies bytes, and the metapolicy validity window.

pub mod keys;

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use chrono::{DateTime, Utc};
use thiserror::Error;
use x509_parser::prelude::*;

use crate::model::{
    CertificateChain, DomainName, Metapolicy, SignatureBlock, UnsignedMetapolicy,
};
pub use keys::SigningKey;

/// Injectable time source so expiry behavior is deterministic under test.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    Fixed(DateTime<Utc>),
}

impl Clock {
    pub fn now(&self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Fixed(t) => *t,
        }
    }
}

impl Default for Clock {
    fn default() -> Self {
        Clock::System
    }
}

/// Trust material for verification: X.509 roots for the TLS path and DNSKEY
/// anchors (SubjectPublicKeyInfo DER) for the DNSSEC path.
#[derive(Debug, Clone, Default)]
pub struct TrustConfig {
    pub root_store: Vec<Vec<u8>>,
    pub dnssec_anchors: HashMap<DomainName, Vec<Vec<u8>>>,
    pub clock: Clock,
}

impl TrustConfig {
    /// Loads every PEM certificate found in `dir` into the root store.
    pub fn load_root_store_dir(&mut self, dir: &Path) -> std::io::Result<usize> {
        let mut loaded = 0;
        let mut entries: Vec<_> = std::fs::read_dir(dir)?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.path());
        for entry in entries {
            let path = entry.path();
            if path.extension().map(|e| e == "pem" || e == "crt") != Some(true) {
                continue;
            }
            let data = std::fs::read(&path)?;
            for block in ::pem::parse_many(&data).unwrap_or_default() {
                if block.tag() == "CERTIFICATE" {
                    self.root_store.push(block.contents().to_vec());
                    loaded += 1;
                }
            }
        }
        Ok(loaded)
    }
}

/// Parses every CERTIFICATE block of a PEM document into a chain, in file
/// order (leaf first by convention).
pub fn load_chain_pem(data: &[u8]) -> Result<CertificateChain, String> {
    let blocks = ::pem::parse_many(data).map_err(|e| e.to_string())?;
    let certificates: Vec<Vec<u8>> = blocks
        .iter()
        .filter(|b| b.tag() == "CERTIFICATE")
        .map(|b| b.contents().to_vec())
        .collect();
    if certificates.is_empty() {
        return Err("no CERTIFICATE blocks found".to_string());
    }
    Ok(CertificateChain { certificates })
}

/// Serializes a chain as PEM CERTIFICATE blocks, leaf first.
pub fn chain_to_pem(chain: &CertificateChain) -> String {
    chain
        .certificates
        .iter()
        .map(|der| ::pem::encode(&::pem::Pem::new("CERTIFICATE", der.clone())))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerificationStatus {
    Valid,
    InvalidSignature,
    InvalidChain,
    UntrustedRoot,
    ExpiredCertificate,
    DomainMismatch,
    NoKeyMaterial,
}

impl VerificationStatus {
    pub fn token(self) -> &'static str {
        match self {
            VerificationStatus::Valid => "valid",
            VerificationStatus::InvalidSignature => "invalid_signature",
            VerificationStatus::InvalidChain => "invalid_chain",
            VerificationStatus::UntrustedRoot => "untrusted_root",
            VerificationStatus::ExpiredCertificate => "expired_certificate",
            VerificationStatus::DomainMismatch => "domain_mismatch",
            VerificationStatus::NoKeyMaterial => "no_key_material",
        }
    }
}

impl fmt::Display for VerificationStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationResult {
    pub status: VerificationStatus,
    pub details: String,
}

impl VerificationResult {
    fn new(status: VerificationStatus, details: impl Into<String>) -> Self {
        VerificationResult {
            status,
            details: details.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.status == VerificationStatus::Valid
    }
}

impl fmt::Display for VerificationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.status, self.details)
    }
}

/// Revocation checking is intentionally a stub; rollover happens at the
/// metapolicy version level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RevocationStatus {
    NotChecked,
}

pub fn check_revocation(_chain: &CertificateChain) -> RevocationStatus {
    RevocationStatus::NotChecked
}

#[derive(Debug, Error)]
pub enum SignError {
    #[error("structural error: {0}")]
    Structural(#[from] crate::model::StructuralError),
    #[error("chain leaf certificate unreadable: {0}")]
    BadLeaf(String),
    #[error("signing key does not match the leaf certificate's public key")]
    KeyLeafMismatch,
    #[error("leaf certificate does not cover domain {0}")]
    DomainNotCovered(DomainName),
    #[error("signing failed: {0}")]
    Signing(String),
}

/// Signs `header + policies` and attaches the chain. An empty chain means
/// DNSSEC mode; with a chain the key must match the leaf certificate and the
/// leaf must cover the metapolicy domain.
pub fn sign(
    unsigned: UnsignedMetapolicy,
    key: &SigningKey,
    chain: CertificateChain,
) -> Result<Metapolicy, SignError> {
    let input = unsigned.signing_input()?;
    if let Some(leaf_der) = chain.certificates.first() {
        let (_, leaf) =
            X509Certificate::from_der(leaf_der).map_err(|e| SignError::BadLeaf(e.to_string()))?;
        if leaf.public_key().subject_public_key.data.as_ref() != key.public_key_bytes() {
            return Err(SignError::KeyLeafMismatch);
        }
        if !leaf_covers_domain(&leaf, &unsigned.header.domain) {
            return Err(SignError::DomainNotCovered(unsigned.header.domain.clone()));
        }
    }
    let value = key.sign(&input).map_err(SignError::Signing)?;
    let signature = SignatureBlock {
        algorithm: key.algorithm(),
        value,
    };
    Ok(unsigned.into_signed(signature, chain))
}

/// Verifies a metapolicy against the configured trust material. All failures
/// are encoded in the result status, never as errors.
pub fn verify(m: &Metapolicy, cfg: &TrustConfig) -> VerificationResult {
    verify_with_dnskey(m, cfg, None)
}

/// Like [`verify`], but in DNSSEC mode the caller may supply the DNSKEY
/// public key (SPKI DER) it retrieved from DNS; the key is accepted only if
/// it matches a configured trust anchor for the domain.
pub fn verify_with_dnskey(
    m: &Metapolicy,
    cfg: &TrustConfig,
    served_dnskey: Option<&[u8]>,
) -> VerificationResult {
    let input = match m.signing_input() {
        Ok(i) => i,
        Err(e) => {
            return VerificationResult::new(
                VerificationStatus::InvalidSignature,
                format!("cannot compute signing input: {e}"),
            )
        }
    };
    let now = cfg.clock.now();
    if !m.header.validity.contains(now.date_naive()) {
        // No dedicated status exists for an out-of-window metapolicy; it is
        // reported as an expiry failure with distinguishing details.
        return VerificationResult::new(
            VerificationStatus::ExpiredCertificate,
            format!(
                "metapolicy validity window {} .. {} does not contain {}",
                m.header.validity.valid_from,
                m.header.validity.valid_to,
                now.date_naive()
            ),
        );
    }

    if m.chain.is_empty() {
        verify_dnssec_mode(m, cfg, served_dnskey, &input)
    } else {
        verify_chain_mode(m, cfg, &input)
    }
}

fn verify_dnssec_mode(
    m: &Metapolicy,
    cfg: &TrustConfig,
    served_dnskey: Option<&[u8]>,
    input: &[u8],
) -> VerificationResult {
    let anchors = match cfg.dnssec_anchors.get(&m.header.domain) {
        Some(a) if !a.is_empty() => a,
        _ => {
            return VerificationResult::new(
                VerificationStatus::NoKeyMaterial,
                format!("no DNSSEC trust anchor configured for {}", m.header.domain),
            )
        }
    };
    let candidates: Vec<&[u8]> = match served_dnskey {
        Some(served) => {
            if !anchors.iter().any(|a| a.as_slice() == served) {
                return VerificationResult::new(
                    VerificationStatus::UntrustedRoot,
                    "served DNSKEY does not match any configured trust anchor",
                );
            }
            vec![served]
        }
        None => anchors.iter().map(|a| a.as_slice()).collect(),
    };
    for spki in candidates {
        if keys::verify_raw(m.signature.algorithm, spki, input, &m.signature.value) {
            return VerificationResult::new(VerificationStatus::Valid, "DNSSEC-key signature valid");
        }
    }
    VerificationResult::new(
        VerificationStatus::InvalidSignature,
        "signature does not verify under any trusted DNSSEC key",
    )
}

fn verify_chain_mode(m: &Metapolicy, cfg: &TrustConfig, input: &[u8]) -> VerificationResult {
    let chain_result = validate_chain(&m.chain, cfg);
    if !chain_result.is_valid() {
        return chain_result;
    }
    let leaf_der = &m.chain.certificates[0];
    let (_, leaf) = match X509Certificate::from_der(leaf_der) {
        Ok(x) => x,
        Err(e) => {
            return VerificationResult::new(
                VerificationStatus::InvalidChain,
                format!("leaf certificate unreadable: {e}"),
            )
        }
    };
    if !leaf_covers_domain(&leaf, &m.header.domain) {
        return VerificationResult::new(
            VerificationStatus::DomainMismatch,
            format!("leaf certificate does not cover {}", m.header.domain),
        );
    }
    let spki = leaf.public_key().subject_public_key.data.as_ref();
    if keys::verify_key_bits(m.signature.algorithm, spki, input, &m.signature.value) {
        VerificationResult::new(VerificationStatus::Valid, "certificate-key signature valid")
    } else {
        VerificationResult::new(
            VerificationStatus::InvalidSignature,
            "signature does not verify under the leaf certificate key",
        )
    }
}

/// Validates linkage, signatures, validity periods, and anchoring of a
/// leaf-first chain (root excluded from the chain, present in the store).
pub fn validate_chain(chain: &CertificateChain, cfg: &TrustConfig) -> VerificationResult {
    if chain.is_empty() {
        return VerificationResult::new(VerificationStatus::InvalidChain, "chain is empty");
    }
    let mut certs = Vec::with_capacity(chain.certificates.len());
    for (i, der) in chain.certificates.iter().enumerate() {
        match X509Certificate::from_der(der) {
            Ok((_, c)) => certs.push(c),
            Err(e) => {
                return VerificationResult::new(
                    VerificationStatus::InvalidChain,
                    format!("certificate {i} unreadable: {e}"),
                )
            }
        }
    }
    let now = cfg.clock.now();
    let asn1_now = match ASN1Time::from_timestamp(now.timestamp()) {
        Ok(t) => t,
        Err(_) => {
            return VerificationResult::new(
                VerificationStatus::ExpiredCertificate,
                "clock outside representable certificate time",
            )
        }
    };
    for (i, cert) in certs.iter().enumerate() {
        if !cert.validity().is_valid_at(asn1_now) {
            return VerificationResult::new(
                VerificationStatus::ExpiredCertificate,
                format!("certificate {i} not valid at {now}"),
            );
        }
    }
    // linkage and signatures within the chain
    for i in 0..certs.len() - 1 {
        let child = &certs[i];
        let issuer = &certs[i + 1];
        if child.issuer() != issuer.subject() {
            return VerificationResult::new(
                VerificationStatus::InvalidChain,
                format!("certificate {i} issuer does not match certificate {} subject", i + 1),
            );
        }
        if child.verify_signature(Some(issuer.public_key())).is_err() {
            return VerificationResult::new(
                VerificationStatus::InvalidChain,
                format!("certificate {i} signature invalid under certificate {}", i + 1),
            );
        }
    }
    // anchor the last chain certificate in the root store
    let last = certs.last().expect("non-empty");
    for root_der in &cfg.root_store {
        if let Ok((_, root)) = X509Certificate::from_der(root_der) {
            if last.issuer() == root.subject()
                && last.verify_signature(Some(root.public_key())).is_ok()
            {
                if !root.validity().is_valid_at(asn1_now) {
                    return VerificationResult::new(
                        VerificationStatus::ExpiredCertificate,
                        format!("trust anchor for {:?} expired", root.subject().to_string()),
                    );
                }
                return VerificationResult::new(VerificationStatus::Valid, "chain anchors in root store");
            }
        }
    }
    // No root signs the top of the chain. A non-CA top means the chain is
    // missing its intermediates rather than its anchor.
    let top_is_ca = matches!(last.basic_constraints(), Ok(Some(bc)) if bc.value.ca);
    if top_is_ca {
        VerificationResult::new(
            VerificationStatus::UntrustedRoot,
            "no trusted root signs the top of the chain",
        )
    } else {
        VerificationResult::new(
            VerificationStatus::InvalidChain,
            "chain top is an end-entity certificate with no trusted issuer",
        )
    }
}

/// X.509 name matching: exact DNS name or single-label wildcard.
fn leaf_covers_domain(leaf: &X509Certificate<'_>, domain: &DomainName) -> bool {
    let mut names: Vec<String> = Vec::new();
    if let Ok(Some(san)) = leaf.subject_alternative_name() {
        for gn in &san.value.general_names {
            if let GeneralName::DNSName(n) = gn {
                names.push(n.to_string());
            }
        }
    }
    for cn in leaf.subject().iter_common_name() {
        if let Ok(v) = cn.as_str() {
            names.push(v.to_string());
        }
    }
    let target = domain.to_string();
    names.iter().any(|n| {
        let n = n.to_ascii_lowercase();
        if let Some(suffix) = n.strip_prefix("*.") {
            match (target.strip_suffix(suffix), target.len() > suffix.len()) {
                (Some(head), true) => {
                    // exactly one extra label
                    head.ends_with('.') && head[..head.len() - 1].find('.').is_none()
                        && !head[..head.len() - 1].is_empty()
                }
                _ => false,
            }
        } else {
            n == target
        }
    })
}
