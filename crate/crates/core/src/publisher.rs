//! Operator-side pipeline: build a metapolicy from a declarative TOML
//! configuration, settle the Parts fixpoint while signing, and emit
//! publishable DNS records.
//!
//! # Configuration format
//!
//! ```toml
//! domain = "a.com"
//! version = 1                    # optional; defaults to previous + 1, or 1
//! valid_from = "2016-12-09"
//! valid_to = "2018-12-09"
//! subdomains = ["example.a.com", "verbal.a.com"]
//!
//! [[policy]]
//! id = 7288
//! specification = "v=spf1 a include:aspmx.googlemail.com ~all"
//! fail = "hard"                  # hard | soft | ignore
//! report = ["report@a.com"]      # optional
//! ```

use chrono::NaiveDate;
use serde::Deserialize;
use thiserror::Error;

use crate::codec::{self, CodecError, TxtRecordSet};
use crate::model::{
    FailDirective, Header, Metapolicy, PolicyEntry, StructuralError, SubdomainPattern,
    UnsignedMetapolicy, ValidityWindow,
};
use crate::trust::{self, SignError, SigningKey};
use crate::model::CertificateChain;

/// The Parts field is covered by the signature it sizes, so finalize has to
/// iterate; the digit count of Parts can only grow, which bounds the loop.
pub const MAX_FIXPOINT_ITERATIONS: u32 = 4;

#[derive(Debug, Error)]
pub enum PublishError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("configuration parse: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Structural(#[from] StructuralError),
    #[error("signing: {0}")]
    Sign(#[from] SignError),
    #[error("encapsulation: {0}")]
    Codec(#[from] CodecError),
    #[error("Parts fixpoint did not converge within {0} iterations")]
    NonConvergence(u32),
    #[error("version {requested} does not exceed published version {previous}")]
    NonMonotonicVersion { previous: u64, requested: u64 },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub domain: String,
    pub version: Option<u64>,
    pub valid_from: NaiveDate,
    pub valid_to: NaiveDate,
    #[serde(default)]
    pub subdomains: Vec<String>,
    #[serde(default, rename = "policy")]
    pub policies: Vec<PolicyConfigEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfigEntry {
    pub id: u64,
    pub specification: String,
    pub fail: String,
    #[serde(default)]
    pub report: Vec<String>,
}

impl PolicyConfig {
    pub fn from_toml(text: &str) -> Result<PolicyConfig, PublishError> {
        Ok(toml::from_str(text)?)
    }
}

/// Builds the unsigned draft from a configuration. The version comes from
/// the config when given, otherwise `previous_version + 1` (or 1).
pub fn build(
    config: &PolicyConfig,
    previous_version: Option<u64>,
) -> Result<UnsignedMetapolicy, PublishError> {
    let bad = |msg: String| PublishError::Config(msg);
    let domain = config
        .domain
        .parse()
        .map_err(|e| bad(format!("domain: {e}")))?;
    let version = config
        .version
        .unwrap_or_else(|| previous_version.map_or(1, |v| v + 1));
    if let (Some(prev), Some(req)) = (previous_version, config.version) {
        if req <= prev {
            return Err(PublishError::NonMonotonicVersion {
                previous: prev,
                requested: req,
            });
        }
    }
    let subdomains = config
        .subdomains
        .iter()
        .map(|s| {
            s.parse::<SubdomainPattern>()
                .map_err(|e| bad(format!("subdomain {s:?}: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let policies = config
        .policies
        .iter()
        .map(|p| {
            Ok(PolicyEntry {
                id: p.id,
                specification: p.specification.clone(),
                fail: FailDirective {
                    mode: p
                        .fail
                        .parse()
                        .map_err(|e| bad(format!("policy {}: {e}", p.id)))?,
                    report_addresses: p.report.clone(),
                },
            })
        })
        .collect::<Result<Vec<_>, PublishError>>()?;
    let unsigned = UnsignedMetapolicy {
        header: Header {
            domain,
            version,
            validity: ValidityWindow {
                valid_from: config.valid_from,
                valid_to: config.valid_to,
            },
            parts: 1, // provisional; finalize settles the fixpoint
            subdomains,
        },
        policies,
    };
    if let Some(first) = unsigned.validate_structure().into_iter().next() {
        return Err(StructuralError(first).into());
    }
    Ok(unsigned)
}

/// A signed metapolicy with a settled Parts field plus its DNS records.
#[derive(Debug, Clone)]
pub struct Finalized {
    pub metapolicy: Metapolicy,
    pub records: TxtRecordSet,
    /// Sign/measure iterations the fixpoint took (1 when Parts was right
    /// from the start).
    pub iterations: u32,
}

/// Signs the draft and settles the Parts fixpoint: sign, serialize, compute
/// the real part count; if it differs from Header.parts, update, re-sign,
/// re-check, until Header.parts matches the serialized size it influences.
pub fn finalize(
    draft: &UnsignedMetapolicy,
    key: &SigningKey,
    chain: CertificateChain,
) -> Result<Finalized, PublishError> {
    let mut draft = draft.clone();
    draft.header.parts = draft.header.parts.max(1);
    for iteration in 1..=MAX_FIXPOINT_ITERATIONS {
        let m = trust::sign(draft.clone(), key, chain.clone())?;
        let len = m.canonical_serialize()?.len();
        let needed = codec::parts_needed(len)?;
        if needed == m.header.parts {
            let records = codec::encapsulate(&m)?;
            return Ok(Finalized {
                metapolicy: m,
                records,
                iterations: iteration,
            });
        }
        draft.header.parts = needed;
    }
    Err(PublishError::NonConvergence(MAX_FIXPOINT_ITERATIONS))
}

/// Edits to apply when rolling a new version of a published metapolicy.
#[derive(Debug, Default, Clone)]
pub struct VersionChanges {
    /// Explicit new version; must exceed the previous one. Default: +1.
    pub version: Option<u64>,
    pub validity: Option<ValidityWindow>,
    pub subdomains: Option<Vec<SubdomainPattern>>,
    pub add_policies: Vec<PolicyEntry>,
    pub remove_policy_ids: Vec<u64>,
}

/// Drafts the successor of a published metapolicy. Certificate rollover
/// happens at [`finalize`] time by signing with the new key and chain; the
/// old chain is simply absent from the new document.
pub fn bump_version(
    previous: &Metapolicy,
    changes: &VersionChanges,
) -> Result<UnsignedMetapolicy, PublishError> {
    let version = changes.version.unwrap_or(previous.header.version + 1);
    if version <= previous.header.version {
        return Err(PublishError::NonMonotonicVersion {
            previous: previous.header.version,
            requested: version,
        });
    }
    let mut policies: Vec<PolicyEntry> = previous
        .policies
        .iter()
        .filter(|p| !changes.remove_policy_ids.contains(&p.id))
        .cloned()
        .collect();
    policies.extend(changes.add_policies.iter().cloned());
    let unsigned = UnsignedMetapolicy {
        header: Header {
            domain: previous.header.domain.clone(),
            version,
            validity: changes.validity.unwrap_or(previous.header.validity),
            parts: previous.header.parts, // starting guess for the fixpoint
            subdomains: changes
                .subdomains
                .clone()
                .unwrap_or_else(|| previous.header.subdomains.clone()),
        },
        policies,
    };
    if let Some(first) = unsigned.validate_structure().into_iter().next() {
        return Err(StructuralError(first).into());
    }
    Ok(unsigned)
}

/// RFC 1035 master-file lines for the record set, one per TXT record,
/// ordered by part index.
pub fn emit_zone_fragment(records: &TxtRecordSet, ttl: u32) -> String {
    codec::to_master_file(records, ttl)
}
