//! The policy agent: resolves, verifies, caches, and enforces metapolicies.
//!
//! `lookup` implements the fetch-and-cache algorithm: with a warm cache only
//! part 1 is fetched and the version compared; a higher published version
//! triggers a full refetch and re-verification, anything else keeps the
//! cached (already verified) document in force.

pub mod cache;
pub mod evaluators;
mod report;

pub use cache::{CacheEntry, CacheError, PolicyCache};
pub use evaluators::{
    AccessContext, EvaluatorRegistry, PolicyEvaluator, CAA_POLICY_ID, HTTPS_REQUIRED_POLICY_ID,
    SPF_POLICY_ID, SPF_POLICY_ID_ALT,
};
pub use report::{FileReportSink, MemoryReportSink, NullReportSink, ReportEvent, ReportSink};

use std::collections::BTreeSet;

use thiserror::Error;

use crate::codec::{self, CodecError, TxtPart};
use crate::model::{self, DomainName, Metapolicy, ParseError};
use crate::resolver::{ResolveError, ResolverPort};
use crate::trust::{self, TrustConfig, VerificationResult, VerificationStatus};

#[derive(Debug, Error)]
pub enum AgentError {
    /// Verification failed; the policy must be treated as hostile and the
    /// access hard-failed. Nothing is cached on this path.
    #[error("hard failure: {0}")]
    HardFailure(VerificationResult),
    #[error("resolution failed: {0}")]
    Resolution(#[from] ResolveError),
    /// No metapolicy is published and nothing is cached.
    #[error("no metapolicy published for {0}")]
    NoPolicy(DomainName),
    #[error("reassembly failed: {0}")]
    Codec(#[from] CodecError),
    #[error("fetched document unparseable: {0}")]
    Parse(#[from] ParseError),
    #[error("cache: {0}")]
    Cache(#[from] CacheError),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// Looks up the verified metapolicy for `domain`.
///
/// Cached: fetch only part 1 and compare versions — equal keeps the cache
/// (one query total), higher evicts and refetches everything, lower or
/// unobtainable keeps the cache (downgrade/rollback resistance). Uncached:
/// fetch all parts, verify, cache. Verification failure is a hard failure
/// and nothing is cached.
pub fn lookup(
    domain: &DomainName,
    resolver: &dyn ResolverPort,
    cache: &PolicyCache,
    cfg: &TrustConfig,
) -> Result<Metapolicy, AgentError> {
    let _guard = cache.fetch_guard(domain);
    if let Some(entry) = cache.get(domain) {
        let owner1 = codec::owner_name_for_part(1, domain);
        let first = match resolver.query_txt(&owner1) {
            Ok(payloads) => payloads.into_iter().next(),
            Err(e) => {
                log::warn!("part-1 query for {domain} failed ({e}); cached policy stays in force");
                return Ok(entry.metapolicy);
            }
        };
        let Some(payload1) = first else {
            log::warn!("no metapolicy records served for {domain}; cached policy stays in force");
            return Ok(entry.metapolicy);
        };
        let (dns_version, _) = match model::parse_header_prefix(&payload1) {
            Ok(v) => v,
            Err(e) => {
                log::warn!("garbled part 1 for {domain} ({e}); cached policy stays in force");
                return Ok(entry.metapolicy);
            }
        };
        let cached_version = entry.metapolicy.header.version;
        if dns_version == cached_version {
            // trust the cache's prior verification; the fetched bytes serve
            // only the version comparison, but log any other drift
            let cached_bytes = entry
                .metapolicy
                .canonical_serialize()
                .expect("cached metapolicy serializes");
            let prefix_len = cached_bytes.len().min(codec::MAX_PART_LEN);
            if payload1 != cached_bytes[..prefix_len] {
                log::warn!(
                    "part 1 for {domain} differs from cache at equal version {dns_version}"
                );
            }
            return Ok(entry.metapolicy);
        }
        if dns_version < cached_version {
            log::warn!(
                "DNS serves version {dns_version} below cached {cached_version} for {domain}; \
                 cached policy stays in force"
            );
            return Ok(entry.metapolicy);
        }
        cache.remove(domain)?;
    }
    let m = fetch_and_verify(domain, resolver, cfg)?;
    cache.insert(m.clone(), cfg.clock.now())?;
    Ok(m)
}

/// Full fetch of every part, reassembly, parse, and verification. Never
/// touches the cache.
fn fetch_and_verify(
    domain: &DomainName,
    resolver: &dyn ResolverPort,
    cfg: &TrustConfig,
) -> Result<Metapolicy, AgentError> {
    let owner1 = codec::owner_name_for_part(1, domain);
    let payload1 = resolver
        .query_txt(&owner1)?
        .into_iter()
        .next()
        .ok_or_else(|| AgentError::NoPolicy(domain.clone()))?;
    let (_, parts) = model::parse_header_prefix(&payload1)?;
    let mut txt_parts = vec![TxtPart {
        index: 1,
        owner: owner1,
        payload: payload1,
    }];
    if parts > 1 {
        // the remaining parts are independent names; fetch them in parallel
        let fetched: Vec<Result<TxtPart, AgentError>> = std::thread::scope(|s| {
            (2..=parts)
                .map(|index| {
                    let owner = codec::owner_name_for_part(index, domain);
                    s.spawn(move || {
                        let payload = resolver
                            .query_txt(&owner)?
                            .into_iter()
                            .next()
                            .ok_or(CodecError::MissingPart { index })?;
                        Ok(TxtPart {
                            index,
                            owner,
                            payload,
                        })
                    })
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|h| h.join().expect("part fetch thread never panics"))
                .collect()
        });
        for part in fetched {
            txt_parts.push(part?);
        }
    }
    let bytes = codec::reassemble(&txt_parts)?;
    let m = model::parse(&bytes)?;
    if m.header.domain != *domain {
        return Err(AgentError::HardFailure(VerificationResult {
            status: VerificationStatus::DomainMismatch,
            details: format!(
                "document names {} but was published under {domain}",
                m.header.domain
            ),
        }));
    }
    let result = if m.chain.is_empty() {
        let served = resolver.query_dnskey(domain)?;
        trust::verify_with_dnskey(&m, cfg, served.first().map(Vec::as_slice))
    } else {
        trust::verify(&m, cfg)
    };
    if !result.is_valid() {
        return Err(AgentError::HardFailure(result));
    }
    Ok(m)
}

/// Policy lookup for a subdomain: the subdomain's own metapolicy wins; on
/// absence, an ancestor's metapolicy applies iff the subdomain matches one
/// of its Subdomains entries (wildcards match a single label unless
/// `multi_label_wildcards`). `None` means no policy governs the name.
pub fn lookup_for_subdomain(
    sub: &DomainName,
    resolver: &dyn ResolverPort,
    cache: &PolicyCache,
    cfg: &TrustConfig,
    multi_label_wildcards: bool,
) -> Result<Option<Metapolicy>, AgentError> {
    match lookup(sub, resolver, cache, cfg) {
        Ok(m) => return Ok(Some(m)),
        Err(AgentError::NoPolicy(_)) => {}
        Err(e) => return Err(e),
    }
    let labels = sub.labels();
    for skip in 1..labels.len() {
        if labels.len() - skip < 2 {
            break; // no single-label parents
        }
        let parent: DomainName = labels[skip..]
            .join(".")
            .parse()
            .expect("suffix of a valid name is valid");
        match lookup(&parent, resolver, cache, cfg) {
            Ok(m) => {
                let covered = m
                    .header
                    .subdomains
                    .iter()
                    .any(|p| p.matches(sub, multi_label_wildcards));
                return Ok(covered.then_some(m));
            }
            Err(AgentError::NoPolicy(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Proceed,
    WarnAndProceed,
    Terminate,
}

impl Decision {
    pub fn token(self) -> &'static str {
        match self {
            Decision::Proceed => "proceed",
            Decision::WarnAndProceed => "warn_and_proceed",
            Decision::Terminate => "terminate",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnforcementOutcome {
    pub decision: Decision,
    pub policy_id: u64,
    pub reports: Vec<ReportEvent>,
}

/// Enforces one policy of a verified metapolicy against an access.
///
/// Success maps to proceed with no reports; failure maps through the fail
/// directive (hard → terminate, soft → warn, ignore → proceed), always with
/// one report. A policy id present in the document but lacking a registered
/// evaluator is never silently passed: warn_and_proceed plus a report.
/// `None` means the metapolicy has no policy with that id.
pub fn enforce(
    m: &Metapolicy,
    policy_id: u64,
    ctx: &AccessContext,
    registry: &EvaluatorRegistry,
    resolver: Option<&dyn ResolverPort>,
    sink: &dyn ReportSink,
    cfg: &TrustConfig,
) -> Option<EnforcementOutcome> {
    let entry = m.policies.iter().find(|p| p.id == policy_id)?;
    let evaluator = registry.get(policy_id);
    let result = match evaluator {
        Some(ev) => ev.evaluate(&entry.specification, ctx, resolver),
        None => Err(format!("no evaluator registered for policy id {policy_id}")),
    };
    let outcome = match result {
        Ok(()) => EnforcementOutcome {
            decision: Decision::Proceed,
            policy_id,
            reports: Vec::new(),
        },
        Err(reason) => {
            let decision = if evaluator.is_none() {
                Decision::WarnAndProceed
            } else {
                match entry.fail.mode {
                    model::FailMode::Hard => Decision::Terminate,
                    model::FailMode::Soft => Decision::WarnAndProceed,
                    model::FailMode::Ignore => Decision::Proceed,
                }
            };
            let event = ReportEvent {
                domain: m.header.domain.to_string(),
                policy_id,
                failure_reason: reason,
                addresses: entry.fail.report_addresses.clone(),
                timestamp: cfg.clock.now(),
            };
            sink.emit(&event);
            EnforcementOutcome {
                decision,
                policy_id,
                reports: vec![event],
            }
        }
    };
    Some(outcome)
}

/// Recovery for an expired cache entry: adopt a newer published version if
/// one verifies; otherwise keep using the cached policy, marked stale, and
/// report the staleness to the domain's report addresses (exactly one event).
pub fn handle_expiry(
    entry: &CacheEntry,
    resolver: &dyn ResolverPort,
    cache: &PolicyCache,
    cfg: &TrustConfig,
    sink: &dyn ReportSink,
) -> Result<CacheEntry, AgentError> {
    let today = cfg.clock.now().date_naive();
    if entry.metapolicy.header.validity.valid_to >= today {
        return Err(AgentError::Precondition(format!(
            "metapolicy for {} is valid until {}; not expired",
            entry.metapolicy.header.domain, entry.metapolicy.header.validity.valid_to
        )));
    }
    let domain = entry.metapolicy.header.domain.clone();
    let owner1 = codec::owner_name_for_part(1, &domain);
    let published_version = resolver
        .query_txt(&owner1)
        .ok()
        .and_then(|p| p.into_iter().next())
        .and_then(|payload| model::parse_header_prefix(&payload).ok())
        .map(|(version, _)| version);
    if published_version.is_some_and(|v| v > entry.metapolicy.header.version) {
        let m = fetch_and_verify(&domain, resolver, cfg)?;
        let stored_at = cfg.clock.now();
        cache.insert(m.clone(), stored_at)?;
        return Ok(CacheEntry {
            metapolicy: m,
            stored_at,
            stale: false,
        });
    }
    // still the same version (or unobtainable): keep using it, flagged
    let updated = cache
        .mark_stale(&domain)?
        .unwrap_or_else(|| CacheEntry {
            stale: true,
            ..entry.clone()
        });
    let addresses: BTreeSet<String> = entry
        .metapolicy
        .policies
        .iter()
        .flat_map(|p| p.fail.report_addresses.iter().cloned())
        .collect();
    sink.emit(&ReportEvent {
        domain: domain.to_string(),
        policy_id: 0,
        failure_reason: format!(
            "metapolicy expired {} with no newer version published; continuing on stale policy",
            entry.metapolicy.header.validity.valid_to
        ),
        addresses: addresses.into_iter().collect(),
        timestamp: cfg.clock.now(),
    });
    Ok(updated)
}
