//! Policy evaluators: per-policy-type checks run at enforcement time.
//!
//! Three reference evaluators ship here (SPF, CAA issuer, HTTPS-required);
//! every other policy id takes the generic unsupported-policy path in
//! [`enforce`](super::enforce). Specification bodies are opaque outside
//! their evaluator.

use std::collections::HashMap;
use std::net::{IpAddr, Ipv4Addr};
use std::sync::Arc;

use crate::model::DomainName;
use crate::resolver::ResolverPort;

/// SPF is RFC 7208; published example policies also use id 7288.
pub const SPF_POLICY_ID: u64 = 7208;
pub const SPF_POLICY_ID_ALT: u64 = 7288;
/// CAA is RFC 6844.
pub const CAA_POLICY_ID: u64 = 6844;
/// HTTPS-required (HSTS-style), RFC 2818's scheme.
pub const HTTPS_REQUIRED_POLICY_ID: u64 = 2818;

/// What the agent knows about the access being policed. Evaluators read the
/// fields they need and fail with a reason when a required one is missing.
#[derive(Debug, Clone, Default)]
pub struct AccessContext {
    pub domain: Option<DomainName>,
    /// Peer address under test (e.g. the sending MTA for SPF).
    pub client_ip: Option<IpAddr>,
    /// Free-form facts: "issuer" for CAA, "scheme" for HTTPS-required, ...
    pub properties: HashMap<String, String>,
}

impl AccessContext {
    pub fn for_domain(domain: DomainName) -> Self {
        AccessContext {
            domain: Some(domain),
            ..Default::default()
        }
    }

    pub fn with_client_ip(mut self, ip: IpAddr) -> Self {
        self.client_ip = Some(ip);
        self
    }

    pub fn with_property(mut self, key: &str, value: &str) -> Self {
        self.properties.insert(key.to_string(), value.to_string());
        self
    }
}

pub trait PolicyEvaluator: Send + Sync {
    fn name(&self) -> &'static str;

    /// `Ok(())` means the access satisfies the policy; `Err` carries the
    /// failure reason for the report.
    fn evaluate(
        &self,
        specification: &str,
        ctx: &AccessContext,
        resolver: Option<&dyn ResolverPort>,
    ) -> Result<(), String>;
}

#[derive(Clone, Default)]
pub struct EvaluatorRegistry {
    map: HashMap<u64, Arc<dyn PolicyEvaluator>>,
}

impl EvaluatorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// SPF, CAA, and HTTPS-required under their usual ids.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        let spf: Arc<dyn PolicyEvaluator> = Arc::new(SpfEvaluator);
        r.register(SPF_POLICY_ID, Arc::clone(&spf));
        r.register(SPF_POLICY_ID_ALT, spf);
        r.register(CAA_POLICY_ID, Arc::new(CaaEvaluator));
        r.register(HTTPS_REQUIRED_POLICY_ID, Arc::new(HttpsRequiredEvaluator));
        r
    }

    pub fn register(&mut self, policy_id: u64, evaluator: Arc<dyn PolicyEvaluator>) {
        self.map.insert(policy_id, evaluator);
    }

    pub fn get(&self, policy_id: u64) -> Option<&dyn PolicyEvaluator> {
        self.map.get(&policy_id).map(|e| e.as_ref())
    }
}

/// Checks the client IP against an SPF record: `ip4`, `a`, `include`, and
/// `all` mechanisms with the four qualifiers. Unsupported mechanisms are
/// skipped, mirroring a permissive receiver.
pub struct SpfEvaluator;

enum SpfOutcome {
    Pass,
    Fail(String),
    /// No mechanism matched; SPF calls this neutral and so do we: the
    /// policy expresses no opinion, which is not a failure.
    Neutral,
}

impl PolicyEvaluator for SpfEvaluator {
    fn name(&self) -> &'static str {
        "spf"
    }

    fn evaluate(
        &self,
        specification: &str,
        ctx: &AccessContext,
        resolver: Option<&dyn ResolverPort>,
    ) -> Result<(), String> {
        let ip = ctx.client_ip.ok_or("access context has no client IP")?;
        let domain = ctx
            .domain
            .as_ref()
            .ok_or("access context has no domain")?;
        match eval_spf(specification, ip, domain, resolver, 0)? {
            SpfOutcome::Pass | SpfOutcome::Neutral => Ok(()),
            SpfOutcome::Fail(reason) => Err(reason),
        }
    }
}

fn eval_spf(
    spec: &str,
    ip: IpAddr,
    domain: &DomainName,
    resolver: Option<&dyn ResolverPort>,
    depth: u8,
) -> Result<SpfOutcome, String> {
    if depth > 5 {
        return Err("SPF include recursion limit exceeded".to_string());
    }
    let mut terms = spec.split_whitespace();
    if terms.next() != Some("v=spf1") {
        return Err("specification is not an SPF record".to_string());
    }
    for term in terms {
        let (qualifier, mech) = match term.chars().next() {
            Some(q @ ('+' | '-' | '~' | '?')) => (q, &term[1..]),
            _ => ('+', term),
        };
        let matched = if mech == "all" {
            true
        } else if mech == "a" {
            let resolver = resolver.ok_or("SPF 'a' mechanism needs a resolver")?;
            let addrs = resolver
                .query_a(domain)
                .map_err(|e| format!("SPF 'a' lookup failed: {e}"))?;
            matches!(ip, IpAddr::V4(v4) if addrs.contains(&v4))
        } else if let Some(cidr) = mech.strip_prefix("ip4:") {
            ip4_matches(cidr, ip)?
        } else if let Some(target) = mech.strip_prefix("include:") {
            let resolver = resolver.ok_or("SPF 'include' mechanism needs a resolver")?;
            let target: DomainName = target
                .parse()
                .map_err(|e| format!("bad include target: {e}"))?;
            let included = resolver
                .query_txt(&target)
                .map_err(|e| format!("SPF include lookup failed: {e}"))?
                .into_iter()
                .filter_map(|p| String::from_utf8(p).ok())
                .find(|s| s.starts_with("v=spf1"));
            match included {
                Some(record) => {
                    matches!(eval_spf(&record, ip, &target, Some(resolver), depth + 1)?, SpfOutcome::Pass)
                }
                None => false,
            }
        } else {
            false // unsupported mechanism (mx, ptr, exists, ip6, ...): skip
        };
        if matched {
            return Ok(match qualifier {
                '+' | '?' => SpfOutcome::Pass,
                '~' => SpfOutcome::Fail(format!("SPF softfail: {ip} matched {term}")),
                _ => SpfOutcome::Fail(format!("SPF fail: {ip} matched {term}")),
            });
        }
    }
    Ok(SpfOutcome::Neutral)
}

fn ip4_matches(cidr: &str, ip: IpAddr) -> Result<bool, String> {
    let IpAddr::V4(ip) = ip else {
        return Ok(false);
    };
    let (net, prefix) = match cidr.split_once('/') {
        Some((net, p)) => (
            net,
            p.parse::<u32>().map_err(|_| format!("bad prefix in ip4:{cidr}"))?,
        ),
        None => (cidr, 32),
    };
    if prefix > 32 {
        return Err(format!("bad prefix in ip4:{cidr}"));
    }
    let net: Ipv4Addr = net
        .parse()
        .map_err(|_| format!("bad address in ip4:{cidr}"))?;
    let mask = if prefix == 0 { 0 } else { u32::MAX << (32 - prefix) };
    Ok(u32::from(ip) & mask == u32::from(net) & mask)
}

/// Checks the would-be certificate issuer against the policy's `issue`
/// entries (semicolon-separated, e.g. `issue letsencrypt.org; issue pki.goog`).
pub struct CaaEvaluator;

impl PolicyEvaluator for CaaEvaluator {
    fn name(&self) -> &'static str {
        "caa"
    }

    fn evaluate(
        &self,
        specification: &str,
        ctx: &AccessContext,
        _resolver: Option<&dyn ResolverPort>,
    ) -> Result<(), String> {
        let issuer = ctx
            .properties
            .get("issuer")
            .ok_or("access context has no issuer property")?;
        let mut allowed = Vec::new();
        for entry in specification.split(';') {
            let mut tokens = entry.split_whitespace();
            match (tokens.next(), tokens.next()) {
                (Some("issue" | "issuewild"), Some(value)) => {
                    allowed.push(value.trim_matches('"').to_ascii_lowercase());
                }
                _ => {}
            }
        }
        if allowed.is_empty() {
            return Err("policy lists no permitted issuers".to_string());
        }
        if allowed.contains(&issuer.to_ascii_lowercase()) {
            Ok(())
        } else {
            Err(format!("issuer {issuer} not among permitted issuers"))
        }
    }
}

/// Requires the access to use the https scheme.
pub struct HttpsRequiredEvaluator;

impl PolicyEvaluator for HttpsRequiredEvaluator {
    fn name(&self) -> &'static str {
        "https-required"
    }

    fn evaluate(
        &self,
        _specification: &str,
        ctx: &AccessContext,
        _resolver: Option<&dyn ResolverPort>,
    ) -> Result<(), String> {
        match ctx.properties.get("scheme").map(String::as_str) {
            Some("https") => Ok(()),
            Some(other) => Err(format!("scheme {other} where https is required")),
            None => Err("access context has no scheme property".to_string()),
        }
    }
}
