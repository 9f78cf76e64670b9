//! Deployability measurement harness: probe domains for existing security
//! policy records over DNS and aggregate support statistics.
//!
//! The probe set per domain, in order: TXT at the apex (SPF), TXT at
//! `<selector>._domainkey.<d>` over a selector list (DKIM), TXT at
//! `_dmarc.<d>` (DMARC), DNSKEY (DNSSEC), CAA, and TLSA at
//! `_443._tcp.<d>` (DANE). An optional TLS reachability probe (TCP 443
//! handshake attempt) is off by default since it leaves DNS.

use std::io::{Read, Write};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::model::DomainName;
use crate::resolver::{RecordType, ResolverPort};

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("cannot aggregate an empty report list")]
    Empty,
}

#[derive(Debug, Clone)]
pub struct ScanConfig {
    /// DKIM requires guessing a selector; a miss under-counts and is noted.
    pub dkim_selectors: Vec<String>,
    /// Queries-per-second cap across all probes; `None` disables pacing
    /// (appropriate against the in-process testnet).
    pub qps: Option<u32>,
    /// Concurrent domains in [`scan_list`].
    pub parallelism: usize,
    /// Attempt a TLS handshake on port 443; requires real TCP reachout.
    pub probe_tls: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            dkim_selectors: ["default", "selector1", "selector2", "google", "k1"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            qps: None,
            parallelism: 8,
            probe_tls: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ScanReport {
    pub domain: String,
    pub spf: bool,
    pub dkim: bool,
    pub dmarc: bool,
    pub dnssec: bool,
    pub caa: bool,
    pub dane: bool,
    pub tls: bool,
    /// Per-probe failures; a failed probe leaves its flag false.
    pub error_notes: Vec<String>,
}

impl ScanReport {
    /// Number of supported DNS-observable policies (TLS excluded, as in the
    /// policies-per-domain distribution).
    pub fn policy_count(&self) -> usize {
        [self.spf, self.dkim, self.dmarc, self.dnssec, self.caa, self.dane]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn csv_row(&self) -> String {
        let flag = |b: bool| if b { "1" } else { "0" };
        let notes = self.error_notes.join("; ");
        let quoted = format!("\"{}\"", notes.replace('"', "\"\""));
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.domain,
            flag(self.spf),
            flag(self.dkim),
            flag(self.dmarc),
            flag(self.dnssec),
            flag(self.caa),
            flag(self.dane),
            flag(self.tls),
            quoted
        )
    }
}

pub const CSV_HEADER: &str = "domain,spf,dkim,dmarc,dnssec,caa,dane,tls,error_notes";

pub fn to_csv(reports: &[ScanReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

struct RateLimiter {
    interval: Duration,
    next_slot: Mutex<Instant>,
}

impl RateLimiter {
    fn new(qps: u32) -> Self {
        RateLimiter {
            interval: Duration::from_secs_f64(1.0 / qps.max(1) as f64),
            next_slot: Mutex::new(Instant::now()),
        }
    }

    fn pace(&self) {
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let at = (*next).max(now);
            *next = at + self.interval;
            at.saturating_duration_since(now)
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Probes one domain. Per-probe failures become notes, never errors.
pub fn scan_domain(d: &DomainName, resolver: &dyn ResolverPort, cfg: &ScanConfig) -> ScanReport {
    let limiter = cfg.qps.map(RateLimiter::new);
    scan_domain_paced(d, resolver, cfg, limiter.as_ref())
}

fn scan_domain_paced(
    d: &DomainName,
    resolver: &dyn ResolverPort,
    cfg: &ScanConfig,
    limiter: Option<&RateLimiter>,
) -> ScanReport {
    let mut report = ScanReport {
        domain: d.to_string(),
        ..Default::default()
    };
    let notes: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let probe = |owner: &DomainName, rtype: RecordType, label: &str| -> Vec<Vec<u8>> {
        if let Some(l) = limiter {
            l.pace();
        }
        match resolver.query(owner, rtype) {
            Ok(payloads) => payloads,
            Err(e) => {
                notes.lock().unwrap().push(format!("{label}: {e}"));
                Vec::new()
            }
        }
    };

    let txt_has_prefix = |payloads: &[Vec<u8>], prefix: &str| {
        payloads
            .iter()
            .any(|p| std::str::from_utf8(p).is_ok_and(|s| s.starts_with(prefix)))
    };

    report.spf = txt_has_prefix(&probe(d, RecordType::Txt, "SPF"), "v=spf1");

    for selector in &cfg.dkim_selectors {
        let owner = match format!("{selector}._domainkey.{d}").parse::<DomainName>() {
            Ok(o) => o,
            Err(e) => {
                report.error_notes.push(format!("DKIM selector {selector}: {e}"));
                continue;
            }
        };
        if !probe(&owner, RecordType::Txt, "DKIM").is_empty() {
            report.dkim = true;
            break;
        }
    }
    if !report.dkim {
        report
            .error_notes
            .push("DKIM: no record under any configured selector (possible under-count)".into());
    }

    let dmarc_owner = d.prepend("_dmarc").expect("_dmarc label is valid");
    report.dmarc = txt_has_prefix(&probe(&dmarc_owner, RecordType::Txt, "DMARC"), "v=DMARC1");

    report.dnssec = !probe(d, RecordType::Dnskey, "DNSSEC").is_empty();
    report.caa = !probe(d, RecordType::Caa, "CAA").is_empty();

    let tlsa_owner: DomainName = format!("_443._tcp.{d}")
        .parse()
        .expect("_443._tcp labels are valid");
    report.dane = !probe(&tlsa_owner, RecordType::Tlsa, "DANE").is_empty();

    if cfg.probe_tls {
        match probe_tls_handshake(&report.domain) {
            Ok(()) => report.tls = true,
            Err(e) => report.error_notes.push(format!("TLS: {e}")),
        }
    }
    report.error_notes.extend(notes.into_inner().unwrap());
    report
}

/// Minimal TLS reachability check: TCP connect to :443, send a TLS 1.2
/// ClientHello, and accept any handshake-record response. Success only.
fn probe_tls_handshake(host: &str) -> Result<(), String> {
    use std::net::{TcpStream, ToSocketAddrs};
    let addr = (host, 443u16)
        .to_socket_addrs()
        .map_err(|e| e.to_string())?
        .next()
        .ok_or("no address")?;
    let mut stream =
        TcpStream::connect_timeout(&addr, Duration::from_secs(5)).map_err(|e| e.to_string())?;
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .map_err(|e| e.to_string())?;
    // bare-bones ClientHello: TLS 1.2, one AES-128-GCM suite, no extensions
    let mut hello: Vec<u8> = vec![
        0x16, 0x03, 0x03, 0x00, 0x00, // handshake record, length patched below
        0x01, 0x00, 0x00, 0x00, // client_hello, length patched below
        0x03, 0x03,
    ];
    hello.extend_from_slice(&[0u8; 32]); // random
    hello.push(0); // session id
    hello.extend_from_slice(&[0x00, 0x02, 0xc0, 0x2f]); // cipher suites
    hello.extend_from_slice(&[0x01, 0x00]); // null compression
    hello.extend_from_slice(&[0x00, 0x00]); // no extensions
    let body_len = hello.len() - 9;
    hello[6..9].copy_from_slice(&(body_len as u32).to_be_bytes()[1..]);
    let rec_len = hello.len() - 5;
    hello[3..5].copy_from_slice(&(rec_len as u16).to_be_bytes());
    stream.write_all(&hello).map_err(|e| e.to_string())?;
    let mut first = [0u8; 1];
    stream.read_exact(&mut first).map_err(|e| e.to_string())?;
    if first[0] == 0x16 {
        Ok(())
    } else {
        Err(format!("unexpected record type 0x{:02x}", first[0]))
    }
}

/// Scans a list of domains, up to `cfg.parallelism` at a time; results keep
/// input order. A shared rate limiter paces all workers together.
pub fn scan_list(
    domains: &[DomainName],
    resolver: &dyn ResolverPort,
    cfg: &ScanConfig,
) -> Vec<ScanReport> {
    let limiter = cfg.qps.map(RateLimiter::new);
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<ScanReport>>> = Mutex::new(vec![None; domains.len()]);
    std::thread::scope(|s| {
        for _ in 0..cfg.parallelism.max(1) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(d) = domains.get(i) else { break };
                let report = scan_domain_paced(d, resolver, cfg, limiter.as_ref());
                results.lock().unwrap()[i] = Some(report);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every index scanned"))
        .collect()
}

pub const POLICY_NAMES: [&str; 7] = ["SPF", "DKIM", "DMARC", "DNSSEC", "CAA", "DANE", "TLS"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregateTable {
    pub total: usize,
    /// Counts in [`POLICY_NAMES`] order.
    pub per_policy: [usize; 7],
    /// `at_least[k-1]` = domains with >= k DNS policies, k = 1..=6.
    pub at_least: [usize; 6],
    /// `exact[k-1]` = domains with exactly k DNS policies.
    pub exact: [usize; 6],
}

impl AggregateTable {
    /// Percentage of scanned domains, Table-style 2-decimal rendering.
    pub fn percentage(&self, count: usize) -> String {
        format!("{:.2}", 100.0 * count as f64 / self.total as f64)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("Scanned domains: {}\n\n", self.total));
        out.push_str("Policy    Count  Percent\n");
        for (name, count) in POLICY_NAMES.iter().zip(self.per_policy) {
            out.push_str(&format!(
                "{name:<9} {count:>5}  {:>6}%\n",
                self.percentage(count)
            ));
        }
        out.push_str("\nPolicies  At least  Exactly\n");
        for k in 1..=6 {
            out.push_str(&format!(
                "{k:<9} {:>8}  {:>7}\n",
                self.at_least[k - 1],
                self.exact[k - 1]
            ));
        }
        out
    }
}

/// Per-policy totals plus the policies-per-domain distribution.
pub fn aggregate(reports: &[ScanReport]) -> Result<AggregateTable, ScanError> {
    if reports.is_empty() {
        return Err(ScanError::Empty);
    }
    let mut per_policy = [0usize; 7];
    let mut exact = [0usize; 6];
    for r in reports {
        for (slot, flag) in per_policy
            .iter_mut()
            .zip([r.spf, r.dkim, r.dmarc, r.dnssec, r.caa, r.dane, r.tls])
        {
            *slot += flag as usize;
        }
        let k = r.policy_count();
        if k >= 1 {
            exact[k - 1] += 1;
        }
    }
    let mut at_least = [0usize; 6];
    let mut running = 0;
    for k in (1..=6).rev() {
        running += exact[k - 1];
        at_least[k - 1] = running;
    }
    Ok(AggregateTable {
        total: reports.len(),
        per_policy,
        at_least,
        exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testnet::{serve, ZoneFixture};

    fn domain(s: &str) -> DomainName {
        s.parse().unwrap()
    }

    fn zone_with(domain: &str, flags: &[&str]) -> ZoneFixture {
        let mut zone = ZoneFixture::new();
        for flag in flags {
            match *flag {
                "spf" => zone.add(
                    domain.parse().unwrap(),
                    RecordType::Txt,
                    b"v=spf1 a include:aspmx.googlemail.com ~all".to_vec(),
                ),
                "dkim" => zone.add(
                    format!("selector1._domainkey.{domain}").parse().unwrap(),
                    RecordType::Txt,
                    b"v=DKIM1; k=rsa; p=TAMAfMA0GCSqGSIb3DQLOGE".to_vec(),
                ),
                "dmarc" => zone.add(
                    format!("_dmarc.{domain}").parse().unwrap(),
                    RecordType::Txt,
                    b"v=DMARC1; p=reject".to_vec(),
                ),
                "dnssec" => zone.add(domain.parse().unwrap(), RecordType::Dnskey, vec![1, 2, 3]),
                "caa" => zone.add(
                    domain.parse().unwrap(),
                    RecordType::Caa,
                    b"\x00\x05issueletsencrypt.org".to_vec(),
                ),
                "dane" => zone.add(
                    format!("_443._tcp.{domain}").parse().unwrap(),
                    RecordType::Tlsa,
                    vec![3, 1, 1, 0xaa],
                ),
                other => panic!("unknown flag {other}"),
            }
        }
        zone
    }

    #[test]
    fn detects_spf_and_dmarc_only() {
        let resolver = serve(zone_with("a.com", &["spf", "dmarc"]), None);
        let report = scan_domain(&domain("a.com"), &resolver, &ScanConfig::default());
        assert!(report.spf && report.dmarc);
        assert!(!report.dkim && !report.dnssec && !report.caa && !report.dane && !report.tls);
    }

    #[test]
    fn empty_zone_all_false_and_probe_set_exact() {
        let cfg = ScanConfig::default();
        let resolver = serve(ZoneFixture::new(), None);
        let report = scan_domain(&domain("a.com"), &resolver, &cfg);
        assert_eq!(report.policy_count(), 0);

        let mut expected = vec![("a.com".to_string(), RecordType::Txt)];
        for sel in &cfg.dkim_selectors {
            expected.push((format!("{sel}._domainkey.a.com"), RecordType::Txt));
        }
        expected.push(("_dmarc.a.com".to_string(), RecordType::Txt));
        expected.push(("a.com".to_string(), RecordType::Dnskey));
        expected.push(("a.com".to_string(), RecordType::Caa));
        expected.push(("_443._tcp.a.com".to_string(), RecordType::Tlsa));
        let log: Vec<(String, RecordType)> = resolver
            .query_log()
            .into_iter()
            .map(|(o, t)| (o.to_string(), t))
            .collect();
        assert_eq!(log, expected);
    }

    #[test]
    fn dkim_selector_hit_and_miss_note() {
        let resolver = serve(zone_with("a.com", &["dkim"]), None);
        let report = scan_domain(&domain("a.com"), &resolver, &ScanConfig::default());
        assert!(report.dkim);

        let resolver = serve(ZoneFixture::new(), None);
        let report = scan_domain(&domain("a.com"), &resolver, &ScanConfig::default());
        assert!(!report.dkim);
        assert!(report.error_notes.iter().any(|n| n.contains("under-count")));
    }

    #[test]
    fn aggregate_counts_and_distribution() {
        let all = ["spf", "dkim", "dmarc", "dnssec", "caa", "dane"];
        let mut reports = Vec::new();
        // 3 domains with one policy, 2 with two, 1 with all six
        for i in 0..3 {
            let d = format!("one{i}.example");
            let resolver = serve(zone_with(&d, &["spf"]), None);
            reports.push(scan_domain(&domain(&d), &resolver, &ScanConfig::default()));
        }
        for i in 0..2 {
            let d = format!("two{i}.example");
            let resolver = serve(zone_with(&d, &["spf", "dmarc"]), None);
            reports.push(scan_domain(&domain(&d), &resolver, &ScanConfig::default()));
        }
        let resolver = serve(zone_with("six.example", &all), None);
        reports.push(scan_domain(&domain("six.example"), &resolver, &ScanConfig::default()));

        let table = aggregate(&reports).unwrap();
        assert_eq!(table.total, 6);
        assert_eq!(table.per_policy[0], 6); // SPF everywhere
        assert_eq!(table.per_policy[2], 3); // DMARC on two+six
        assert_eq!(table.exact, [3, 2, 0, 0, 0, 1]);
        assert_eq!(table.at_least, [6, 3, 1, 1, 1, 1]);
        assert_eq!(table.percentage(table.per_policy[2]), "50.00");

        // permutation invariance
        let mut shuffled = reports.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        assert_eq!(aggregate(&shuffled).unwrap(), table);
    }

    #[test]
    fn aggregate_rejects_empty_input() {
        assert!(matches!(aggregate(&[]), Err(ScanError::Empty)));
    }

    #[test]
    fn single_domain_with_six_policies_degenerate_distribution() {
        let all = ["spf", "dkim", "dmarc", "dnssec", "caa", "dane"];
        let resolver = serve(zone_with("six.example", &all), None);
        let report = scan_domain(&domain("six.example"), &resolver, &ScanConfig::default());
        let table = aggregate(std::slice::from_ref(&report)).unwrap();
        assert_eq!(table.at_least, [1; 6]);
    }

    #[test]
    fn scan_list_keeps_input_order() {
        let mut zone = zone_with("a.com", &["spf"]);
        for (owner, rtype, payload) in {
            let z = zone_with("b.com", &["dmarc"]);
            // merge the second fixture zone into the first
            let resolver = serve(z, None);
            let owner: DomainName = "_dmarc.b.com".parse().unwrap();
            let payload = resolver.query_txt(&owner).unwrap().remove(0);
            vec![(owner, RecordType::Txt, payload)]
        } {
            zone.add(owner, rtype, payload);
        }
        let resolver = serve(zone, None);
        let domains = vec![domain("a.com"), domain("b.com"), domain("c.com")];
        let reports = scan_list(&domains, &resolver, &ScanConfig::default());
        assert_eq!(reports.len(), 3);
        assert_eq!(reports[0].domain, "a.com");
        assert!(reports[0].spf);
        assert_eq!(reports[1].domain, "b.com");
        assert!(reports[1].dmarc && !reports[1].spf);
        assert_eq!(reports[2].policy_count(), 0);
    }

    #[test]
    fn csv_output_shape() {
        let resolver = serve(zone_with("a.com", &["spf"]), None);
        let report = scan_domain(&domain("a.com"), &resolver, &ScanConfig::default());
        let csv = to_csv(std::slice::from_ref(&report));
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        let row = lines.next().unwrap();
        assert!(row.starts_with("a.com,1,0,"), "row was {row}");
    }
}
