//! `metapolicy`: operator and agent entry points.
//!
//! Exit codes: 0 success, 2 policy hard-failure (enforcement terminated),
//! 3 verification failure, 4 resolution failure, 64 usage error.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde_json::json;

use metapolicy_core::agent::{
    self, AccessContext, EvaluatorRegistry, FileReportSink, NullReportSink, PolicyCache,
    ReportSink,
};
use metapolicy_core::model::{self, DomainName, Metapolicy};
use metapolicy_core::publisher::{self, PolicyConfig};
use metapolicy_core::resolver::ResolverPort;
use metapolicy_core::scanner::{self, ScanConfig};
use metapolicy_core::testnet::{self, UdpServer};
use metapolicy_core::trust::{self, Clock, SigningKey, TrustConfig};
use metapolicy_core::wire::UdpResolver;
use metapolicy_core::{codec, fixtures};

const EXIT_POLICY_HARD: i32 = 2;
const EXIT_VERIFY: i32 = 3;
const EXIT_RESOLVE: i32 = 4;
const EXIT_USAGE: i32 = 64;

/// Stable `--json` output schema version.
const JSON_SCHEMA_VERSION: u32 = 1;

#[derive(Parser)]
#[command(
    name = "metapolicy",
    version,
    about = "Publish, fetch, verify, and enforce signed domain metapolicies over DNS"
)]
struct Cli {
    /// Emit machine-readable JSON instead of text
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate an operator config and write a draft policy description
    Create {
        /// TOML policy configuration
        #[arg(long)]
        config: PathBuf,
        /// Draft output path (validated TOML)
        #[arg(long)]
        out: PathBuf,
        /// Version currently published, for automatic version numbering
        #[arg(long)]
        previous_version: Option<u64>,
    },
    /// Sign a draft and emit the canonical policy plus a zone fragment
    Sign {
        /// Draft TOML produced by `create` (or written by hand)
        #[arg(long)]
        draft: PathBuf,
        /// Private key (PKCS#8 PEM or DER)
        #[arg(long)]
        key: PathBuf,
        /// Certificate chain PEM, leaf first; omit for DNSSEC-signed zones
        #[arg(long)]
        chain: Option<PathBuf>,
        /// Canonical policy output (.mpol)
        #[arg(long)]
        out: PathBuf,
        /// Zone fragment output (.zone); defaults next to --out
        #[arg(long)]
        zone: Option<PathBuf>,
        /// TTL for emitted TXT records
        #[arg(long, default_value_t = 3600)]
        ttl: u32,
        /// Version currently published, for automatic version numbering
        #[arg(long)]
        previous_version: Option<u64>,
    },
    /// Fetch and verify a domain's metapolicy over DNS
    Fetch {
        domain: String,
        /// DNS server address, e.g. 127.0.0.1:53
        #[arg(long)]
        resolver: SocketAddr,
        /// Write the canonical policy here
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        trust: TrustArgs,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Verify a canonical policy file against configured trust material
    Verify {
        /// Canonical .mpol file
        policy: PathBuf,
        #[command(flatten)]
        trust: TrustArgs,
    },
    /// Look up a domain's policy and enforce one policy id against a context
    Enforce {
        domain: String,
        #[arg(long)]
        policy_id: u64,
        /// JSON access context: {"client_ip": "...", "properties": {...}}
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long)]
        resolver: SocketAddr,
        /// Append failure reports to this JSON-lines file
        #[arg(long)]
        report_log: Option<PathBuf>,
        #[command(flatten)]
        trust: TrustArgs,
        #[command(flatten)]
        cache: CacheArgs,
    },
    /// Probe a list of domains for existing policy records and aggregate
    Scan {
        /// Newline-delimited domain list
        domains: PathBuf,
        #[arg(long)]
        resolver: SocketAddr,
        /// Queries per second across all probes (0 = unlimited)
        #[arg(long, default_value_t = 20)]
        qps: u32,
        #[arg(long, default_value_t = 8)]
        parallelism: usize,
        /// Write per-domain results as CSV
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Measure policy size, part counts, fetch latency, and verify time
    Bench {
        /// Measure against a real resolver instead of the in-process fixture
        #[arg(long, requires = "resolver")]
        live: bool,
        /// DNS server for --live
        #[arg(long)]
        resolver: Option<SocketAddr>,
        /// Domain to fetch in --live mode
        #[arg(long, default_value = "a.com")]
        domain: String,
        #[arg(long, default_value_t = 20)]
        iterations: u32,
    },
}

#[derive(clap::Args)]
struct TrustArgs {
    /// Directory of PEM root certificates
    #[arg(long)]
    root_store: Option<PathBuf>,
    /// DNSSEC trust anchor as <domain>=<spki-der-file>; repeatable
    #[arg(long = "dnssec-anchor")]
    dnssec_anchors: Vec<String>,
    /// Evaluate validity as of this date (YYYY-MM-DD) instead of now
    #[arg(long)]
    at: Option<NaiveDate>,
}

#[derive(clap::Args)]
struct CacheArgs {
    /// Policy cache snapshot path [env: METAPOLICY_CACHE]
    #[arg(long, env = "METAPOLICY_CACHE")]
    cache: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, message)
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's help/version "errors" are success paths
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(EXIT_USAGE);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(f) = run(&cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, data: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, data).map_err(|e| Failure::new(1, format!("{}: {e}", path.display())))
}

fn parse_domain(s: &str) -> Result<DomainName, Failure> {
    s.parse()
        .map_err(|e| Failure::usage(format!("domain {s:?}: {e}")))
}

impl TrustArgs {
    fn build(&self) -> Result<TrustConfig, Failure> {
        let clock = match self.at {
            Some(date) => Clock::Fixed(
                date.and_hms_opt(12, 0, 0)
                    .expect("noon exists")
                    .and_utc(),
            ),
            None => Clock::System,
        };
        let mut cfg = TrustConfig {
            clock,
            ..Default::default()
        };
        if let Some(dir) = &self.root_store {
            cfg.load_root_store_dir(dir)
                .map_err(|e| Failure::usage(format!("--root-store {}: {e}", dir.display())))?;
        }
        for spec in &self.dnssec_anchors {
            let (domain, path) = spec
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("--dnssec-anchor {spec:?}: expected <domain>=<file>")))?;
            let domain = parse_domain(domain)?;
            let key = read_file(Path::new(path))?;
            cfg.dnssec_anchors.entry(domain).or_default().push(key);
        }
        Ok(cfg)
    }
}

impl CacheArgs {
    fn open(&self) -> Result<PolicyCache, Failure> {
        match &self.cache {
            Some(path) => PolicyCache::open(path)
                .map_err(|e| Failure::usage(format!("cache {}: {e}", path.display()))),
            None => Ok(PolicyCache::in_memory()),
        }
    }
}

fn load_policy(path: &Path) -> Result<Metapolicy, Failure> {
    let bytes = read_file(path)?;
    model::parse(&bytes).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn agent_failure(e: agent::AgentError) -> Failure {
    let code = match &e {
        agent::AgentError::HardFailure(_) => EXIT_VERIFY,
        agent::AgentError::Resolution(_) | agent::AgentError::NoPolicy(_) => EXIT_RESOLVE,
        agent::AgentError::Codec(_) | agent::AgentError::Parse(_) => EXIT_VERIFY,
        _ => 1,
    };
    Failure::new(code, e.to_string())
}

fn emit(json: bool, payload: serde_json::Value, text: String) {
    if json {
        let mut obj = payload;
        obj["schema_version"] = json!(JSON_SCHEMA_VERSION);
        println!("{obj}");
    } else {
        println!("{text}");
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Create {
            config,
            out,
            previous_version,
        } => {
            let text = String::from_utf8(read_file(config)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", config.display())))?;
            let parsed = PolicyConfig::from_toml(&text).map_err(|e| Failure::usage(e.to_string()))?;
            let draft = publisher::build(&parsed, *previous_version)
                .map_err(|e| Failure::usage(e.to_string()))?;
            write_file(out, text.as_bytes())?;
            emit(
                cli.json,
                json!({
                    "command": "create",
                    "domain": draft.header.domain.to_string(),
                    "version": draft.header.version,
                    "policies": draft.policies.len(),
                    "draft": out.display().to_string(),
                }),
                format!(
                    "draft for {} version {} ({} policies) -> {}",
                    draft.header.domain,
                    draft.header.version,
                    draft.policies.len(),
                    out.display()
                ),
            );
            Ok(())
        }
        Command::Sign {
            draft,
            key,
            chain,
            out,
            zone,
            ttl,
            previous_version,
        } => {
            let text = String::from_utf8(read_file(draft)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", draft.display())))?;
            let config = PolicyConfig::from_toml(&text).map_err(|e| Failure::usage(e.to_string()))?;
            let unsigned = publisher::build(&config, *previous_version)
                .map_err(|e| Failure::usage(e.to_string()))?;
            let key = SigningKey::load(&read_file(key)?)
                .map_err(|e| Failure::usage(format!("key: {e}")))?;
            let chain = match chain {
                Some(path) => trust::load_chain_pem(&read_file(path)?)
                    .map_err(|e| Failure::usage(format!("chain: {e}")))?,
                None => Default::default(),
            };
            let finalized = publisher::finalize(&unsigned, &key, chain)
                .map_err(|e| Failure::new(1, e.to_string()))?;
            write_file(out, &finalized.metapolicy.canonical_serialize().unwrap())?;
            let zone_path = zone
                .clone()
                .unwrap_or_else(|| out.with_extension("zone"));
            write_file(
                &zone_path,
                publisher::emit_zone_fragment(&finalized.records, *ttl).as_bytes(),
            )?;
            emit(
                cli.json,
                json!({
                    "command": "sign",
                    "domain": finalized.metapolicy.header.domain.to_string(),
                    "version": finalized.metapolicy.header.version,
                    "parts": finalized.metapolicy.header.parts,
                    "policy": out.display().to_string(),
                    "zone": zone_path.display().to_string(),
                }),
                format!(
                    "signed {} version {} in {} part(s) -> {} + {}",
                    finalized.metapolicy.header.domain,
                    finalized.metapolicy.header.version,
                    finalized.metapolicy.header.parts,
                    out.display(),
                    zone_path.display()
                ),
            );
            Ok(())
        }
        Command::Fetch {
            domain,
            resolver,
            out,
            trust,
            cache,
        } => {
            let domain = parse_domain(domain)?;
            let cfg = trust.build()?;
            let cache = cache.open()?;
            let resolver = UdpResolver::new(*resolver);
            let m = agent::lookup(&domain, &resolver, &cache, &cfg).map_err(agent_failure)?;
            let bytes = m.canonical_serialize().unwrap();
            if let Some(path) = out {
                write_file(path, &bytes)?;
            }
            emit(
                cli.json,
                json!({
                    "command": "fetch",
                    "domain": domain.to_string(),
                    "version": m.header.version,
                    "parts": m.header.parts,
                    "size_bytes": bytes.len(),
                    "output": out.as_ref().map(|p| p.display().to_string()),
                }),
                format!(
                    "fetched {} version {}: {} bytes in {} part(s)",
                    domain,
                    m.header.version,
                    bytes.len(),
                    m.header.parts
                ),
            );
            Ok(())
        }
        Command::Verify { policy, trust } => {
            let m = load_policy(policy)?;
            let cfg = trust.build()?;
            let result = trust::verify(&m, &cfg);
            emit(
                cli.json,
                json!({
                    "command": "verify",
                    "domain": m.header.domain.to_string(),
                    "version": m.header.version,
                    "status": result.status.token(),
                    "details": result.details,
                }),
                format!("{}: {result}", m.header.domain),
            );
            if result.is_valid() {
                Ok(())
            } else {
                Err(Failure::new(
                    EXIT_VERIFY,
                    format!("verification failed: {result}"),
                ))
            }
        }
        Command::Enforce {
            domain,
            policy_id,
            context,
            resolver,
            report_log,
            trust,
            cache,
        } => {
            let domain = parse_domain(domain)?;
            let cfg = trust.build()?;
            let cache = cache.open()?;
            let resolver = UdpResolver::new(*resolver);
            let m = agent::lookup(&domain, &resolver, &cache, &cfg).map_err(agent_failure)?;
            let ctx = match context {
                Some(path) => parse_context(&domain, &read_file(path)?)?,
                None => AccessContext::for_domain(domain.clone()),
            };
            let sink: Box<dyn ReportSink> = match report_log {
                Some(path) => Box::new(FileReportSink::new(path)),
                None => Box::new(NullReportSink),
            };
            let registry = EvaluatorRegistry::with_defaults();
            let outcome = agent::enforce(
                &m,
                *policy_id,
                &ctx,
                &registry,
                Some(&resolver),
                sink.as_ref(),
                &cfg,
            );
            match outcome {
                None => Err(Failure::usage(format!(
                    "policy id {policy_id} not present in {domain}'s metapolicy"
                ))),
                Some(outcome) => {
                    emit(
                        cli.json,
                        json!({
                            "command": "enforce",
                            "domain": domain.to_string(),
                            "policy_id": policy_id,
                            "decision": outcome.decision.token(),
                            "reports": outcome
                                .reports
                                .iter()
                                .map(|r| serde_json::to_value(r).unwrap())
                                .collect::<Vec<_>>(),
                        }),
                        format!(
                            "policy {} on {}: {}",
                            policy_id,
                            domain,
                            outcome.decision.token()
                        ),
                    );
                    if outcome.decision == agent::Decision::Terminate {
                        Err(Failure::new(
                            EXIT_POLICY_HARD,
                            format!("policy {policy_id} hard-failed; connection must terminate"),
                        ))
                    } else {
                        Ok(())
                    }
                }
            }
        }
        Command::Scan {
            domains,
            resolver,
            qps,
            parallelism,
            csv,
        } => {
            let text = String::from_utf8(read_file(domains)?)
                .map_err(|e| Failure::usage(format!("{}: {e}", domains.display())))?;
            let list: Vec<DomainName> = text
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(parse_domain)
                .collect::<Result<_, _>>()?;
            if list.is_empty() {
                return Err(Failure::usage("domain list is empty"));
            }
            let cfg = ScanConfig {
                qps: (*qps > 0).then_some(*qps),
                parallelism: *parallelism,
                ..Default::default()
            };
            let client = UdpResolver::new(*resolver);
            let reports = scanner::scan_list(&list, &client, &cfg);
            let table = scanner::aggregate(&reports).expect("list is non-empty");
            if let Some(path) = csv {
                write_file(path, scanner::to_csv(&reports).as_bytes())?;
            }
            emit(
                cli.json,
                json!({
                    "command": "scan",
                    "total": table.total,
                    "per_policy": scanner::POLICY_NAMES
                        .iter()
                        .zip(table.per_policy)
                        .map(|(n, c)| json!({"policy": n, "count": c, "percent": table.percentage(c)}))
                        .collect::<Vec<_>>(),
                    "at_least": table.at_least,
                    "exact": table.exact,
                    "csv": csv.as_ref().map(|p| p.display().to_string()),
                }),
                table.render(),
            );
            Ok(())
        }
        Command::Bench {
            live,
            resolver,
            domain,
            iterations,
        } => bench(cli.json, *live, *resolver, domain, *iterations),
    }
}

fn parse_context(domain: &DomainName, bytes: &[u8]) -> Result<AccessContext, Failure> {
    let v: serde_json::Value =
        serde_json::from_slice(bytes).map_err(|e| Failure::usage(format!("context: {e}")))?;
    let mut ctx = AccessContext::for_domain(domain.clone());
    if let Some(ip) = v.get("client_ip").and_then(|x| x.as_str()) {
        ctx.client_ip = Some(
            ip.parse()
                .map_err(|e| Failure::usage(format!("context client_ip: {e}")))?,
        );
    }
    if let Some(props) = v.get("properties").and_then(|x| x.as_object()) {
        let mut map = HashMap::new();
        for (k, val) in props {
            let s = val
                .as_str()
                .ok_or_else(|| Failure::usage(format!("context property {k} must be a string")))?;
            map.insert(k.clone(), s.to_string());
        }
        ctx.properties = map;
    }
    Ok(ctx)
}

/// Deterministic overhead measurements against the in-process fixture, or
/// latency observation against a real resolver with --live.
fn bench(
    json: bool,
    live: bool,
    resolver: Option<SocketAddr>,
    domain: &str,
    iterations: u32,
) -> Result<(), Failure> {
    if live {
        let addr = resolver.expect("clap enforces --resolver with --live");
        let client = UdpResolver::new(addr);
        let domain = parse_domain(domain)?;
        let owner = codec::owner_name_for_part(1, &domain);
        let start = Instant::now();
        let result = client.query_txt(&owner);
        let elapsed = start.elapsed();
        let records = result.map_err(|e| Failure::new(EXIT_RESOLVE, e.to_string()))?;
        emit(
            json,
            json!({
                "command": "bench",
                "mode": "live",
                "owner": owner.to_string(),
                "records": records.len(),
                "latency_ms": elapsed.as_secs_f64() * 1e3,
            }),
            format!(
                "live: {} -> {} record(s) in {:.2} ms (informational only)",
                owner,
                records.len(),
                elapsed.as_secs_f64() * 1e3
            ),
        );
        return Ok(());
    }

    // fixture: a chain-signed policy padded toward the reference 5.4 KB size
    let pki = fixtures::generate_pki(
        metapolicy_core::model::SignatureAlgorithm::Ed25519,
        &fixtures::PkiOptions::for_domain("a.com"),
    );
    let mut draft = fixtures::fig2_unsigned();
    draft.policies[0].specification = format!("v=spf1 {}~all", "ip4:192.0.2.0/24 ".repeat(240));
    let finalized = publisher::finalize(&draft, &pki.signing_key(), pki.chain.clone())
        .map_err(|e| Failure::new(1, e.to_string()))?;
    let m = &finalized.metapolicy;
    let size = m.canonical_serialize().unwrap().len();
    let cfg = pki.trust_config(Clock::Fixed(
        chrono::NaiveDate::from_ymd_opt(2017, 6, 1)
            .unwrap()
            .and_hms_opt(12, 0, 0)
            .unwrap()
            .and_utc(),
    ));

    // per-part fetch latency through the real UDP wire path
    let mut zone = testnet::ZoneFixture::new();
    zone.publish(&finalized.records);
    let served = Arc::new(testnet::serve(zone, None));
    let server = UdpServer::spawn(Arc::clone(&served)).map_err(|e| Failure::new(1, e.to_string()))?;
    let client = UdpResolver::new(server.addr()).with_timeout(Duration::from_secs(2));
    let domain: DomainName = "a.com".parse().unwrap();
    let mut fetch_total = Duration::ZERO;
    let mut fetches = 0u32;
    for _ in 0..iterations {
        for part in 1..=m.header.parts {
            let owner = codec::owner_name_for_part(part, &domain);
            let start = Instant::now();
            client
                .query_txt(&owner)
                .map_err(|e| Failure::new(EXIT_RESOLVE, e.to_string()))?;
            fetch_total += start.elapsed();
            fetches += 1;
        }
    }
    let fetch_avg = fetch_total / fetches.max(1);

    let start = Instant::now();
    for _ in 0..iterations {
        if !trust::verify(m, &cfg).is_valid() {
            return Err(Failure::new(EXIT_VERIFY, "bench fixture failed to verify"));
        }
    }
    let verify_avg = start.elapsed() / iterations.max(1);

    emit(
        json,
        json!({
            "command": "bench",
            "mode": "fixture",
            "size_bytes": size,
            "parts": m.header.parts,
            "per_part_fetch_ms": fetch_avg.as_secs_f64() * 1e3,
            "verify_ms": verify_avg.as_secs_f64() * 1e3,
            "reference": {
                "size_bytes": 5400,
                "parts": 11,
                "per_part_fetch_ms": 20.0,
                "verify_ms": 4.0,
            },
        }),
        format!(
            "metapolicy size: {size} bytes (reference ~5400)\n\
             parts: {} (reference ~11)\n\
             per-part fetch over loopback UDP: {:.3} ms (reference ~20 ms on real networks)\n\
             verification ({}-cert chain): {:.3} ms (reference ~4 ms)",
            m.header.parts,
            fetch_avg.as_secs_f64() * 1e3,
            m.chain.certificates.len() + 1,
            verify_avg.as_secs_f64() * 1e3,
        ),
    );
    Ok(())
}
