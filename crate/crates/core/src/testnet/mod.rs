//! In-process authoritative DNS fixture with query logging and adversary
//! transforms, for deterministic end-to-end and security tests. Optionally
//! binds a UDP socket to exercise the wire adapter.

mod udp;

pub use udp::UdpServer;

use std::collections::HashMap;
use std::sync::Mutex;

use thiserror::Error;

use crate::codec::{self, TxtRecordSet, METAPOLICY_LABEL};
use crate::model::DomainName;
use crate::resolver::{RecordPayloads, RecordType, ResolveError, ResolverPort};

#[derive(Debug, Error)]
pub enum ZoneError {
    #[error("zone line {line}: {reason}")]
    Bad { line: usize, reason: String },
}

/// A static record map, mutable during test setup only; serving reads it.
#[derive(Debug, Clone, Default)]
pub struct ZoneFixture {
    records: HashMap<(DomainName, RecordType), Vec<Vec<u8>>>,
}

impl ZoneFixture {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds one record. TXT payloads are the concatenated character-string
    /// bytes; other types carry raw RDATA.
    pub fn add(&mut self, owner: DomainName, rtype: RecordType, payload: Vec<u8>) {
        self.records.entry((owner, rtype)).or_default().push(payload);
    }

    pub fn remove(&mut self, owner: &DomainName, rtype: RecordType) {
        self.records.remove(&(owner.clone(), rtype));
    }

    /// Publishes a metapolicy record set as TXT records.
    pub fn publish(&mut self, set: &TxtRecordSet) {
        for part in &set.parts {
            self.add(part.owner.clone(), RecordType::Txt, part.payload.clone());
        }
    }

    /// Removes every `_metapolicy` TXT record for `domain` (all parts).
    pub fn unpublish_metapolicy(&mut self, domain: &DomainName) {
        self.records
            .retain(|(owner, _), _| !owner_belongs_to_metapolicy_of(owner, domain));
    }

    /// Loads TXT (and A) records from RFC 1035 master-file lines, the format
    /// the publisher emits.
    pub fn load_zone_fragment(&mut self, text: &str) -> Result<usize, ZoneError> {
        let mut loaded = 0;
        for (idx, raw) in text.lines().enumerate() {
            let ln = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with(';') {
                continue;
            }
            let bad = |reason: &str| ZoneError::Bad {
                line: ln,
                reason: reason.to_string(),
            };
            let mut rest = line;
            let mut take_token = || -> Option<&str> {
                rest = rest.trim_start();
                if rest.is_empty() {
                    return None;
                }
                let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
                let (tok, tail) = rest.split_at(end);
                rest = tail;
                Some(tok)
            };
            let owner_tok = take_token().ok_or_else(|| bad("missing owner"))?;
            let _ttl = take_token().ok_or_else(|| bad("missing ttl"))?;
            let class = take_token().ok_or_else(|| bad("missing class"))?;
            if class != "IN" {
                return Err(bad("expected class IN"));
            }
            let rtype_tok = take_token().ok_or_else(|| bad("missing type"))?.to_string();
            let owner: DomainName = owner_tok
                .parse()
                .map_err(|e| bad(&format!("bad owner: {e}")))?;
            match rtype_tok.as_str() {
                "TXT" => {
                    let payload = parse_quoted_strings(rest)
                        .map_err(|reason| ZoneError::Bad { line: ln, reason })?;
                    self.add(owner, RecordType::Txt, payload);
                }
                "A" => {
                    let ip: std::net::Ipv4Addr = rest
                        .trim()
                        .parse()
                        .map_err(|_| bad("bad IPv4 address"))?;
                    self.add(owner, RecordType::A, ip.octets().to_vec());
                }
                other => {
                    return Err(bad(&format!("unsupported record type {other}")));
                }
            }
            loaded += 1;
        }
        Ok(loaded)
    }

    fn get(&self, owner: &DomainName, rtype: RecordType) -> Vec<Vec<u8>> {
        self.records
            .get(&(owner.clone(), rtype))
            .cloned()
            .unwrap_or_default()
    }
}

/// Unescapes master-file quoted character-strings and concatenates them.
fn parse_quoted_strings(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    let mut chars = s.trim().chars().peekable();
    let mut in_string = false;
    let mut any = false;
    while let Some(c) = chars.next() {
        if !in_string {
            match c {
                '"' => {
                    in_string = true;
                    any = true;
                }
                c if c.is_whitespace() => {}
                other => return Err(format!("unexpected character {other:?} outside string")),
            }
            continue;
        }
        match c {
            '"' => in_string = false,
            '\\' => match chars.next() {
                Some(d) if d.is_ascii_digit() => {
                    let mut code = d.to_digit(10).unwrap();
                    for _ in 0..2 {
                        let d = chars
                            .next()
                            .and_then(|c| c.to_digit(10))
                            .ok_or("bad \\DDD escape")?;
                        code = code * 10 + d;
                    }
                    out.push(u8::try_from(code).map_err(|_| "\\DDD escape out of range")?);
                }
                Some(other) => out.push(other as u8),
                None => return Err("dangling backslash".to_string()),
            },
            other => {
                let mut buf = [0u8; 4];
                out.extend_from_slice(other.encode_utf8(&mut buf).as_bytes());
            }
        }
    }
    if in_string {
        return Err("unterminated string".to_string());
    }
    if !any {
        return Err("no character-strings".to_string());
    }
    Ok(out)
}

/// If `owner` is a metapolicy part name, the 1-based part index.
pub fn metapolicy_part_index(owner: &DomainName) -> Option<u64> {
    let labels = owner.labels();
    if labels.first().map(String::as_str) == Some(METAPOLICY_LABEL) {
        return Some(1);
    }
    if labels.get(1).map(String::as_str) == Some(METAPOLICY_LABEL) {
        return labels[0].parse().ok();
    }
    None
}

fn owner_belongs_to_metapolicy_of(owner: &DomainName, domain: &DomainName) -> bool {
    metapolicy_part_index(owner).is_some() && owner.is_descendant_of(domain)
}

/// Response-level adversary behavior; the underlying zone is never touched.
#[derive(Debug, Clone)]
pub enum AdversaryTransform {
    /// Answer empty for every metapolicy owner name.
    StripAllMetapolicy,
    /// Answer empty for the given part indices.
    StripParts(Vec<u64>),
    /// Flip one payload byte of the given part.
    TamperByte { part: u64, offset: usize },
    /// Serve metapolicy names from an older zone snapshot.
    RollbackTo(Box<ZoneFixture>),
    /// Reverse the record order in every multi-record response.
    ReorderParts,
}

/// An in-memory authoritative resolver over a zone, with an append-only
/// query log and an optional adversary transform between zone and response.
pub struct TestResolver {
    zone: ZoneFixture,
    transform: Option<AdversaryTransform>,
    log: Mutex<Vec<(DomainName, RecordType)>>,
}

/// Builds a resolver serving `zone`, optionally through a transform.
pub fn serve(zone: ZoneFixture, transform: Option<AdversaryTransform>) -> TestResolver {
    TestResolver {
        zone,
        transform,
        log: Mutex::new(Vec::new()),
    }
}

impl TestResolver {
    /// The exact sequence of queries received so far.
    pub fn query_log(&self) -> Vec<(DomainName, RecordType)> {
        self.log.lock().unwrap().clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }

    fn respond(&self, owner: &DomainName, rtype: RecordType) -> Vec<Vec<u8>> {
        let part = metapolicy_part_index(owner);
        match (&self.transform, part) {
            (Some(AdversaryTransform::StripAllMetapolicy), Some(_)) => Vec::new(),
            (Some(AdversaryTransform::StripParts(indices)), Some(idx))
                if indices.contains(&idx) =>
            {
                Vec::new()
            }
            (Some(AdversaryTransform::TamperByte { part, offset }), Some(idx))
                if *part == idx && rtype == RecordType::Txt =>
            {
                let mut records = self.zone.get(owner, rtype);
                for r in &mut records {
                    if let Some(b) = r.get_mut(*offset) {
                        *b ^= 0x01;
                    }
                }
                records
            }
            (Some(AdversaryTransform::RollbackTo(snapshot)), Some(_)) => {
                snapshot.get(owner, rtype)
            }
            (Some(AdversaryTransform::ReorderParts), _) => {
                let mut records = self.zone.get(owner, rtype);
                records.reverse();
                records
            }
            _ => self.zone.get(owner, rtype),
        }
    }
}

impl ResolverPort for TestResolver {
    fn query(&self, owner: &DomainName, rtype: RecordType) -> Result<RecordPayloads, ResolveError> {
        self.log.lock().unwrap().push((owner.clone(), rtype));
        Ok(self.respond(owner, rtype))
    }
}

/// Publishes a metapolicy into a fresh zone, a common test setup.
pub fn zone_with_metapolicy(m: &crate::model::Metapolicy) -> ZoneFixture {
    let mut zone = ZoneFixture::new();
    let set = codec::encapsulate(m).expect("fixture metapolicy encapsulates");
    zone.publish(&set);
    zone
}
