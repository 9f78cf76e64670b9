//! Canonical line-oriented text form of a metapolicy.
//!
//! The layout is fixed: sections in the order Header, Policies, Signature,
//! Certificate; LF line endings; one space after each "Key:" separator;
//! dates zero-padded mm/dd/yyyy with a literal "UTC" suffix; signature and
//! certificates base64-encoded. Serialization is deterministic so the
//! signature bytes are well defined.

use std::str::FromStr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::NaiveDate;
use thiserror::Error;

use super::{
    CertificateChain, FailDirective, FailMode, Header, Metapolicy, PolicyEntry, SignatureBlock,
    SubdomainPattern, ValidityWindow,
};

const DATE_FMT: &str = "%m/%d/%Y";

fn push_date(out: &mut String, d: NaiveDate) {
    out.push_str(&d.format(DATE_FMT).to_string());
    out.push_str(" UTC");
}

pub(super) fn serialize_header_policies(header: &Header, policies: &[PolicyEntry]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str("Header:\n");
    out.push_str(&format!(" Domain: {}\n", header.domain));
    out.push_str(&format!(" Version: {}\n", header.version));
    out.push_str(" Valid From: ");
    push_date(&mut out, header.validity.valid_from);
    out.push('\n');
    out.push_str(" Valid To: ");
    push_date(&mut out, header.validity.valid_to);
    out.push('\n');
    out.push_str(&format!(" Parts: {}\n", header.parts));
    if header.subdomains.is_empty() {
        out.push_str(" Subdomains:\n");
    } else {
        let subs: Vec<String> = header.subdomains.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(" Subdomains: {}\n", subs.join(", ")));
    }
    out.push('\n');
    out.push_str("Policies:\n");
    for (i, p) in policies.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!(" Id: {}\n", p.id));
        out.push_str(&format!(" Specification: {}\n", p.specification));
        out.push_str(" Fail: ");
        out.push_str(p.fail.mode.token());
        for addr in &p.fail.report_addresses {
            out.push_str(", ");
            out.push_str(addr);
        }
        out.push('\n');
    }
    out.into_bytes()
}

pub(super) fn serialize(m: &Metapolicy) -> Vec<u8> {
    let mut out = serialize_header_policies(&m.header, &m.policies);
    out.push(b'\n');
    let sig = format!(
        "Signature: {}:{}\n",
        m.signature.algorithm.token(),
        B64.encode(&m.signature.value)
    );
    out.extend_from_slice(sig.as_bytes());
    out.push(b'\n');
    if m.chain.is_empty() {
        out.extend_from_slice(b"Certificate:\n");
    } else {
        let certs: Vec<String> = m.chain.certificates.iter().map(|c| B64.encode(c)).collect();
        out.extend_from_slice(format!("Certificate: {}\n", certs.join(", ")).as_bytes());
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("parse error at line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

impl ParseError {
    fn at(line: usize, reason: impl Into<String>) -> Self {
        ParseError {
            line,
            reason: reason.into(),
        }
    }
}

/// A line split into key and value, trailing whitespace removed. At most one
/// leading space of the value (the canonical separator) is consumed.
fn split_field(line: &str) -> Option<(&str, &str)> {
    let trimmed = line.trim_start().trim_end();
    let idx = trimmed.find(':')?;
    let key = &trimmed[..idx];
    let value = trimmed[idx + 1..].strip_prefix(' ').unwrap_or(&trimmed[idx + 1..]);
    Some((key, value))
}

fn parse_date(value: &str, line: usize) -> Result<NaiveDate, ParseError> {
    let body = value
        .strip_suffix("UTC")
        .ok_or_else(|| ParseError::at(line, format!("date {value:?} missing UTC suffix")))?
        .trim_end();
    // Zero-padding is optional on input; output is always padded.
    let mut it = body.split('/');
    let (m, d, y) = match (it.next(), it.next(), it.next(), it.next()) {
        (Some(m), Some(d), Some(y), None) => (m, d, y),
        _ => return Err(ParseError::at(line, format!("bad date {body:?}"))),
    };
    let parse_num = |s: &str| -> Result<u32, ParseError> {
        s.parse()
            .map_err(|_| ParseError::at(line, format!("bad date component {s:?}")))
    };
    let (m, d, y) = (parse_num(m)?, parse_num(d)?, parse_num(y)? as i32);
    NaiveDate::from_ymd_opt(y, m, d)
        .ok_or_else(|| ParseError::at(line, format!("invalid calendar date {body:?}")))
}

struct HeaderFields {
    domain: Option<super::DomainName>,
    version: Option<u64>,
    valid_from: Option<NaiveDate>,
    valid_to: Option<NaiveDate>,
    parts: Option<u64>,
    subdomains: Option<Vec<SubdomainPattern>>,
}

/// Parses canonical metapolicy text. Tolerates trailing whitespace per line
/// and unpadded dates; rejects unknown sections, out-of-order sections,
/// duplicate fields, and duplicate policy ids.
pub fn parse(bytes: &[u8]) -> Result<Metapolicy, ParseError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| ParseError::at(0, "input is not valid UTF-8"))?;

    #[derive(PartialEq, PartialOrd, Clone, Copy)]
    enum Section {
        Start,
        Header,
        Policies,
        Signature,
        Certificate,
    }

    let mut section = Section::Start;
    let mut hdr = HeaderFields {
        domain: None,
        version: None,
        valid_from: None,
        valid_to: None,
        parts: None,
        subdomains: None,
    };
    let mut policies: Vec<PolicyEntry> = Vec::new();
    let mut cur_id: Option<u64> = None;
    let mut cur_spec: Option<String> = None;
    let mut signature: Option<SignatureBlock> = None;
    let mut chain: Option<CertificateChain> = None;

    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let (key, value) = split_field(raw)
            .ok_or_else(|| ParseError::at(ln, format!("expected \"Key: value\", got {raw:?}")))?;

        match key {
            "Header" => {
                if section != Section::Start {
                    return Err(ParseError::at(ln, "Header section out of order"));
                }
                section = Section::Header;
            }
            "Policies" => {
                if section != Section::Header {
                    return Err(ParseError::at(ln, "Policies section out of order"));
                }
                section = Section::Policies;
            }
            "Signature" => {
                if section != Section::Policies {
                    return Err(ParseError::at(ln, "Signature section out of order"));
                }
                flush_policy(&mut policies, &mut cur_id, &mut cur_spec, ln)?;
                section = Section::Signature;
                let (alg, b64) = value.split_once(':').ok_or_else(|| {
                    ParseError::at(ln, "signature must be <algorithm>:<base64>")
                })?;
                let algorithm = alg
                    .parse()
                    .map_err(|e: String| ParseError::at(ln, e))?;
                let value = B64
                    .decode(b64.trim())
                    .map_err(|e| ParseError::at(ln, format!("bad signature base64: {e}")))?;
                signature = Some(SignatureBlock { algorithm, value });
            }
            "Certificate" => {
                if section != Section::Signature {
                    return Err(ParseError::at(ln, "Certificate section out of order"));
                }
                section = Section::Certificate;
                let mut certificates = Vec::new();
                if !value.trim().is_empty() {
                    for part in value.split(',') {
                        let der = B64.decode(part.trim()).map_err(|e| {
                            ParseError::at(ln, format!("bad certificate base64: {e}"))
                        })?;
                        certificates.push(der);
                    }
                }
                chain = Some(CertificateChain { certificates });
            }
            field if section == Section::Header => {
                parse_header_field(&mut hdr, field, value, ln)?;
            }
            field if section == Section::Policies => {
                parse_policy_field(&mut policies, &mut cur_id, &mut cur_spec, field, value, ln)?;
            }
            other => {
                return Err(ParseError::at(ln, format!("unknown field {other:?}")));
            }
        }
    }

    if section < Section::Certificate {
        return Err(ParseError::at(text.lines().count(), "missing Certificate section"));
    }

    let last = text.lines().count();
    fn require<T>(opt: Option<T>, name: &str, line: usize) -> Result<T, ParseError> {
        opt.ok_or_else(|| ParseError::at(line, format!("missing header field {name}")))
    }
    let header = Header {
        domain: require(hdr.domain, "Domain", last)?,
        version: require(hdr.version, "Version", last)?,
        validity: ValidityWindow {
            valid_from: require(hdr.valid_from, "Valid From", last)?,
            valid_to: require(hdr.valid_to, "Valid To", last)?,
        },
        parts: require(hdr.parts, "Parts", last)?,
        subdomains: hdr.subdomains.unwrap_or_default(),
    };
    if policies.is_empty() {
        return Err(ParseError::at(last, "no policy entries"));
    }
    let mut seen = std::collections::HashSet::new();
    for p in &policies {
        if !seen.insert(p.id) {
            return Err(ParseError::at(last, format!("duplicate policy id {}", p.id)));
        }
    }
    Ok(Metapolicy {
        header,
        policies,
        signature: signature.expect("signature set when section reached"),
        chain: chain.expect("chain set when section reached"),
    })
}

fn parse_header_field(
    hdr: &mut HeaderFields,
    field: &str,
    value: &str,
    ln: usize,
) -> Result<(), ParseError> {
    fn set<T>(slot: &mut Option<T>, v: T, name: &str, ln: usize) -> Result<(), ParseError> {
        if slot.is_some() {
            return Err(ParseError::at(ln, format!("duplicate field {name}")));
        }
        *slot = Some(v);
        Ok(())
    }
    match field {
        "Domain" => {
            let d = value
                .parse()
                .map_err(|e| ParseError::at(ln, format!("bad domain: {e}")))?;
            set(&mut hdr.domain, d, "Domain", ln)
        }
        "Version" => {
            let v = value
                .parse()
                .map_err(|_| ParseError::at(ln, format!("non-integer version {value:?}")))?;
            set(&mut hdr.version, v, "Version", ln)
        }
        "Valid From" => {
            let d = parse_date(value, ln)?;
            set(&mut hdr.valid_from, d, "Valid From", ln)
        }
        "Valid To" => {
            let d = parse_date(value, ln)?;
            set(&mut hdr.valid_to, d, "Valid To", ln)
        }
        "Parts" => {
            let p = value
                .parse()
                .map_err(|_| ParseError::at(ln, format!("non-integer parts {value:?}")))?;
            set(&mut hdr.parts, p, "Parts", ln)
        }
        "Subdomains" => {
            let mut subs = Vec::new();
            if !value.trim().is_empty() {
                for part in value.split(',') {
                    let pat = SubdomainPattern::from_str(part.trim())
                        .map_err(|e| ParseError::at(ln, format!("bad subdomain: {e}")))?;
                    subs.push(pat);
                }
            }
            set(&mut hdr.subdomains, subs, "Subdomains", ln)
        }
        other => Err(ParseError::at(ln, format!("unknown header field {other:?}"))),
    }
}

fn parse_policy_field(
    policies: &mut Vec<PolicyEntry>,
    cur_id: &mut Option<u64>,
    cur_spec: &mut Option<String>,
    field: &str,
    value: &str,
    ln: usize,
) -> Result<(), ParseError> {
    match field {
        "Id" => {
            if cur_id.is_some() {
                return Err(ParseError::at(ln, "Id before previous policy's Fail"));
            }
            let id = value
                .parse()
                .map_err(|_| ParseError::at(ln, format!("non-integer policy id {value:?}")))?;
            *cur_id = Some(id);
            Ok(())
        }
        "Specification" => {
            if cur_id.is_none() {
                return Err(ParseError::at(ln, "Specification before Id"));
            }
            if cur_spec.is_some() {
                return Err(ParseError::at(ln, "duplicate field Specification"));
            }
            *cur_spec = Some(value.to_string());
            Ok(())
        }
        "Fail" => {
            let id = cur_id
                .take()
                .ok_or_else(|| ParseError::at(ln, "Fail before Id"))?;
            let spec = cur_spec
                .take()
                .ok_or_else(|| ParseError::at(ln, "Fail before Specification"))?;
            let mut it = value.split(',').map(str::trim);
            let mode_tok = it.next().unwrap_or("");
            let mode = FailMode::from_str(mode_tok).map_err(|e| ParseError::at(ln, e))?;
            let mut report_addresses = Vec::new();
            for addr in it {
                if !super::email_address_ok(addr) {
                    return Err(ParseError::at(ln, format!("bad report address {addr:?}")));
                }
                report_addresses.push(addr.to_string());
            }
            policies.push(PolicyEntry {
                id,
                specification: spec,
                fail: FailDirective {
                    mode,
                    report_addresses,
                },
            });
            Ok(())
        }
        other => Err(ParseError::at(ln, format!("unknown policy field {other:?}"))),
    }
}

fn flush_policy(
    _policies: &mut [PolicyEntry],
    cur_id: &mut Option<u64>,
    cur_spec: &mut Option<String>,
    ln: usize,
) -> Result<(), ParseError> {
    if cur_id.is_some() || cur_spec.is_some() {
        return Err(ParseError::at(ln, "policy entry missing Fail line"));
    }
    Ok(())
}

/// Reads Version and Parts from a canonical-text prefix, typically the first
/// TXT part of a multi-part metapolicy. The header always fits in the first
/// 512 bytes.
pub fn parse_header_prefix(bytes: &[u8]) -> Result<(u64, u64), ParseError> {
    let text = String::from_utf8_lossy(bytes);
    let mut version = None;
    let mut parts = None;
    for (idx, raw) in text.lines().enumerate() {
        let ln = idx + 1;
        if let Some((key, value)) = split_field(raw) {
            match key {
                "Version" => {
                    version = Some(value.parse::<u64>().map_err(|_| {
                        ParseError::at(ln, format!("non-integer version {value:?}"))
                    })?)
                }
                "Parts" => {
                    parts = Some(value.parse::<u64>().map_err(|_| {
                        ParseError::at(ln, format!("non-integer parts {value:?}"))
                    })?)
                }
                _ => {}
            }
        }
        if version.is_some() && parts.is_some() {
            return Ok((version.unwrap(), parts.unwrap()));
        }
    }
    Err(ParseError::at(
        text.lines().count(),
        "prefix does not contain Version and Parts",
    ))
}
