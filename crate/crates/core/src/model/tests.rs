use super::*;
use crate::fixtures::{fig2_metapolicy, GOLDEN};
use chrono::NaiveDate;

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[test]
fn serialize_matches_golden() {
    let m = fig2_metapolicy();
    let bytes = m.canonical_serialize().unwrap();
    assert_eq!(String::from_utf8(bytes).unwrap(), GOLDEN);
}

#[test]
fn serialize_starts_with_documented_prefix() {
    let m = fig2_metapolicy();
    let bytes = m.canonical_serialize().unwrap();
    assert!(bytes.starts_with(b"Header:\n Domain: a.com\n Version: 1\n"));
}

#[test]
fn golden_parses_to_documented_values() {
    let m = parse(GOLDEN.as_bytes()).unwrap();
    assert_eq!(m.header.domain.to_string(), "a.com");
    assert_eq!(m.header.version, 1);
    assert_eq!(m.header.parts, 1);
    assert_eq!(m.policies.len(), 2);
    assert_eq!(m.policies[0].id, 7288);
    assert_eq!(m.policies[1].id, 6376);
    assert_eq!(m.policies[0].fail.mode, FailMode::Hard);
    assert_eq!(
        m.policies[0].fail.report_addresses,
        vec!["report@a.com".to_string()]
    );
    assert_eq!(m.policies[1].fail.mode, FailMode::Soft);
    assert_eq!(m, fig2_metapolicy());
}

#[test]
fn round_trip_is_byte_identical() {
    let m = parse(GOLDEN.as_bytes()).unwrap();
    assert_eq!(m.canonical_serialize().unwrap(), GOLDEN.as_bytes());
}

#[test]
fn signing_input_excludes_signature_and_certificate() {
    let m = fig2_metapolicy();
    let si = m.signing_input().unwrap();
    let text = String::from_utf8(si.clone()).unwrap();
    assert!(text.ends_with("Fail: soft, report@a.com\n"));
    assert!(!text.contains("Signature"));
    assert!(!text.contains("Certificate"));

    // differing only in the signature block -> identical signing input
    let mut m2 = m.clone();
    m2.signature.value = vec![1u8; 64];
    assert_eq!(m2.signing_input().unwrap(), si);

    // any policy byte change -> different signing input
    let mut m3 = m.clone();
    m3.policies[0].specification = m3.policies[0].specification.replace("spf1", "spf2");
    assert_ne!(m3.signing_input().unwrap(), si);
}

#[test]
fn minimal_metapolicy_has_empty_valued_lines() {
    let mut m = fig2_metapolicy();
    m.header.subdomains.clear();
    m.policies.truncate(1);
    let text = String::from_utf8(m.canonical_serialize().unwrap()).unwrap();
    assert!(text.contains("\n Subdomains:\n"));
    assert!(text.ends_with("Certificate:\n"));
    assert_eq!(parse(text.as_bytes()).unwrap(), m);
}

#[test]
fn bad_calendar_date_rejected() {
    let input = GOLDEN.replace("12/09/2016", "13/40/2016");
    let err = parse(input.as_bytes()).unwrap_err();
    assert_eq!(err.line, 4);
    assert!(err.reason.contains("invalid calendar date"), "{}", err.reason);
}

#[test]
fn unpadded_dates_accepted_reserialized_padded() {
    let input = GOLDEN.replace("12/09/2016", "12/9/2016");
    let m = parse(input.as_bytes()).unwrap();
    let out = String::from_utf8(m.canonical_serialize().unwrap()).unwrap();
    assert!(out.contains("Valid From: 12/09/2016 UTC"));
}

#[test]
fn rejects_out_of_order_and_unknown_sections() {
    let swapped = "Policies:\n Id: 1\n Specification: x\n Fail: hard\n\nHeader:\n";
    assert!(parse(swapped.as_bytes()).is_err());
    let unknown = GOLDEN.replace("Policies:", "Rules:");
    assert!(parse(unknown.as_bytes()).is_err());
}

#[test]
fn rejects_duplicate_fields_and_ids() {
    let dup = GOLDEN.replace(" Version: 1\n", " Version: 1\n Version: 2\n");
    let err = parse(dup.as_bytes()).unwrap_err();
    assert!(err.reason.contains("duplicate field Version"));
    let dup_id = GOLDEN.replace("Id: 6376", "Id: 7288");
    let err = parse(dup_id.as_bytes()).unwrap_err();
    assert!(err.reason.contains("duplicate policy id 7288"));
}

#[test]
fn rejects_bad_fail_mode_and_version() {
    let bad = GOLDEN.replace("Fail: hard", "Fail: severe");
    assert!(parse(bad.as_bytes())
        .unwrap_err()
        .reason
        .contains("unknown fail mode"));
    let bad = GOLDEN.replace(" Version: 1", " Version: one");
    assert!(parse(bad.as_bytes())
        .unwrap_err()
        .reason
        .contains("non-integer version"));
}

#[test]
fn tolerates_trailing_whitespace() {
    let padded: String = GOLDEN
        .lines()
        .map(|l| format!("{l}  \n"))
        .collect();
    assert_eq!(parse(padded.as_bytes()).unwrap(), fig2_metapolicy());
}

#[test]
fn validate_reversed_dates() {
    let mut m = fig2_metapolicy();
    m.header.validity = ValidityWindow {
        valid_from: date(2018, 12, 9),
        valid_to: date(2016, 12, 9),
    };
    let v = m.validate_structure();
    assert!(v.iter().any(|x| x.field.contains("Valid From")));
}

#[test]
fn validate_foreign_subdomain() {
    let mut m = fig2_metapolicy();
    m.header.subdomains.push("other.b.com".parse().unwrap());
    let v = m.validate_structure();
    assert!(v
        .iter()
        .any(|x| x.field == "Header.Subdomains" && x.rule.contains("other.b.com")));
}

#[test]
fn validate_clean_fixture_is_empty() {
    assert!(fig2_metapolicy().validate_structure().is_empty());
}

#[test]
fn domain_name_rules() {
    assert!("A.Com".parse::<DomainName>().unwrap().to_string() == "a.com");
    assert!("_metapolicy.a.com".parse::<DomainName>().is_ok());
    assert!("-bad.com".parse::<DomainName>().is_err());
    assert!("bad-.com".parse::<DomainName>().is_err());
    assert!("".parse::<DomainName>().is_err());
    let long = format!("{}.com", "a".repeat(300));
    assert!(long.parse::<DomainName>().is_err());
    let label64 = format!("{}.com", "a".repeat(64));
    assert!(label64.parse::<DomainName>().is_err());
}

#[test]
fn subdomain_patterns() {
    let a: DomainName = "a.com".parse().unwrap();
    let pat: SubdomainPattern = "*.a.com".parse().unwrap();
    assert!(pat.matches(&"x.a.com".parse().unwrap(), false));
    assert!(!pat.matches(&"x.y.a.com".parse().unwrap(), false));
    assert!(pat.matches(&"x.y.a.com".parse().unwrap(), true));
    assert!(!pat.matches(&a, false));
    assert!("*".parse::<SubdomainPattern>().is_err());
}

#[test]
fn header_prefix_reader() {
    let (version, parts) = parse_header_prefix(&GOLDEN.as_bytes()[..200]).unwrap();
    assert_eq!((version, parts), (1, 1));
    assert!(parse_header_prefix(b"Header:\n Domain: a.com\n").is_err());
}
