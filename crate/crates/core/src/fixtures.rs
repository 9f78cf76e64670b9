//! Deterministic fixture builders shared by the test suites, the testnet,
//! and the bench harness: the canonical example metapolicy, generated PKI
//! chains, DNSSEC key material, and randomized metapolicy corpora.

use chrono::NaiveDate;
use rcgen::{
    BasicConstraints, CertificateParams, DistinguishedName, DnType, Issuer, IsCa, KeyPair,
};

use crate::model::{
    CertificateChain, FailDirective, FailMode, Header, Metapolicy, PolicyEntry,
    SignatureAlgorithm, SignatureBlock, UnsignedMetapolicy, ValidityWindow,
};
use crate::trust::{Clock, SigningKey, TrustConfig};

/// Canonical text of the example metapolicy (a.com, version 1, two email
/// policies, DNSSEC-signed with a placeholder signature).
pub const GOLDEN: &str = include_str!("../testdata/golden.mpol");

/// Static 2048-bit RSA private keys (PKCS#8 PEM) for chain fixtures; RSA key
/// generation is slow and unsupported by the embedded crypto backend.
pub const RSA_KEY_A_PEM: &str = include_str!("../testdata/rsa2048_a.pem");
pub const RSA_KEY_B_PEM: &str = include_str!("../testdata/rsa2048_b.pem");

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// The example metapolicy as a value; serializes byte-identically to
/// [`GOLDEN`].
pub fn fig2_metapolicy() -> Metapolicy {
    let sig: Vec<u8> = [0x92u8, 0x43, 0x15, 0x2c, 0xd5, 0x3f, 0xe3, 0xd1]
        .iter()
        .cycle()
        .take(64)
        .copied()
        .collect();
    let unsigned = fig2_unsigned();
    unsigned.into_signed(
        SignatureBlock {
            algorithm: SignatureAlgorithm::Ed25519,
            value: sig,
        },
        CertificateChain::default(),
    )
}

/// Header and policies of the example metapolicy, ready for signing.
pub fn fig2_unsigned() -> UnsignedMetapolicy {
    UnsignedMetapolicy {
        header: Header {
            domain: "a.com".parse().unwrap(),
            version: 1,
            validity: ValidityWindow {
                valid_from: date(2016, 12, 9),
                valid_to: date(2018, 12, 9),
            },
            parts: 1,
            subdomains: vec![
                "example.a.com".parse().unwrap(),
                "verbal.a.com".parse().unwrap(),
            ],
        },
        policies: vec![
            PolicyEntry {
                id: 7288,
                specification: "v=spf1 a include:aspmx.googlemail.com ~all".to_string(),
                fail: FailDirective {
                    mode: FailMode::Hard,
                    report_addresses: vec!["report@a.com".to_string()],
                },
            },
            PolicyEntry {
                id: 6376,
                specification: "v=DKIM1; k=rsa; p=TAMAfMA0GCSqGSIb3DQLOGE".to_string(),
                fail: FailDirective {
                    mode: FailMode::Soft,
                    report_addresses: vec!["report@a.com".to_string()],
                },
            },
        ],
    }
}

/// A generated three-certificate trust path: leaf and intermediate travel in
/// the metapolicy chain, the root belongs in the verifier's store.
pub struct PkiFixture {
    pub algorithm: SignatureAlgorithm,
    pub leaf_key_pkcs8: Vec<u8>,
    pub chain: CertificateChain,
    pub root_der: Vec<u8>,
}

impl PkiFixture {
    pub fn signing_key(&self) -> SigningKey {
        SigningKey::from_pkcs8_der(&self.leaf_key_pkcs8).expect("fixture key loads")
    }

    /// Trust config anchored on this fixture's root, pinned to `clock`.
    pub fn trust_config(&self, clock: Clock) -> TrustConfig {
        TrustConfig {
            root_store: vec![self.root_der.clone()],
            dnssec_anchors: Default::default(),
            clock,
        }
    }
}

pub struct PkiOptions {
    /// DNS name the leaf certificate covers (SAN). May be a wildcard.
    pub leaf_name: String,
    pub not_before: NaiveDate,
    pub not_after: NaiveDate,
}

impl PkiOptions {
    pub fn for_domain(domain: &str) -> Self {
        PkiOptions {
            leaf_name: domain.to_string(),
            not_before: date(2000, 1, 1),
            not_after: date(2099, 1, 1),
        }
    }
}

fn set_validity(params: &mut CertificateParams, opts: &PkiOptions) {
    use chrono::Datelike;
    let (nb, na) = (opts.not_before, opts.not_after);
    params.not_before = rcgen::date_time_ymd(nb.year(), nb.month() as u8, nb.day() as u8);
    params.not_after = rcgen::date_time_ymd(na.year(), na.month() as u8, na.day() as u8);
}

fn make_key(alg: SignatureAlgorithm, seed: usize) -> KeyPair {
    match alg {
        SignatureAlgorithm::EcdsaP256Sha256 => {
            KeyPair::generate_for(&rcgen::PKCS_ECDSA_P256_SHA256).unwrap()
        }
        SignatureAlgorithm::Ed25519 => KeyPair::generate_for(&rcgen::PKCS_ED25519).unwrap(),
        SignatureAlgorithm::RsaPkcs1Sha256 => {
            let pem = if seed % 2 == 0 { RSA_KEY_A_PEM } else { RSA_KEY_B_PEM };
            KeyPair::from_pkcs8_pem_and_sign_algo(pem, &rcgen::PKCS_RSA_SHA256).unwrap()
        }
    }
}

fn ca_params(cn: &str, opts: &PkiOptions) -> CertificateParams {
    let mut params = CertificateParams::default();
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, cn);
    params.distinguished_name = dn;
    params.is_ca = IsCa::Ca(BasicConstraints::Unconstrained);
    set_validity(&mut params, opts);
    params
}

/// Generates root -> intermediate -> leaf for `opts.leaf_name`, all keyed
/// with `alg`. The RSA variant reuses the static fixture keys.
pub fn generate_pki(alg: SignatureAlgorithm, opts: &PkiOptions) -> PkiFixture {
    let root_key = make_key(alg, 0);
    let root_params = ca_params(&format!("Test Root ({})", opts.leaf_name), opts);
    let root_cert = root_params.self_signed(&root_key).unwrap();
    let root_issuer = Issuer::new(root_params, root_key);

    let int_key = make_key(alg, 1);
    let int_params = ca_params(&format!("Test Intermediate ({})", opts.leaf_name), opts);
    let int_cert = int_params.signed_by(&int_key, &root_issuer).unwrap();
    let int_issuer = Issuer::new(int_params, int_key);

    let leaf_key = make_key(alg, 0);
    let mut leaf_params = CertificateParams::new(vec![opts.leaf_name.clone()]).unwrap();
    let mut dn = DistinguishedName::new();
    dn.push(DnType::CommonName, &opts.leaf_name);
    leaf_params.distinguished_name = dn;
    set_validity(&mut leaf_params, opts);
    let leaf_cert = leaf_params.signed_by(&leaf_key, &int_issuer).unwrap();

    PkiFixture {
        algorithm: alg,
        leaf_key_pkcs8: leaf_key.serialize_der(),
        chain: CertificateChain {
            certificates: vec![leaf_cert.der().to_vec(), int_cert.der().to_vec()],
        },
        root_der: root_cert.der().to_vec(),
    }
}

/// A DNSSEC-mode signing fixture: an Ed25519 zone key plus its public
/// SubjectPublicKeyInfo as served in the DNSKEY record and pinned as anchor.
pub struct DnssecFixture {
    pub key_pkcs8: Vec<u8>,
    pub public_spki: Vec<u8>,
}

pub fn generate_dnssec_key() -> DnssecFixture {
    use rcgen::PublicKeyData;
    let key = KeyPair::generate_for(&rcgen::PKCS_ED25519).unwrap();
    DnssecFixture {
        public_spki: key.subject_public_key_info(),
        key_pkcs8: key.serialize_der(),
    }
}

impl DnssecFixture {
    pub fn signing_key(&self) -> SigningKey {
        SigningKey::from_pkcs8_der(&self.key_pkcs8).expect("fixture key loads")
    }

    pub fn trust_config(&self, domain: &str, clock: Clock) -> TrustConfig {
        let mut cfg = TrustConfig {
            clock,
            ..Default::default()
        };
        cfg.dnssec_anchors
            .insert(domain.parse().unwrap(), vec![self.public_spki.clone()]);
        cfg
    }
}

/// Deterministic pseudo-random metapolicy generator for corpus-style tests
/// and the bench harness. `target_size` steers the serialized length via
/// padded specification bodies.
pub fn synthetic_metapolicy(seed: u64, target_size: usize) -> Metapolicy {
    // xorshift so the corpus is reproducible without an RNG dependency here
    let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15).max(1);
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    let domain: crate::model::DomainName = format!("d{}.example", next() % 100_000).parse().unwrap();
    let n_policies = 1 + (next() % 4) as usize;
    let mut policies = Vec::new();
    let body_each = target_size / n_policies;
    for i in 0..n_policies {
        let mode = match next() % 3 {
            0 => FailMode::Hard,
            1 => FailMode::Soft,
            _ => FailMode::Ignore,
        };
        let mut spec = format!("v=synthetic{} ", i);
        while spec.len() < body_each.saturating_sub(60).max(8) {
            spec.push_str(&format!("tok{:x} ", next() % 0xffff));
        }
        policies.push(PolicyEntry {
            id: 1000 + i as u64,
            specification: spec.trim_end().to_string(),
            fail: FailDirective {
                mode,
                report_addresses: if next() % 2 == 0 {
                    vec![format!("ops@{domain}")]
                } else {
                    vec![]
                },
            },
        });
    }
    let subdomains = if next() % 2 == 0 {
        vec![format!("www.{domain}").parse().unwrap()]
    } else {
        vec![]
    };
    let mut m = Metapolicy {
        header: Header {
            domain,
            version: 1 + next() % 50,
            validity: ValidityWindow {
                valid_from: date(2016, 1, 1),
                valid_to: date(2030, 1, 1),
            },
            parts: 1,
            subdomains,
        },
        policies,
        signature: SignatureBlock {
            algorithm: SignatureAlgorithm::Ed25519,
            value: (0..64).map(|_| (next() & 0xff) as u8).collect(),
        },
        chain: CertificateChain::default(),
    };
    // settle the Parts field so the value is self-consistent
    for _ in 0..4 {
        let len = m.canonical_serialize().expect("synthetic fixture valid").len();
        let needed = crate::codec::parts_needed(len).unwrap();
        if needed == m.header.parts {
            break;
        }
        m.header.parts = needed;
    }
    m
}
