//! Private key loading and the raw sign/verify primitives behind the
//! signature algorithm registry.

use ring::rand::SystemRandom;
use ring::signature::{
    self, EcdsaKeyPair, Ed25519KeyPair, KeyPair as _, RsaKeyPair, UnparsedPublicKey,
};

use crate::model::SignatureAlgorithm;

pub enum SigningKey {
    Rsa(RsaKeyPair),
    Ecdsa(EcdsaKeyPair),
    Ed25519(Ed25519KeyPair),
}

impl std::fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SigningKey({})", self.algorithm().token())
    }
}

impl SigningKey {
    /// Loads a private key from PKCS#8 DER, trying each supported algorithm.
    pub fn from_pkcs8_der(der: &[u8]) -> Result<Self, String> {
        let rng = SystemRandom::new();
        if let Ok(k) = Ed25519KeyPair::from_pkcs8_maybe_unchecked(der) {
            return Ok(SigningKey::Ed25519(k));
        }
        if let Ok(k) =
            EcdsaKeyPair::from_pkcs8(&signature::ECDSA_P256_SHA256_ASN1_SIGNING, der, &rng)
        {
            return Ok(SigningKey::Ecdsa(k));
        }
        if let Ok(k) = RsaKeyPair::from_pkcs8(der) {
            return Ok(SigningKey::Rsa(k));
        }
        Err("not a supported PKCS#8 private key (rsa-2048+/p256/ed25519)".to_string())
    }

    /// Loads a key from PEM ("PRIVATE KEY" PKCS#8) or raw PKCS#8 DER bytes.
    pub fn load(data: &[u8]) -> Result<Self, String> {
        if let Ok(blocks) = ::pem::parse_many(data) {
            for block in blocks {
                if block.tag().ends_with("PRIVATE KEY") {
                    return Self::from_pkcs8_der(block.contents());
                }
            }
        }
        Self::from_pkcs8_der(data)
    }

    pub fn algorithm(&self) -> SignatureAlgorithm {
        match self {
            SigningKey::Rsa(_) => SignatureAlgorithm::RsaPkcs1Sha256,
            SigningKey::Ecdsa(_) => SignatureAlgorithm::EcdsaP256Sha256,
            SigningKey::Ed25519(_) => SignatureAlgorithm::Ed25519,
        }
    }

    /// Raw public key bytes as they appear inside an SPKI bit string:
    /// PKCS#1 for RSA, uncompressed point for P-256, 32 bytes for Ed25519.
    pub fn public_key_bytes(&self) -> &[u8] {
        match self {
            SigningKey::Rsa(k) => k.public_key().as_ref(),
            SigningKey::Ecdsa(k) => k.public_key().as_ref(),
            SigningKey::Ed25519(k) => k.public_key().as_ref(),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Result<Vec<u8>, String> {
        let rng = SystemRandom::new();
        match self {
            SigningKey::Rsa(k) => {
                let mut sig = vec![0u8; k.public().modulus_len()];
                k.sign(&signature::RSA_PKCS1_SHA256, &rng, msg, &mut sig)
                    .map_err(|e| e.to_string())?;
                Ok(sig)
            }
            SigningKey::Ecdsa(k) => Ok(k.sign(&rng, msg).map_err(|e| e.to_string())?.as_ref().to_vec()),
            SigningKey::Ed25519(k) => Ok(k.sign(msg).as_ref().to_vec()),
        }
    }
}

/// Verifies a signature with public key bits taken from inside an SPKI bit
/// string (the form x509-parser exposes and ring consumes).
pub fn verify_key_bits(
    alg: SignatureAlgorithm,
    key_bits: &[u8],
    msg: &[u8],
    sig: &[u8],
) -> bool {
    let ring_alg: &dyn signature::VerificationAlgorithm = match alg {
        SignatureAlgorithm::RsaPkcs1Sha256 => &signature::RSA_PKCS1_2048_8192_SHA256,
        SignatureAlgorithm::EcdsaP256Sha256 => &signature::ECDSA_P256_SHA256_ASN1,
        SignatureAlgorithm::Ed25519 => &signature::ED25519,
    };
    UnparsedPublicKey::new(ring_alg, key_bits).verify(msg, sig).is_ok()
}

/// Verifies against a full SubjectPublicKeyInfo DER document, the format in
/// which DNSKEY material and trust anchors are carried.
pub fn verify_raw(alg: SignatureAlgorithm, spki_der: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    match spki_key_bits(spki_der) {
        Some(bits) => verify_key_bits(alg, &bits, msg, sig),
        None => false,
    }
}

/// Extracts the subject public key bit string from an SPKI DER document.
pub fn spki_key_bits(spki_der: &[u8]) -> Option<Vec<u8>> {
    use x509_parser::prelude::FromDer;
    use x509_parser::x509::SubjectPublicKeyInfo;
    SubjectPublicKeyInfo::from_der(spki_der)
        .ok()
        .map(|(_, spki)| spki.subject_public_key.data.to_vec())
}
