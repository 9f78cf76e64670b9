//! The resolver port: the narrow DNS interface the agent and scanner depend
//! on. The in-memory testnet fixture and the UDP wire adapter both implement
//! it, so tests and production paths share contracts.

use std::net::Ipv4Addr;

use thiserror::Error;

use crate::model::DomainName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecordType {
    A,
    Txt,
    Dnskey,
    Tlsa,
    Caa,
}

impl RecordType {
    pub fn code(self) -> u16 {
        match self {
            RecordType::A => 1,
            RecordType::Txt => 16,
            RecordType::Dnskey => 48,
            RecordType::Tlsa => 52,
            RecordType::Caa => 257,
        }
    }

    pub fn from_code(code: u16) -> Option<Self> {
        match code {
            1 => Some(RecordType::A),
            16 => Some(RecordType::Txt),
            48 => Some(RecordType::Dnskey),
            52 => Some(RecordType::Tlsa),
            257 => Some(RecordType::Caa),
            _ => None,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            RecordType::A => "A",
            RecordType::Txt => "TXT",
            RecordType::Dnskey => "DNSKEY",
            RecordType::Tlsa => "TLSA",
            RecordType::Caa => "CAA",
        }
    }
}

#[derive(Debug, Error)]
pub enum ResolveError {
    #[error("query timed out for {0}")]
    Timeout(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
}

/// Record payloads as returned by a resolver. TXT payloads are the
/// concatenation of a record's character-strings; other types are the raw
/// RDATA bytes. An empty vector means the name/type has no records.
pub type RecordPayloads = Vec<Vec<u8>>;

pub trait ResolverPort: Send + Sync {
    fn query(&self, owner: &DomainName, rtype: RecordType) -> Result<RecordPayloads, ResolveError>;

    fn query_txt(&self, owner: &DomainName) -> Result<RecordPayloads, ResolveError> {
        self.query(owner, RecordType::Txt)
    }

    fn query_dnskey(&self, domain: &DomainName) -> Result<RecordPayloads, ResolveError> {
        self.query(domain, RecordType::Dnskey)
    }

    fn query_a(&self, owner: &DomainName) -> Result<Vec<Ipv4Addr>, ResolveError> {
        Ok(self
            .query(owner, RecordType::A)?
            .into_iter()
            .filter(|r| r.len() == 4)
            .map(|r| Ipv4Addr::new(r[0], r[1], r[2], r[3]))
            .collect())
    }
}

impl<T: ResolverPort + ?Sized> ResolverPort for &T {
    fn query(&self, owner: &DomainName, rtype: RecordType) -> Result<RecordPayloads, ResolveError> {
        (**self).query(owner, rtype)
    }
}

impl<T: ResolverPort + ?Sized> ResolverPort for std::sync::Arc<T> {
    fn query(&self, owner: &DomainName, rtype: RecordType) -> Result<RecordPayloads, ResolveError> {
        (**self).query(owner, rtype)
    }
}
