//! Domain-level security metapolicies over DNS.
//!
//! A metapolicy bundles all of a domain's security policies (SPF, DKIM,
//! DMARC, CAA, ...) into one signed document published as TXT records under
//! `_metapolicy.<domain>`. This crate provides the document model and
//! canonical serialization, the TXT encapsulation codec, signing and
//! verification against TLS certificate chains or DNSSEC keys, the policy
//! agent (lookup, cache, enforcement), the operator-side publisher, a
//! deployability scanner, and an in-process adversarial test network.

pub mod agent;
pub mod codec;
pub mod fixtures;
pub mod model;
pub mod publisher;
pub mod resolver;
pub mod scanner;
pub mod testnet;
pub mod trust;
pub mod wire;
