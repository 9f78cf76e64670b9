//! Encapsulation of a serialized metapolicy into DNS TXT records and
//! reassembly back into canonical bytes.
//!
//! Part 1 lives at `_metapolicy.<domain>`, part n at `<n>._metapolicy.<domain>`.
//! Each record payload holds at most [`MAX_PART_LEN`] bytes, split on the wire
//! into character-strings of at most 255 bytes.

use thiserror::Error;

use crate::model::{self, DomainName, Metapolicy};

/// Per-record payload cap in bytes.
pub const MAX_PART_LEN: usize = 512;
/// DNS character-string size limit.
pub const MAX_CHAR_STRING: usize = 255;
/// Label under which metapolicy records are published.
pub const METAPOLICY_LABEL: &str = "_metapolicy";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("metapolicy serialization must be non-empty")]
    EmptyInput,
    #[error("Header.Parts is {declared} but the serialization splits into {actual} parts")]
    PartsMismatch { declared: u64, actual: u64 },
    #[error("missing part {index}")]
    MissingPart { index: u64 },
    #[error("part {index} supplied more than once")]
    DuplicatePart { index: u64 },
    #[error("part {index} payload is {len} bytes, above the {MAX_PART_LEN}-byte cap")]
    OversizePart { index: u64, len: usize },
    #[error("part 1 header prefix unreadable: {0}")]
    BadPrefix(model::ParseError),
    #[error("structural error: {0}")]
    Structural(#[from] model::StructuralError),
}

/// One DNS TXT record carrying a slice of the serialized metapolicy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxtPart {
    pub index: u64,
    pub owner: DomainName,
    pub payload: Vec<u8>,
}

impl TxtPart {
    /// The payload split into wire character-strings of <= 255 bytes.
    pub fn character_strings(&self) -> Vec<&[u8]> {
        self.payload.chunks(MAX_CHAR_STRING).collect()
    }
}

/// The ordered TXT parts publishing one metapolicy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxtRecordSet {
    pub domain: DomainName,
    pub parts: Vec<TxtPart>,
}

/// Number of 512-byte parts needed for a serialization of `size_bytes`.
pub fn parts_needed(size_bytes: usize) -> Result<u64, CodecError> {
    if size_bytes == 0 {
        return Err(CodecError::EmptyInput);
    }
    Ok(size_bytes.div_ceil(MAX_PART_LEN) as u64)
}

/// Owner name for a given 1-based part index.
pub fn owner_name_for_part(index: u64, domain: &DomainName) -> DomainName {
    let name = if index == 1 {
        format!("{METAPOLICY_LABEL}.{domain}")
    } else {
        format!("{index}.{METAPOLICY_LABEL}.{domain}")
    };
    name.parse().expect("metapolicy owner name is well-formed")
}

/// Splits the canonical serialization of `m` into TXT parts. The caller must
/// already have set `Header.parts` to the resulting count (the publisher
/// iterates to that fixpoint).
pub fn encapsulate(m: &Metapolicy) -> Result<TxtRecordSet, CodecError> {
    let bytes = m.canonical_serialize()?;
    let actual = parts_needed(bytes.len())?;
    if actual != m.header.parts {
        return Err(CodecError::PartsMismatch {
            declared: m.header.parts,
            actual,
        });
    }
    let parts = bytes
        .chunks(MAX_PART_LEN)
        .enumerate()
        .map(|(i, chunk)| {
            let index = i as u64 + 1;
            TxtPart {
                index,
                owner: owner_name_for_part(index, &m.header.domain),
                payload: chunk.to_vec(),
            }
        })
        .collect();
    Ok(TxtRecordSet {
        domain: m.header.domain.clone(),
        parts,
    })
}

/// Reassembles canonical metapolicy bytes from supplied parts. Order of the
/// slice is irrelevant; indices drive concatenation. The part count is read
/// from the `Parts` field inside part 1's payload.
pub fn reassemble(parts: &[TxtPart]) -> Result<Vec<u8>, CodecError> {
    for p in parts {
        if p.payload.len() > MAX_PART_LEN {
            return Err(CodecError::OversizePart {
                index: p.index,
                len: p.payload.len(),
            });
        }
    }
    let first = parts
        .iter()
        .find(|p| p.index == 1)
        .ok_or(CodecError::MissingPart { index: 1 })?;
    let (_, declared) = model::parse_header_prefix(&first.payload).map_err(CodecError::BadPrefix)?;
    let mut ordered: Vec<Option<&TxtPart>> = vec![None; declared as usize];
    for p in parts {
        if p.index < 1 || p.index > declared {
            return Err(CodecError::PartsMismatch {
                declared,
                actual: parts.len() as u64,
            });
        }
        let slot = &mut ordered[(p.index - 1) as usize];
        if slot.is_some() {
            return Err(CodecError::DuplicatePart { index: p.index });
        }
        *slot = Some(p);
    }
    let mut out = Vec::new();
    for (i, slot) in ordered.iter().enumerate() {
        let p = slot.ok_or(CodecError::MissingPart {
            index: i as u64 + 1,
        })?;
        out.extend_from_slice(&p.payload);
    }
    Ok(out)
}

/// Escapes a TXT character-string for master-file presentation.
fn quote_char_string(s: &[u8]) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for &b in s {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            0x20..=0x7e => out.push(b as char),
            other => out.push_str(&format!("\\{:03}", other)),
        }
    }
    out.push('"');
    out
}

/// Renders the record set in RFC 1035 master-file presentation syntax,
/// ordered by part index. One line per record.
pub fn to_master_file(set: &TxtRecordSet, ttl: u32) -> String {
    let mut lines = String::new();
    let mut parts: Vec<&TxtPart> = set.parts.iter().collect();
    parts.sort_by_key(|p| p.index);
    for p in parts {
        let strings: Vec<String> = p
            .character_strings()
            .into_iter()
            .map(quote_char_string)
            .collect();
        lines.push_str(&format!(
            "{}. {} IN TXT {}\n",
            p.owner,
            ttl,
            strings.join(" ")
        ));
    }
    lines
}
