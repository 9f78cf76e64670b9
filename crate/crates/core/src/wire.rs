//! Minimal DNS wire codec covering the record types this crate publishes and
//! probes (A, TXT, DNSKEY, TLSA, CAA), plus a UDP client adapter implementing
//! [`ResolverPort`]. No EDNS0, no compression on encode; compression pointers
//! are accepted on decode.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicU16, Ordering};
use std::time::Duration;

use crate::model::DomainName;
use crate::resolver::{RecordPayloads, RecordType, ResolveError, ResolverPort};

const CLASS_IN: u16 = 1;
const MAX_MESSAGE: usize = 4096;

fn push_u16(buf: &mut Vec<u8>, v: u16) {
    buf.extend_from_slice(&v.to_be_bytes());
}

fn encode_name(buf: &mut Vec<u8>, name: &DomainName) {
    for label in name.labels() {
        buf.push(label.len() as u8);
        buf.extend_from_slice(label.as_bytes());
    }
    buf.push(0);
}

pub fn encode_query(id: u16, name: &DomainName, rtype: RecordType) -> Vec<u8> {
    let mut buf = Vec::with_capacity(64);
    push_u16(&mut buf, id);
    push_u16(&mut buf, 0x0100); // RD
    push_u16(&mut buf, 1);
    push_u16(&mut buf, 0);
    push_u16(&mut buf, 0);
    push_u16(&mut buf, 0);
    encode_name(&mut buf, name);
    push_u16(&mut buf, rtype.code());
    push_u16(&mut buf, CLASS_IN);
    buf
}

/// Builds an authoritative response echoing the question. `answers` carry
/// already-encoded RDATA (TXT payloads must be pre-split into
/// character-strings via [`encode_txt_rdata`]).
pub fn encode_response(
    id: u16,
    name: &DomainName,
    rtype: RecordType,
    answers: &[Vec<u8>],
    ttl: u32,
) -> Vec<u8> {
    let mut buf = Vec::with_capacity(512);
    push_u16(&mut buf, id);
    push_u16(&mut buf, 0x8400); // QR | AA
    push_u16(&mut buf, 1);
    push_u16(&mut buf, answers.len() as u16);
    push_u16(&mut buf, 0);
    push_u16(&mut buf, 0);
    encode_name(&mut buf, name);
    push_u16(&mut buf, rtype.code());
    push_u16(&mut buf, CLASS_IN);
    for rdata in answers {
        encode_name(&mut buf, name);
        push_u16(&mut buf, rtype.code());
        push_u16(&mut buf, CLASS_IN);
        buf.extend_from_slice(&ttl.to_be_bytes());
        push_u16(&mut buf, rdata.len() as u16);
        buf.extend_from_slice(rdata);
    }
    buf
}

/// Splits a TXT payload into length-prefixed character-strings.
pub fn encode_txt_rdata(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 4);
    for chunk in payload.chunks(255) {
        out.push(chunk.len() as u8);
        out.extend_from_slice(chunk);
    }
    if payload.is_empty() {
        out.push(0);
    }
    out
}

fn decode_txt_rdata(rdata: &[u8]) -> Result<Vec<u8>, ResolveError> {
    let mut out = Vec::with_capacity(rdata.len());
    let mut pos = 0;
    while pos < rdata.len() {
        let len = rdata[pos] as usize;
        pos += 1;
        if pos + len > rdata.len() {
            return Err(ResolveError::Malformed("truncated TXT character-string".into()));
        }
        out.extend_from_slice(&rdata[pos..pos + len]);
        pos += len;
    }
    Ok(out)
}

fn skip_name(msg: &[u8], mut pos: usize) -> Result<usize, ResolveError> {
    loop {
        let len = *msg
            .get(pos)
            .ok_or_else(|| ResolveError::Malformed("truncated name".into()))? as usize;
        if len == 0 {
            return Ok(pos + 1);
        }
        if len & 0xc0 == 0xc0 {
            return Ok(pos + 2);
        }
        pos += 1 + len;
    }
}

pub struct DecodedQuery {
    pub id: u16,
    pub name: DomainName,
    pub rtype: Option<RecordType>,
    pub raw_qtype: u16,
}

pub fn decode_query(msg: &[u8]) -> Result<DecodedQuery, ResolveError> {
    if msg.len() < 12 {
        return Err(ResolveError::Malformed("short message".into()));
    }
    let id = u16::from_be_bytes([msg[0], msg[1]]);
    let qd = u16::from_be_bytes([msg[4], msg[5]]);
    if qd != 1 {
        return Err(ResolveError::Malformed("expected one question".into()));
    }
    let mut pos = 12;
    let mut labels = Vec::new();
    loop {
        let len = *msg
            .get(pos)
            .ok_or_else(|| ResolveError::Malformed("truncated qname".into()))? as usize;
        pos += 1;
        if len == 0 {
            break;
        }
        let label = msg
            .get(pos..pos + len)
            .ok_or_else(|| ResolveError::Malformed("truncated label".into()))?;
        labels.push(String::from_utf8_lossy(label).to_string());
        pos += len;
    }
    let raw_qtype = u16::from_be_bytes([
        *msg.get(pos).ok_or_else(|| ResolveError::Malformed("no qtype".into()))?,
        *msg.get(pos + 1).ok_or_else(|| ResolveError::Malformed("no qtype".into()))?,
    ]);
    let name: DomainName = labels
        .join(".")
        .parse()
        .map_err(|e| ResolveError::Malformed(format!("bad qname: {e}")))?;
    Ok(DecodedQuery {
        id,
        name,
        rtype: RecordType::from_code(raw_qtype),
        raw_qtype,
    })
}

/// Extracts answer RDATA of the requested type; TXT character-strings are
/// concatenated into one payload per record.
pub fn decode_response(msg: &[u8], rtype: RecordType) -> Result<RecordPayloads, ResolveError> {
    if msg.len() < 12 {
        return Err(ResolveError::Malformed("short message".into()));
    }
    let qd = u16::from_be_bytes([msg[4], msg[5]]) as usize;
    let an = u16::from_be_bytes([msg[6], msg[7]]) as usize;
    let mut pos = 12;
    for _ in 0..qd {
        pos = skip_name(msg, pos)?;
        pos += 4;
    }
    let mut payloads = Vec::new();
    for _ in 0..an {
        pos = skip_name(msg, pos)?;
        let fixed = msg
            .get(pos..pos + 10)
            .ok_or_else(|| ResolveError::Malformed("truncated RR".into()))?;
        let atype = u16::from_be_bytes([fixed[0], fixed[1]]);
        let rdlen = u16::from_be_bytes([fixed[8], fixed[9]]) as usize;
        pos += 10;
        let rdata = msg
            .get(pos..pos + rdlen)
            .ok_or_else(|| ResolveError::Malformed("truncated RDATA".into()))?;
        pos += rdlen;
        if atype == rtype.code() {
            let payload = match rtype {
                RecordType::Txt => decode_txt_rdata(rdata)?,
                _ => rdata.to_vec(),
            };
            payloads.push(payload);
        }
    }
    Ok(payloads)
}

/// Production DNS adapter: plain UDP queries against a configured server.
pub struct UdpResolver {
    server: SocketAddr,
    timeout: Duration,
    next_id: AtomicU16,
}

impl UdpResolver {
    pub fn new(server: SocketAddr) -> Self {
        UdpResolver {
            server,
            timeout: Duration::from_secs(3),
            next_id: AtomicU16::new(1),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }
}

impl ResolverPort for UdpResolver {
    fn query(&self, owner: &DomainName, rtype: RecordType) -> Result<RecordPayloads, ResolveError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let query = encode_query(id, owner, rtype);
        let socket = UdpSocket::bind(("0.0.0.0", 0))
            .map_err(|e| ResolveError::Transport(e.to_string()))?;
        socket
            .set_read_timeout(Some(self.timeout))
            .map_err(|e| ResolveError::Transport(e.to_string()))?;
        socket
            .send_to(&query, self.server)
            .map_err(|e| ResolveError::Transport(e.to_string()))?;
        let mut buf = [0u8; MAX_MESSAGE];
        let (n, _) = socket.recv_from(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::WouldBlock || e.kind() == std::io::ErrorKind::TimedOut
            {
                ResolveError::Timeout(owner.to_string())
            } else {
                ResolveError::Transport(e.to_string())
            }
        })?;
        let msg = &buf[..n];
        if n < 2 || u16::from_be_bytes([msg[0], msg[1]]) != id {
            return Err(ResolveError::Malformed("response id mismatch".into()));
        }
        decode_response(msg, rtype)
    }
}
