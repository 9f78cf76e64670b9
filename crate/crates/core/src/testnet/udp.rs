//! Optional UDP front end for the testnet: serves a [`TestResolver`] on a
//! loopback socket so the production wire adapter can be exercised
//! end-to-end.

use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use crate::resolver::{RecordType, ResolverPort};
use crate::wire;

use super::TestResolver;

/// A background thread answering DNS queries from a [`TestResolver`]. The
/// socket closes when the handle is dropped.
pub struct UdpServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl UdpServer {
    /// Binds an ephemeral loopback port and starts serving.
    pub fn spawn(resolver: Arc<TestResolver>) -> std::io::Result<UdpServer> {
        let socket = UdpSocket::bind(("127.0.0.1", 0))?;
        socket.set_read_timeout(Some(Duration::from_millis(50)))?;
        let addr = socket.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let thread = std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while !stop_flag.load(Ordering::Relaxed) {
                let (n, peer) = match socket.recv_from(&mut buf) {
                    Ok(r) => r,
                    Err(e)
                        if e.kind() == std::io::ErrorKind::WouldBlock
                            || e.kind() == std::io::ErrorKind::TimedOut =>
                    {
                        continue
                    }
                    Err(_) => break,
                };
                let Ok(q) = wire::decode_query(&buf[..n]) else {
                    continue;
                };
                let Some(rtype) = q.rtype else {
                    // unsupported qtype: answer empty rather than drop
                    let resp = wire::encode_response(q.id, &q.name, RecordType::Txt, &[], 60);
                    let _ = socket.send_to(&resp, peer);
                    continue;
                };
                let payloads = resolver.query(&q.name, rtype).unwrap_or_default();
                let answers: Vec<Vec<u8>> = payloads
                    .iter()
                    .map(|p| match rtype {
                        RecordType::Txt => wire::encode_txt_rdata(p),
                        _ => p.clone(),
                    })
                    .collect();
                let resp = wire::encode_response(q.id, &q.name, rtype, &answers, 60);
                let _ = socket.send_to(&resp, peer);
            }
        });
        Ok(UdpServer {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for UdpServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
