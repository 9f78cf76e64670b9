//! Structured failure reporting. The underlying idea is error reporting to
//! the addresses a policy's fail directive names; delivery is pluggable and
//! the default sink is an append-only JSON-lines log (SMTP is out of scope).

use std::path::PathBuf;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Emitted on policy failure or stale-policy usage, never on success.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportEvent {
    pub domain: String,
    /// The failing policy's id; 0 for domain-level events such as stale
    /// usage that belong to no single policy.
    pub policy_id: u64,
    pub failure_reason: String,
    /// Report addresses from the relevant fail directive(s).
    pub addresses: Vec<String>,
    pub timestamp: DateTime<Utc>,
}

pub trait ReportSink: Send + Sync {
    fn emit(&self, event: &ReportEvent);
}

/// Appends one JSON object per line.
pub struct FileReportSink {
    path: PathBuf,
}

impl FileReportSink {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        FileReportSink { path: path.into() }
    }
}

impl ReportSink for FileReportSink {
    fn emit(&self, event: &ReportEvent) {
        use std::io::Write;
        let line = serde_json::to_string(event).expect("report event serializes");
        let result = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .and_then(|mut f| writeln!(f, "{line}"));
        if let Err(e) = result {
            log::error!("report sink {} unwritable: {e}", self.path.display());
        }
    }
}

/// Collects events in memory; the sink of choice for assertions.
#[derive(Default)]
pub struct MemoryReportSink {
    events: Mutex<Vec<ReportEvent>>,
}

impl MemoryReportSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<ReportEvent> {
        self.events.lock().unwrap().clone()
    }

    pub fn take(&self) -> Vec<ReportEvent> {
        std::mem::take(&mut self.events.lock().unwrap())
    }
}

impl ReportSink for MemoryReportSink {
    fn emit(&self, event: &ReportEvent) {
        self.events.lock().unwrap().push(event.clone());
    }
}

/// Discards everything.
pub struct NullReportSink;

impl ReportSink for NullReportSink {
    fn emit(&self, _event: &ReportEvent) {}
}
