//! The agent's policy cache: concurrent-reader map with version
//! monotonicity, per-domain fetch deduplication, and an optional on-disk
//! JSON snapshot so verified policies survive restarts.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::{Condvar, Mutex, RwLock};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, DomainName, Metapolicy};

const SNAPSHOT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CacheError {
    #[error("cache for {domain} holds version {cached}; refusing version {offered}")]
    NonMonotonic {
        domain: DomainName,
        cached: u64,
        offered: u64,
    },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot corrupt: {0}")]
    Corrupt(String),
}

/// A verified metapolicy at rest. `stale` means the validity window has
/// passed but no newer version was obtainable (§recovery semantics).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheEntry {
    pub metapolicy: Metapolicy,
    pub stored_at: DateTime<Utc>,
    pub stale: bool,
}

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    format_version: u32,
    entries: Vec<SnapshotEntry>,
}

#[derive(Serialize, Deserialize)]
struct SnapshotEntry {
    domain: String,
    /// Canonical metapolicy bytes, base64.
    policy: String,
    stored_at: DateTime<Utc>,
    stale: bool,
}

#[derive(Default)]
struct InFlight {
    fetching: Mutex<HashSet<DomainName>>,
    done: Condvar,
}

pub struct PolicyCache {
    entries: RwLock<HashMap<DomainName, CacheEntry>>,
    snapshot_path: Option<PathBuf>,
    in_flight: InFlight,
}

impl PolicyCache {
    /// A cache with no persistence.
    pub fn in_memory() -> Self {
        PolicyCache {
            entries: RwLock::new(HashMap::new()),
            snapshot_path: None,
            in_flight: InFlight::default(),
        }
    }

    /// A durable cache backed by a JSON snapshot at `path`; loads the
    /// snapshot if present. Snapshot entries were verified before being
    /// written, so loading trusts the local file.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let path = path.into();
        let mut entries = HashMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let snap: SnapshotFile =
                serde_json::from_str(&text).map_err(|e| CacheError::Corrupt(e.to_string()))?;
            if snap.format_version != SNAPSHOT_FORMAT_VERSION {
                return Err(CacheError::Corrupt(format!(
                    "unsupported snapshot format version {}",
                    snap.format_version
                )));
            }
            for e in snap.entries {
                let bytes = B64
                    .decode(&e.policy)
                    .map_err(|err| CacheError::Corrupt(format!("{}: {err}", e.domain)))?;
                let m = model::parse(&bytes)
                    .map_err(|err| CacheError::Corrupt(format!("{}: {err}", e.domain)))?;
                entries.insert(
                    m.header.domain.clone(),
                    CacheEntry {
                        metapolicy: m,
                        stored_at: e.stored_at,
                        stale: e.stale,
                    },
                );
            }
        }
        Ok(PolicyCache {
            entries: RwLock::new(entries),
            snapshot_path: Some(path),
            in_flight: InFlight::default(),
        })
    }

    pub fn snapshot_path(&self) -> Option<&Path> {
        self.snapshot_path.as_deref()
    }

    pub fn get(&self, domain: &DomainName) -> Option<CacheEntry> {
        self.entries.read().unwrap().get(domain).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.read().unwrap().is_empty()
    }

    /// Stores a verified metapolicy. Refuses to replace a cached version
    /// with an equal or lower one.
    pub fn insert(&self, metapolicy: Metapolicy, stored_at: DateTime<Utc>) -> Result<(), CacheError> {
        let domain = metapolicy.header.domain.clone();
        {
            let mut map = self.entries.write().unwrap();
            if let Some(existing) = map.get(&domain) {
                if metapolicy.header.version <= existing.metapolicy.header.version {
                    return Err(CacheError::NonMonotonic {
                        domain,
                        cached: existing.metapolicy.header.version,
                        offered: metapolicy.header.version,
                    });
                }
            }
            map.insert(
                domain,
                CacheEntry {
                    metapolicy,
                    stored_at,
                    stale: false,
                },
            );
        }
        self.persist()
    }

    pub fn remove(&self, domain: &DomainName) -> Result<Option<CacheEntry>, CacheError> {
        let removed = self.entries.write().unwrap().remove(domain);
        self.persist()?;
        Ok(removed)
    }

    /// Flags the entry as stale (past validity, no newer version found).
    pub fn mark_stale(&self, domain: &DomainName) -> Result<Option<CacheEntry>, CacheError> {
        let updated = {
            let mut map = self.entries.write().unwrap();
            map.get_mut(domain).map(|e| {
                e.stale = true;
                e.clone()
            })
        };
        self.persist()?;
        Ok(updated)
    }

    /// Claims the per-domain fetch slot, blocking while another thread's
    /// fetch for the same domain is in flight. Lookups for distinct domains
    /// are unaffected.
    pub fn fetch_guard(&self, domain: &DomainName) -> FetchGuard<'_> {
        let mut fetching = self.in_flight.fetching.lock().unwrap();
        while fetching.contains(domain) {
            fetching = self.in_flight.done.wait(fetching).unwrap();
        }
        fetching.insert(domain.clone());
        FetchGuard {
            in_flight: &self.in_flight,
            domain: domain.clone(),
        }
    }

    fn persist(&self) -> Result<(), CacheError> {
        let Some(path) = &self.snapshot_path else {
            return Ok(());
        };
        let map = self.entries.read().unwrap();
        let mut entries: Vec<SnapshotEntry> = map
            .values()
            .map(|e| SnapshotEntry {
                domain: e.metapolicy.header.domain.to_string(),
                policy: B64.encode(
                    e.metapolicy
                        .canonical_serialize()
                        .expect("cached metapolicy serializes"),
                ),
                stored_at: e.stored_at,
                stale: e.stale,
            })
            .collect();
        entries.sort_by(|a, b| a.domain.cmp(&b.domain));
        let snap = SnapshotFile {
            format_version: SNAPSHOT_FORMAT_VERSION,
            entries,
        };
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_string_pretty(&snap).unwrap())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }
}

/// Releases the domain's fetch slot on drop.
pub struct FetchGuard<'a> {
    in_flight: &'a InFlight,
    domain: DomainName,
}

impl Drop for FetchGuard<'_> {
    fn drop(&mut self) {
        self.in_flight
            .fetching
            .lock()
            .unwrap()
            .remove(&self.domain);
        self.in_flight.done.notify_all();
    }
}
