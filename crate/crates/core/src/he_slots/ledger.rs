use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::Serialize;

use super::{Ciphertext, CiphertextId, HeError, KeyId, Taint};
use crate::process::ProcessId;

/// Ciphertext metadata as recorded in the ledger (never the payload).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CiphertextMeta {
    pub id: CiphertextId,
    pub key: KeyId,
    pub taint: Arc<Taint>,
    pub depth: u32,
}

impl From<&Ciphertext> for CiphertextMeta {
    fn from(ct: &Ciphertext) -> Self {
        CiphertextMeta {
            id: ct.id(),
            key: ct.key_id(),
            taint: ct.taint_arc(),
            depth: ct.depth(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum LedgerEvent {
    KeyIssued {
        key: KeyId,
        holder: ProcessId,
    },
    Encrypted {
        by: ProcessId,
        ct: CiphertextMeta,
    },
    Held {
        observer: ProcessId,
        ct: CiphertextMeta,
    },
    Decrypted {
        by: ProcessId,
        ct: CiphertextMeta,
        granted: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum AuditEvent {
    Encrypted,
    Held,
    Decrypted { granted: bool },
}

/// One ciphertext exposure of an observer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditEntry {
    pub event: AuditEvent,
    pub ciphertext: CiphertextId,
    pub key: KeyId,
    pub taint: Arc<Taint>,
    /// The observer held the matching secret key at some point.
    pub decryptable: bool,
}

#[derive(Default)]
struct Inner {
    events: Vec<LedgerEvent>,
    observers: BTreeSet<ProcessId>,
    holders: BTreeMap<KeyId, ProcessId>,
}

/// Append-only record of key issuance and ciphertext custody.
///
/// Shared between a backend (which logs keys, encryptions and decryptions)
/// and the network simulator (which logs every ciphertext a process
/// receives).
#[derive(Default)]
pub struct AuditLedger {
    inner: Mutex<Inner>,
}

impl AuditLedger {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn register(&self, observer: ProcessId) {
        self.lock().observers.insert(observer);
    }

    pub fn record_key(&self, key: KeyId, holder: ProcessId) {
        let mut inner = self.lock();
        inner.observers.insert(holder);
        inner.holders.insert(key, holder);
        inner.events.push(LedgerEvent::KeyIssued { key, holder });
    }

    pub fn record_encrypted(&self, by: ProcessId, ct: &Ciphertext) {
        let mut inner = self.lock();
        inner.observers.insert(by);
        inner
            .events
            .push(LedgerEvent::Encrypted { by, ct: ct.into() });
    }

    pub fn record_held(&self, observer: ProcessId, ct: &Ciphertext) {
        let mut inner = self.lock();
        inner.observers.insert(observer);
        inner.events.push(LedgerEvent::Held {
            observer,
            ct: ct.into(),
        });
    }

    pub fn record_decrypt(&self, by: ProcessId, ct: &Ciphertext, granted: bool) {
        let mut inner = self.lock();
        inner.observers.insert(by);
        inner.events.push(LedgerEvent::Decrypted {
            by,
            ct: ct.into(),
            granted,
        });
    }

    pub fn holder_of(&self, key: KeyId) -> Option<ProcessId> {
        self.lock().holders.get(&key).copied()
    }

    pub fn key_holders(&self) -> BTreeMap<KeyId, ProcessId> {
        self.lock().holders.clone()
    }

    pub fn events(&self) -> Vec<LedgerEvent> {
        self.lock().events.clone()
    }

    pub fn observers(&self) -> BTreeSet<ProcessId> {
        self.lock().observers.clone()
    }

    /// Every ciphertext `observer` ever produced, held or tried to decrypt.
    pub fn view(&self, observer: ProcessId) -> Result<Vec<AuditEntry>, HeError> {
        let inner = self.lock();
        if !inner.observers.contains(&observer) {
            return Err(HeError::UnknownObserver(observer));
        }
        let owns = |key: KeyId| inner.holders.get(&key) == Some(&observer);
        let entry = |event, ct: &CiphertextMeta| AuditEntry {
            event,
            ciphertext: ct.id,
            key: ct.key,
            taint: Arc::clone(&ct.taint),
            decryptable: owns(ct.key),
        };
        let entries = inner
            .events
            .iter()
            .filter_map(|e| match e {
                LedgerEvent::Encrypted { by, ct } if *by == observer => {
                    Some(entry(AuditEvent::Encrypted, ct))
                }
                LedgerEvent::Held { observer: o, ct } if *o == observer => {
                    Some(entry(AuditEvent::Held, ct))
                }
                LedgerEvent::Decrypted { by, ct, granted } if *by == observer => {
                    Some(entry(AuditEvent::Decrypted { granted: *granted }, ct))
                }
                _ => None,
            })
            .collect();
        Ok(entries)
    }
}
