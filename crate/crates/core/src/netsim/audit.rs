use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::engine::PlaintextObservation;
use crate::he_slots::{AuditEvent, AuditLedger, CiphertextId, KeyId, Taint};
use crate::process::ProcessId;

/// A ciphertext whose taint names every voter under `label` is a finished
/// aggregate and may be decrypted even though it was never prepared.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompletePolicy {
    pub label: String,
    pub voters: BTreeSet<ProcessId>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct AuditPolicy {
    pub complete: Option<CompletePolicy>,
    /// Private input of each process, for the plaintext-leak check.
    pub private_inputs: Vec<(ProcessId, f64)>,
}

impl AuditPolicy {
    fn safe_for(&self, observer: ProcessId, taint: &Taint) -> bool {
        if taint.is_prepared() {
            return true;
        }
        if let Some(policy) = &self.complete {
            if taint.contributors_with_label(&policy.label) == policy.voters {
                return true;
            }
        }
        taint.contributors().iter().all(|&p| p == observer)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Someone other than the registered keyholder decrypted successfully.
    NonHolderDecryption {
        observer: ProcessId,
        ciphertext: CiphertextId,
    },
    /// The keyholder decrypted a raw (unprepared, incomplete) aggregate.
    UnsafeDecryption {
        observer: ProcessId,
        ciphertext: CiphertextId,
        contributors: Vec<ProcessId>,
    },
    /// A process held a raw aggregate it had the key for.
    DecryptableExposure {
        observer: ProcessId,
        ciphertext: CiphertextId,
        contributors: Vec<ProcessId>,
    },
    /// A message carried another party's input in the clear.
    PlaintextLeak {
        from: ProcessId,
        to: ProcessId,
        instance: String,
        owner: ProcessId,
    },
}

/// Honest-but-curious audit of a finished run.
pub fn privacy_audit(
    ledger: &AuditLedger,
    plaintext: &[PlaintextObservation],
    policy: &AuditPolicy,
) -> Vec<Violation> {
    let holders: BTreeMap<KeyId, ProcessId> = ledger.key_holders();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for observer in ledger.observers() {
        let Ok(view) = ledger.view(observer) else {
            continue;
        };
        for entry in view {
            let contributors = || entry.taint.contributors().into_iter().collect::<Vec<_>>();
            let safe = policy.safe_for(observer, &entry.taint);
            let violation = match entry.event {
                AuditEvent::Decrypted { granted: true } => {
                    if holders.get(&entry.key) != Some(&observer) {
                        Some(Violation::NonHolderDecryption {
                            observer,
                            ciphertext: entry.ciphertext,
                        })
                    } else if !safe {
                        Some(Violation::UnsafeDecryption {
                            observer,
                            ciphertext: entry.ciphertext,
                            contributors: contributors(),
                        })
                    } else {
                        None
                    }
                }
                AuditEvent::Decrypted { granted: false } => None,
                AuditEvent::Encrypted | AuditEvent::Held => {
                    (entry.decryptable && !safe).then(|| Violation::DecryptableExposure {
                        observer,
                        ciphertext: entry.ciphertext,
                        contributors: contributors(),
                    })
                }
            };
            if let Some(v) = violation {
                let key = format!("{v:?}");
                if seen.insert(key) {
                    out.push(v);
                }
            }
        }
    }
    for obs in plaintext {
        for &(owner, input) in &policy.private_inputs {
            if obs.value == input {
                let v = Violation::PlaintextLeak {
                    from: obs.from,
                    to: obs.to,
                    instance: obs.instance.clone(),
                    owner,
                };
                if seen.insert(format!("{v:?}")) {
                    out.push(v);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he_slots::{
        rotate_sum, BackendConfig, HeBackend, Provenance, SimulatedBackend, SlotVector,
    };

    fn setup() -> SimulatedBackend {
        SimulatedBackend::new(BackendConfig::new(4, 0.0).unwrap(), 0).unwrap()
    }

    #[test]
    fn prepared_decryption_is_clean() {
        let be = setup();
        let key = be.keygen(ProcessId(9)).unwrap();
        let ct = be
            .encrypt(
                &key.public,
                &SlotVector::filled(4, 1.0),
                Provenance::new(ProcessId(0), "v"),
            )
            .unwrap();
        be.ledger().record_held(ProcessId(1), &ct);
        let prep = rotate_sum(&be, &ct).unwrap();
        be.ledger().record_held(ProcessId(9), &prep);
        be.decrypt(&key.secret, &prep).unwrap();
        assert!(privacy_audit(be.ledger(), &[], &AuditPolicy::default()).is_empty());
    }

    #[test]
    fn raw_decryption_is_flagged() {
        let be = setup();
        let key = be.keygen(ProcessId(9)).unwrap();
        let ct = be
            .encrypt(
                &key.public,
                &SlotVector::filled(4, 1.0),
                Provenance::new(ProcessId(0), "v"),
            )
            .unwrap();
        be.ledger().record_held(ProcessId(9), &ct);
        be.decrypt(&key.secret, &ct).unwrap();
        let v = privacy_audit(be.ledger(), &[], &AuditPolicy::default());
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::UnsafeDecryption { .. })));
        assert!(v
            .iter()
            .any(|x| matches!(x, Violation::DecryptableExposure { .. })));
    }

    #[test]
    fn own_input_is_not_an_exposure() {
        let be = setup();
        let key = be.keygen(ProcessId(2)).unwrap();
        be.encrypt(
            &key.public,
            &SlotVector::filled(4, 1.0),
            Provenance::new(ProcessId(2), "v"),
        )
        .unwrap();
        assert!(privacy_audit(be.ledger(), &[], &AuditPolicy::default()).is_empty());
    }

    #[test]
    fn complete_ballot_may_be_decrypted() {
        let be = setup();
        let key = be.keygen(ProcessId(9)).unwrap();
        let enc = |p| {
            be.encrypt(
                &key.public,
                &SlotVector::zeros(4),
                Provenance::new(ProcessId(p), "ballot"),
            )
            .unwrap()
        };
        let partial = be.add_ct(&enc(0), &enc(1)).unwrap();
        let full = be.add_ct(&partial, &enc(2)).unwrap();
        be.decrypt(&key.secret, &full).unwrap();
        let policy = AuditPolicy {
            complete: Some(CompletePolicy {
                label: "ballot".into(),
                voters: (0..3).map(ProcessId).collect(),
            }),
            private_inputs: Vec::new(),
        };
        assert!(privacy_audit(be.ledger(), &[], &policy).is_empty());
        be.decrypt(&key.secret, &partial).unwrap();
        assert_eq!(privacy_audit(be.ledger(), &[], &policy).len(), 1);
    }

    #[test]
    fn plaintext_input_on_the_wire_is_a_leak() {
        let be = setup();
        let obs = PlaintextObservation {
            time: 0,
            from: ProcessId(0),
            to: ProcessId(1),
            instance: "avg/trusted".into(),
            value: 3.25,
        };
        let policy = AuditPolicy {
            complete: None,
            private_inputs: vec![(ProcessId(0), 3.25), (ProcessId(1), 1.0)],
        };
        let v = privacy_audit(be.ledger(), &[obs], &policy);
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0],
            Violation::PlaintextLeak {
                owner: ProcessId(0),
                ..
            }
        ));
    }
}
