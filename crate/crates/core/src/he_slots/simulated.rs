use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    AuditEntry, AuditLedger, BackendConfig, Ciphertext, CiphertextId, HeBackend, HeError, KeyId,
    KeyMaterial, Provenance, PublicKey, SecretKey, SlotVector,
};
use crate::process::ProcessId;

/// Payload type; private so nothing outside this file can read it.
struct SimPayload {
    slots: Vec<f64>,
    /// Random per-encryption value standing in for encryption randomness.
    #[allow(dead_code)]
    nonce: u64,
}

/// Cleartext-simulating backend with access control and taint tracking.
pub struct SimulatedBackend {
    config: BackendConfig,
    rng: Mutex<ChaCha8Rng>,
    next_ct: AtomicU64,
    issued: Mutex<BTreeSet<KeyId>>,
    rotation_keys: Mutex<BTreeSet<KeyId>>,
    ledger: Arc<AuditLedger>,
}

impl SimulatedBackend {
    pub fn new(config: BackendConfig, seed: u64) -> Result<Self, HeError> {
        Self::with_ledger(config, seed, Arc::new(AuditLedger::new()))
    }

    pub fn with_ledger(
        config: BackendConfig,
        seed: u64,
        ledger: Arc<AuditLedger>,
    ) -> Result<Self, HeError> {
        config.validate()?;
        Ok(SimulatedBackend {
            config,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
            next_ct: AtomicU64::new(1),
            issued: Mutex::new(BTreeSet::new()),
            rotation_keys: Mutex::new(BTreeSet::new()),
            ledger,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn ledger(&self) -> &Arc<AuditLedger> {
        &self.ledger
    }

    /// Key generation that publishes no rotation keys.
    pub fn keygen_without_rotation(&self, holder: ProcessId) -> Result<KeyMaterial, HeError> {
        self.generate(holder, false)
    }

    fn generate(&self, holder: ProcessId, with_rotation: bool) -> Result<KeyMaterial, HeError> {
        self.config.validate()?;
        let key_id = {
            let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
            let mut issued = self.issued.lock().unwrap_or_else(|e| e.into_inner());
            loop {
                let candidate = KeyId(rng.gen());
                if issued.insert(candidate) {
                    break candidate;
                }
            }
        };
        if with_rotation {
            self.rotation_keys
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(key_id);
        }
        self.ledger.record_key(key_id, holder);
        Ok(KeyMaterial::assemble(key_id, holder, with_rotation))
    }

    fn next_id(&self) -> CiphertextId {
        CiphertextId(self.next_ct.fetch_add(1, Ordering::Relaxed))
    }

    fn check_len(&self, v: &[f64]) -> Result<(), HeError> {
        if v.len() != self.config.slot_capacity {
            return Err(HeError::LengthMismatch {
                expected: self.config.slot_capacity,
                got: v.len(),
            });
        }
        Ok(())
    }

    fn slots<'a>(&self, ct: &'a Ciphertext) -> Result<&'a [f64], HeError> {
        ct.body::<SimPayload>()
            .map(|p| p.slots.as_slice())
            .ok_or(HeError::ForeignCiphertext(ct.id()))
    }

    fn same_key(a: &Ciphertext, b: &Ciphertext) -> Result<(), HeError> {
        if a.key_id() != b.key_id() {
            return Err(HeError::KeyMismatch {
                left: a.key_id(),
                right: b.key_id(),
            });
        }
        Ok(())
    }

    /// Adds fresh uniform noise in `[-eps, eps]` to every slot.
    fn payload(&self, mut slots: Vec<f64>) -> Arc<SimPayload> {
        let eps = self.config.noise_epsilon;
        let mut rng = self.rng.lock().unwrap_or_else(|e| e.into_inner());
        if eps > 0.0 {
            for s in &mut slots {
                *s += rng.gen_range(-eps..=eps);
            }
        }
        Arc::new(SimPayload {
            slots,
            nonce: rng.gen(),
        })
    }
}

impl HeBackend for SimulatedBackend {
    fn slot_capacity(&self) -> usize {
        self.config.slot_capacity
    }

    fn keygen(&self, holder: ProcessId) -> Result<KeyMaterial, HeError> {
        self.generate(holder, true)
    }

    fn encrypt(
        &self,
        pk: &PublicKey,
        plaintext: &SlotVector,
        tag: Provenance,
    ) -> Result<Ciphertext, HeError> {
        self.check_len(plaintext.as_slice())?;
        let by = tag.process;
        let body = self.payload(plaintext.as_slice().to_vec());
        let ct = Ciphertext::fresh(self.next_id(), pk.key_id(), tag, body);
        self.ledger.record_encrypted(by, &ct);
        Ok(ct)
    }

    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<SlotVector, HeError> {
        if sk.key_id() != ct.key_id() {
            self.ledger.record_decrypt(sk.holder(), ct, false);
            return Err(HeError::AccessDenied {
                key: sk.key_id(),
                target: ct.key_id(),
            });
        }
        let slots = self.slots(ct)?.to_vec();
        self.ledger.record_decrypt(sk.holder(), ct, true);
        Ok(SlotVector::new(slots))
    }

    fn add_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        Self::same_key(a, b)?;
        let (x, y) = (self.slots(a)?, self.slots(b)?);
        let sum = x.iter().zip(y).map(|(p, q)| p + q).collect();
        Ok(Ciphertext::derive_binary(
            self.next_id(),
            a,
            b,
            false,
            self.payload(sum),
        ))
    }

    fn mult_pt(&self, a: &Ciphertext, plaintext: &SlotVector) -> Result<Ciphertext, HeError> {
        self.check_len(plaintext.as_slice())?;
        let x = self.slots(a)?;
        let prod = x
            .iter()
            .zip(plaintext.as_slice())
            .map(|(p, q)| p * q)
            .collect();
        Ok(Ciphertext::derive_unary(
            self.next_id(),
            a,
            true,
            self.payload(prod),
        ))
    }

    fn mult_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError> {
        Self::same_key(a, b)?;
        let (x, y) = (self.slots(a)?, self.slots(b)?);
        let prod = x.iter().zip(y).map(|(p, q)| p * q).collect();
        Ok(Ciphertext::derive_binary(
            self.next_id(),
            a,
            b,
            true,
            self.payload(prod),
        ))
    }

    fn rotate(&self, a: &Ciphertext, amount: i64) -> Result<Ciphertext, HeError> {
        let has_key = self
            .rotation_keys
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .contains(&a.key_id());
        if !has_key {
            return Err(HeError::MissingRotationKey(a.key_id()));
        }
        let x = self.slots(a)?;
        let cap = x.len() as i64;
        let shift = amount.rem_euclid(cap) as usize;
        let mut rotated = x.to_vec();
        rotated.rotate_left(shift);
        Ok(Ciphertext::derive_unary(
            self.next_id(),
            a,
            false,
            self.payload(rotated),
        ))
    }

    fn audit_view(&self, observer: ProcessId) -> Result<Vec<AuditEntry>, HeError> {
        self.ledger.view(observer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::he_slots::{noise_bound, rotate_sum, AuditEvent};

    fn exact(cap: usize) -> SimulatedBackend {
        SimulatedBackend::new(BackendConfig::new(cap, 0.0).unwrap(), 1).unwrap()
    }

    fn tag(p: usize) -> Provenance {
        Provenance::new(ProcessId(p), "test")
    }

    fn sv(v: &[f64]) -> SlotVector {
        SlotVector::new(v.to_vec())
    }

    #[test]
    fn keygen_contract() {
        let be = exact(8);
        let a = be.keygen(ProcessId(9)).unwrap();
        let b = be.keygen(ProcessId(9)).unwrap();
        assert_eq!(a.holder(), ProcessId(9));
        assert_ne!(a.key_id(), b.key_id());
        assert!(a.rotation.is_some());

        let again = exact(8).keygen(ProcessId(9)).unwrap();
        assert_eq!(a.key_id(), again.key_id());
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = BackendConfig {
            slot_capacity: 6,
            noise_epsilon: 0.0,
        };
        assert!(matches!(
            SimulatedBackend::new(bad, 0),
            Err(HeError::InvalidConfig(_))
        ));
    }

    #[test]
    fn encrypt_decrypt_round_trip() {
        let be = exact(4);
        let key = be.keygen(ProcessId(0)).unwrap();
        let zero = be
            .encrypt(&key.public, &SlotVector::zeros(4), tag(1))
            .unwrap();
        assert_eq!(
            be.decrypt(&key.secret, &zero).unwrap(),
            SlotVector::zeros(4)
        );

        let ct = be
            .encrypt(&key.public, &sv(&[1., 2., 3., 4.]), tag(1))
            .unwrap();
        assert_eq!(ct.taint().tags().len(), 1);
        assert!(ct.taint().tags().contains(&tag(1)));
        assert_eq!(ct.depth(), 0);

        let be2 = exact(2);
        let k2 = be2.keygen(ProcessId(0)).unwrap();
        let five = be2.encrypt(&k2.public, &sv(&[5., 0.]), tag(0)).unwrap();
        assert_eq!(be2.decrypt(&k2.secret, &five).unwrap()[0], 5.0);
    }

    #[test]
    fn repeated_encryption_is_distinguishable() {
        let be = exact(4);
        let key = be.keygen(ProcessId(0)).unwrap();
        let v = SlotVector::zeros(4);
        let a = be.encrypt(&key.public, &v, tag(1)).unwrap();
        let b = be.encrypt(&key.public, &v, tag(1)).unwrap();
        assert_ne!(a, b);
        assert_ne!(a.id(), b.id());
    }

    #[test]
    fn length_mismatch() {
        let be = exact(4);
        let key = be.keygen(ProcessId(0)).unwrap();
        let err = be.encrypt(&key.public, &sv(&[1., 2.]), tag(0)).unwrap_err();
        assert_eq!(
            err,
            HeError::LengthMismatch {
                expected: 4,
                got: 2
            }
        );
        let ct = be
            .encrypt(&key.public, &SlotVector::zeros(4), tag(0))
            .unwrap();
        assert!(be.mult_pt(&ct, &sv(&[1.0; 3])).is_err());
    }

    #[test]
    fn wrong_key_is_access_denied_and_logged() {
        let be = exact(4);
        let a = be.keygen(ProcessId(0)).unwrap();
        let b = be.keygen(ProcessId(1)).unwrap();
        let ct = be
            .encrypt(&b.public, &sv(&[1., 2., 3., 4.]), tag(2))
            .unwrap();
        assert!(matches!(
            be.decrypt(&a.secret, &ct),
            Err(HeError::AccessDenied { .. })
        ));
        let view = be.audit_view(ProcessId(0)).unwrap();
        assert!(view
            .iter()
            .any(|e| e.event == AuditEvent::Decrypted { granted: false } && !e.decryptable));
    }

    #[test]
    fn add_mult_rotate_examples() {
        let be = exact(4);
        let k = be.keygen(ProcessId(0)).unwrap();
        let enc = |v: &[f64], p| be.encrypt(&k.public, &sv(v), tag(p)).unwrap();
        let dec = |c: &Ciphertext| be.decrypt(&k.secret, c).unwrap().into_inner();

        let s = be
            .add_ct(&enc(&[1., 2., 3., 4.], 1), &enc(&[4., 3., 2., 1.], 2))
            .unwrap();
        assert_eq!(dec(&s), vec![5.0; 4]);
        assert_eq!(s.taint().contributors().len(), 2);

        let id = be
            .add_ct(&enc(&[1., 2., 0., 0.], 1), &enc(&[0.; 4], 1))
            .unwrap();
        assert_eq!(dec(&id), vec![1., 2., 0., 0.]);

        let m = be
            .mult_pt(&enc(&[2., 4., 0., 0.], 1), &sv(&[0.5, 0.25, 0., 0.]))
            .unwrap();
        assert_eq!(dec(&m), vec![1., 1., 0., 0.]);
        assert_eq!(m.depth(), 1);
        let z = be
            .mult_pt(&enc(&[2., 4., 1., 1.], 1), &SlotVector::zeros(4))
            .unwrap();
        assert_eq!(dec(&z), vec![0.; 4]);

        let c = be
            .mult_ct(&enc(&[2., 3., 0., 0.], 1), &enc(&[3., 2., 0., 0.], 2))
            .unwrap();
        assert_eq!(dec(&c), vec![6., 6., 0., 0.]);
        assert_eq!(c.depth(), 1);

        let r = be.rotate(&enc(&[1., 2., 3., 4.], 1), 2).unwrap();
        assert_eq!(dec(&r), vec![3., 4., 1., 2.]);
        let r1 = be.rotate(&enc(&[1., 2., 3., 4.], 1), 1).unwrap();
        assert_eq!(dec(&r1), vec![2., 3., 4., 1.]);
        let r0 = be.rotate(&enc(&[1., 2., 3., 4.], 1), 0).unwrap();
        assert_eq!(dec(&r0), vec![1., 2., 3., 4.]);
        let back = be.rotate(&enc(&[1., 2., 3., 4.], 1), -1).unwrap();
        assert_eq!(dec(&back), vec![4., 1., 2., 3.]);
    }

    #[test]
    fn cross_key_operations_fail() {
        let be = exact(2);
        let a = be.keygen(ProcessId(0)).unwrap();
        let b = be.keygen(ProcessId(1)).unwrap();
        let x = be
            .encrypt(&a.public, &SlotVector::zeros(2), tag(0))
            .unwrap();
        let y = be
            .encrypt(&b.public, &SlotVector::zeros(2), tag(1))
            .unwrap();
        assert!(matches!(
            be.add_ct(&x, &y),
            Err(HeError::KeyMismatch { .. })
        ));
        assert!(matches!(
            be.mult_ct(&x, &y),
            Err(HeError::KeyMismatch { .. })
        ));
    }

    #[test]
    fn rotation_needs_keys() {
        let be = exact(4);
        let k = be.keygen_without_rotation(ProcessId(0)).unwrap();
        assert!(k.rotation.is_none());
        let ct = be
            .encrypt(&k.public, &SlotVector::zeros(4), tag(0))
            .unwrap();
        assert_eq!(
            be.rotate(&ct, 1).unwrap_err(),
            HeError::MissingRotationKey(k.key_id())
        );
    }

    #[test]
    fn rotate_sum_marks_prepared() {
        let be = exact(8);
        let k = be.keygen(ProcessId(0)).unwrap();
        let ct = be
            .encrypt(&k.public, &sv(&[1., 2., 3., 4., 5., 6., 7., 8.]), tag(1))
            .unwrap();
        assert!(!ct.is_prepared());
        let summed = rotate_sum(&be, &ct).unwrap();
        assert!(summed.is_prepared());
        assert_eq!(
            be.decrypt(&k.secret, &summed).unwrap().into_inner(),
            vec![36.0; 8]
        );
    }

    #[test]
    fn foreign_ciphertext_rejected() {
        let a = exact(2);
        let b = exact(2);
        let ka = a.keygen(ProcessId(0)).unwrap();
        let ct = a
            .encrypt(&ka.public, &SlotVector::zeros(2), tag(0))
            .unwrap();
        let foreign = Ciphertext::fresh(CiphertextId(99), ka.key_id(), tag(0), Arc::new(1u8));
        assert!(matches!(
            b.add_ct(&ct, &foreign),
            Err(HeError::ForeignCiphertext(CiphertextId(99)))
        ));
    }

    #[test]
    fn unknown_observer() {
        let be = exact(2);
        assert_eq!(
            be.audit_view(ProcessId(5)).unwrap_err(),
            HeError::UnknownObserver(ProcessId(5))
        );
    }

    #[test]
    fn noise_stays_within_bound() {
        let eps = 1e-9;
        let noisy = SimulatedBackend::new(BackendConfig::new(4, eps).unwrap(), 3).unwrap();
        let k = noisy.keygen(ProcessId(0)).unwrap();
        let a = noisy
            .encrypt(&k.public, &sv(&[0.5, -0.25, 1.0, 0.0]), tag(0))
            .unwrap();
        let b = noisy
            .encrypt(&k.public, &sv(&[0.1, 0.2, -0.3, 0.4]), tag(1))
            .unwrap();
        let s = noisy.add_ct(&a, &b).unwrap();
        let m = noisy.mult_pt(&s, &sv(&[0.5; 4])).unwrap();
        let r = rotate_sum(&noisy, &m).unwrap();
        let got = noisy.decrypt(&k.secret, &r).unwrap();
        let want = (0.6 + -0.05 + 0.7 + 0.4) * 0.5;
        let bound = noise_bound(&r, eps, 2.0);
        for x in got.as_slice() {
            assert!((x - want).abs() <= bound, "{x} vs {want} (bound {bound})");
        }
    }
}
