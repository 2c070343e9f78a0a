//! Homomorphic slot-vector arithmetic.
//!
//! Protocol code never touches an encrypted value directly: it holds
//! [`Ciphertext`] handles and asks an [`HeBackend`] to combine them. The
//! backend trait lists the complete operation set a CKKS-style scheme has to
//! provide (key generation, encryption, decryption, slot-wise addition,
//! plaintext and ciphertext multiplication, cyclic rotation) plus the audit
//! view used by privacy checks, so a lattice-based library can be slotted in
//! behind it without changing any protocol module.
//!
//! [`SimulatedBackend`] is the built-in implementation. It keeps payloads in
//! the clear internally, but only hands them out to the holder of the
//! matching [`SecretKey`], tracks which raw inputs flowed into every
//! ciphertext, and can inject bounded additive noise to mimic approximate
//! arithmetic. It makes no cryptographic claim.

mod ledger;
mod simulated;

use std::any::Any;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process::ProcessId;

pub use ledger::{AuditEntry, AuditEvent, AuditLedger, CiphertextMeta, LedgerEvent};
pub use simulated::SimulatedBackend;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HeError {
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("slot vector has length {got}, backend capacity is {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("operands are encrypted under different keys ({left} vs {right})")]
    KeyMismatch { left: KeyId, right: KeyId },
    #[error("access denied: secret key {key} cannot decrypt a ciphertext under {target}")]
    AccessDenied { key: KeyId, target: KeyId },
    #[error("no rotation keys were generated for {0}")]
    MissingRotationKey(KeyId),
    #[error("observer {0} is unknown to the audit ledger")]
    UnknownObserver(ProcessId),
    #[error("ciphertext {0} was not produced by this backend")]
    ForeignCiphertext(CiphertextId),
}

/// Backend parameters: slot count and the per-operation noise bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub slot_capacity: usize,
    pub noise_epsilon: f64,
}

impl BackendConfig {
    pub fn new(slot_capacity: usize, noise_epsilon: f64) -> Result<Self, HeError> {
        let config = BackendConfig {
            slot_capacity,
            noise_epsilon,
        };
        config.validate()?;
        Ok(config)
    }

    /// Smallest valid config holding at least `required` slots.
    pub fn for_slots(required: usize, noise_epsilon: f64) -> Result<Self, HeError> {
        Self::new(padded_capacity(required), noise_epsilon)
    }

    pub fn validate(&self) -> Result<(), HeError> {
        if self.slot_capacity < 2 || !self.slot_capacity.is_power_of_two() {
            return Err(HeError::InvalidConfig(format!(
                "slot_capacity must be a power of two >= 2, got {}",
                self.slot_capacity
            )));
        }
        if !(self.noise_epsilon >= 0.0 && self.noise_epsilon.is_finite()) {
            return Err(HeError::InvalidConfig(format!(
                "noise_epsilon must be finite and non-negative, got {}",
                self.noise_epsilon
            )));
        }
        Ok(())
    }
}

/// Next power of two that is at least `max(required, 2)`.
pub fn padded_capacity(required: usize) -> usize {
    required.max(2).next_power_of_two()
}

/// Plaintext vector of real slots.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotVector(Vec<f64>);

impl SlotVector {
    pub fn new(slots: Vec<f64>) -> Self {
        SlotVector(slots)
    }

    pub fn zeros(len: usize) -> Self {
        SlotVector(vec![0.0; len])
    }

    pub fn filled(len: usize, value: f64) -> Self {
        SlotVector(vec![value; len])
    }

    /// `value` at `index`, zero elsewhere.
    pub fn impulse(len: usize, index: usize, value: f64) -> Self {
        let mut slots = vec![0.0; len];
        slots[index] = value;
        SlotVector(slots)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

impl From<Vec<f64>> for SlotVector {
    fn from(slots: Vec<f64>) -> Self {
        SlotVector(slots)
    }
}

impl std::ops::Index<usize> for SlotVector {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeyId(pub u64);

impl fmt::Display for KeyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "key:{:016x}", self.0)
    }
}

/// Encryption capability. Freely copyable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    key_id: KeyId,
}

impl PublicKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }
}

/// Decryption capability, bound to the process it was generated for.
///
/// Deliberately not `Clone`: whoever owns the value is the keyholder.
#[derive(Debug, PartialEq, Eq)]
pub struct SecretKey {
    key_id: KeyId,
    holder: ProcessId,
}

impl SecretKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn holder(&self) -> ProcessId {
        self.holder
    }
}

/// Rotation capability. Freely copyable.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RotationKey {
    key_id: KeyId,
}

impl RotationKey {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }
}

#[derive(Debug)]
pub struct KeyMaterial {
    pub public: PublicKey,
    pub secret: SecretKey,
    pub rotation: Option<RotationKey>,
}

impl KeyMaterial {
    /// Assembles key material. Only backends should call this.
    pub fn assemble(key_id: KeyId, holder: ProcessId, with_rotation: bool) -> Self {
        KeyMaterial {
            public: PublicKey { key_id },
            secret: SecretKey { key_id, holder },
            rotation: with_rotation.then_some(RotationKey { key_id }),
        }
    }

    pub fn key_id(&self) -> KeyId {
        self.public.key_id
    }

    pub fn holder(&self) -> ProcessId {
        self.secret.holder
    }

    pub fn into_parts(self) -> (PublicKey, SecretKey) {
        (self.public, self.secret)
    }
}

/// Names one raw input: which process contributed it and in what role.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub process: ProcessId,
    pub label: String,
}

impl Provenance {
    pub fn new(process: ProcessId, label: impl Into<String>) -> Self {
        Provenance {
            process,
            label: label.into(),
        }
    }
}

/// Information-flow record carried by every ciphertext.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taint {
    tags: BTreeSet<Provenance>,
    prepared: bool,
}

impl Taint {
    fn single(tag: Provenance) -> Self {
        let mut tags = BTreeSet::new();
        tags.insert(tag);
        Taint {
            tags,
            prepared: false,
        }
    }

    fn union(a: &Taint, b: &Taint) -> Self {
        Taint {
            tags: a.tags.union(&b.tags).cloned().collect(),
            // a raw operand contaminates the result
            prepared: a.prepared && b.prepared,
        }
    }

    pub fn tags(&self) -> &BTreeSet<Provenance> {
        &self.tags
    }

    pub fn is_prepared(&self) -> bool {
        self.prepared
    }

    /// Processes whose raw inputs flowed into this ciphertext.
    pub fn contributors(&self) -> BTreeSet<ProcessId> {
        self.tags.iter().map(|t| t.process).collect()
    }

    pub fn contributors_with_label(&self, label: &str) -> BTreeSet<ProcessId> {
        self.tags
            .iter()
            .filter(|t| t.label == label)
            .map(|t| t.process)
            .collect()
    }

    pub fn is_superset_of(&self, other: &Taint) -> bool {
        self.tags.is_superset(&other.tags)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CiphertextId(pub u64);

impl fmt::Display for CiphertextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ct#{}", self.0)
    }
}

/// Opaque handle to an encrypted slot vector.
///
/// The payload lives in a backend-private type; protocol code can only see
/// the key it is under, its taint and its multiplicative depth.
#[derive(Clone)]
pub struct Ciphertext {
    id: CiphertextId,
    key_id: KeyId,
    taint: Arc<Taint>,
    depth: u32,
    ops: u64,
    body: Arc<dyn Any + Send + Sync>,
}

impl Ciphertext {
    /// Fresh encryption of a single tagged input.
    pub fn fresh(
        id: CiphertextId,
        key_id: KeyId,
        tag: Provenance,
        body: Arc<dyn Any + Send + Sync>,
    ) -> Self {
        Ciphertext {
            id,
            key_id,
            taint: Arc::new(Taint::single(tag)),
            depth: 0,
            ops: 1,
            body,
        }
    }

    /// Result of a two-operand operation; `multiplies` bumps the depth.
    pub fn derive_binary(
        id: CiphertextId,
        a: &Ciphertext,
        b: &Ciphertext,
        multiplies: bool,
        body: Arc<dyn Any + Send + Sync>,
    ) -> Self {
        let depth = a.depth.max(b.depth) + u32::from(multiplies);
        Ciphertext {
            id,
            key_id: a.key_id,
            taint: Arc::new(Taint::union(&a.taint, &b.taint)),
            depth,
            ops: a.ops + b.ops + 1,
            body,
        }
    }

    /// Result of a one-operand operation; taint carries over unchanged.
    pub fn derive_unary(
        id: CiphertextId,
        a: &Ciphertext,
        multiplies: bool,
        body: Arc<dyn Any + Send + Sync>,
    ) -> Self {
        Ciphertext {
            id,
            key_id: a.key_id,
            taint: Arc::clone(&a.taint),
            depth: a.depth + u32::from(multiplies),
            ops: a.ops + 1,
            body,
        }
    }

    fn into_prepared(mut self) -> Self {
        if !self.taint.prepared {
            let mut taint = (*self.taint).clone();
            taint.prepared = true;
            self.taint = Arc::new(taint);
        }
        self
    }

    pub fn id(&self) -> CiphertextId {
        self.id
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn taint(&self) -> &Taint {
        &self.taint
    }

    pub(crate) fn taint_arc(&self) -> Arc<Taint> {
        Arc::clone(&self.taint)
    }

    pub fn is_prepared(&self) -> bool {
        self.taint.prepared
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Operations in this ciphertext's derivation tree, counted with
    /// multiplicity (encryption counts as one).
    pub fn op_count(&self) -> u64 {
        self.ops
    }

    /// Backend-specific payload; `None` if `T` is not the backend's type.
    pub fn body<T: Any>(&self) -> Option<&T> {
        self.body.downcast_ref::<T>()
    }
}

impl PartialEq for Ciphertext {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.key_id == other.key_id && Arc::ptr_eq(&self.body, &other.body)
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Ciphertext")
            .field("id", &self.id)
            .field("key_id", &self.key_id)
            .field("contributors", &self.taint.contributors())
            .field("prepared", &self.taint.prepared)
            .field("depth", &self.depth)
            .finish_non_exhaustive()
    }
}

/// Per-slot error bound after the operations recorded in `ct`, given the
/// largest absolute exact slot value `magnitude` seen along the way.
pub fn noise_bound(ct: &Ciphertext, epsilon: f64, magnitude: f64) -> f64 {
    ct.op_count() as f64 * epsilon * (1.0 + magnitude)
}

/// The operation set a slot-vector HE scheme must provide.
pub trait HeBackend: Send + Sync {
    fn slot_capacity(&self) -> usize;

    fn keygen(&self, holder: ProcessId) -> Result<KeyMaterial, HeError>;

    fn encrypt(
        &self,
        pk: &PublicKey,
        plaintext: &SlotVector,
        tag: Provenance,
    ) -> Result<Ciphertext, HeError>;

    /// Fails with [`HeError::AccessDenied`] unless `sk` matches the
    /// ciphertext's key. Every attempt is logged.
    fn decrypt(&self, sk: &SecretKey, ct: &Ciphertext) -> Result<SlotVector, HeError>;

    fn add_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;

    fn mult_pt(&self, a: &Ciphertext, plaintext: &SlotVector) -> Result<Ciphertext, HeError>;

    /// Slot-wise product; relinearization is folded in.
    fn mult_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, HeError>;

    /// Cyclic left rotation by `amount` slots (negative rotates right).
    fn rotate(&self, a: &Ciphertext, amount: i64) -> Result<Ciphertext, HeError>;

    fn audit_view(&self, observer: ProcessId) -> Result<Vec<AuditEntry>, HeError>;
}

/// Sums every slot into every slot with `log2(capacity)` rotate-and-add
/// steps and marks the result prepared.
///
/// This is the only way to obtain a prepared ciphertext. Its output reveals
/// nothing but the slot total.
pub fn rotate_sum(backend: &dyn HeBackend, ct: &Ciphertext) -> Result<Ciphertext, HeError> {
    let steps = backend.slot_capacity().trailing_zeros();
    let mut acc = ct.clone();
    for i in (0..steps).rev() {
        let shifted = backend.rotate(&acc, 1i64 << i)?;
        acc = backend.add_ct(&acc, &shifted)?;
    }
    Ok(acc.into_prepared())
}
