//! Flooding aggregation of encrypted votes with plaintext multiplicity
//! counts, the Prepare step, and trusted-party read-out.

mod message;
pub mod node;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he_slots::{
    rotate_sum, Ciphertext, HeBackend, HeError, Provenance, PublicKey, SecretKey, SlotVector,
};
use crate::process::ProcessId;

pub use message::{Announcement, MessageKind, ProtocolMessage};

/// Relative tolerance for the "all leading slots agree" check after Prepare.
pub const SLOT_AGREEMENT_TOLERANCE: f64 = 1e-6;

pub const TRUSTED_INSTANCE: &str = "avg/trusted";

pub fn untrusted_instance(initiator: ProcessId) -> String {
    format!("avg/{initiator}")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConsensusError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("input value {0} is not finite")]
    NonFinite(f64),
    #[error("slot capacity {capacity} cannot hold process {id}")]
    CapacityTooSmall { capacity: usize, id: ProcessId },
    #[error("count for process {0} is zero")]
    ZeroCount(ProcessId),
    #[error("refusing to decrypt a ciphertext that has not been prepared")]
    Unprepared,
    #[error("prepared slots disagree: slot {index} is {got}, slot 0 is {expected}")]
    SlotsDisagree {
        index: usize,
        expected: f64,
        got: f64,
    },
    #[error("message for instance `{got}` delivered to instance `{expected}`")]
    InstanceMismatch { expected: String, got: String },
    #[error("membership is empty")]
    EmptyMembership,
    #[error("count for process {0} overflowed")]
    CountOverflow(ProcessId),
    #[error("counts vector has length {got}, expected {expected}")]
    CountsLength { expected: usize, got: usize },
}

/// Plaintext multiplicities: how many times each process's input has been
/// folded into the accompanying aggregate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Counts(Vec<u64>);

impl Counts {
    pub fn zeros(capacity: usize) -> Self {
        Counts(vec![0; capacity])
    }

    pub fn impulse(capacity: usize, id: ProcessId) -> Self {
        let mut c = Self::zeros(capacity);
        c.0[id.0] = 1;
        c
    }

    pub fn from_vec(v: Vec<u64>) -> Self {
        Counts(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> u64 {
        self.0.get(i).copied().unwrap_or(0)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, _)| i)
            .collect()
    }

    /// Every index that is nonzero here is nonzero in `other`.
    pub fn support_within(&self, other: &Counts) -> bool {
        self.0
            .iter()
            .enumerate()
            .all(|(i, &c)| c == 0 || other.get(i) > 0)
    }

    pub fn merge(&mut self, other: &Counts) -> Result<(), ConsensusError> {
        for (i, (a, b)) in self.0.iter_mut().zip(&other.0).enumerate() {
            *a = a
                .checked_add(*b)
                .ok_or(ConsensusError::CountOverflow(ProcessId(i)))?;
        }
        Ok(())
    }

    pub fn covers(&self, members: &Membership) -> bool {
        members.iter().all(|p| self.get(p.0) > 0)
    }

    pub fn set(&mut self, i: usize, value: u64) {
        self.0[i] = value;
    }
}

/// The processes whose inputs a consensus instance averages over.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Membership(BTreeSet<ProcessId>);

impl Membership {
    pub fn new(members: impl IntoIterator<Item = ProcessId>) -> Result<Self, ConsensusError> {
        let set: BTreeSet<_> = members.into_iter().collect();
        if set.is_empty() {
            return Err(ConsensusError::EmptyMembership);
        }
        Ok(Membership(set))
    }

    pub fn all(n: usize) -> Self {
        Membership((0..n).map(ProcessId).collect())
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn contains(&self, p: ProcessId) -> bool {
        self.0.contains(&p)
    }

    pub fn iter(&self) -> impl Iterator<Item = ProcessId> + '_ {
        self.0.iter().copied()
    }

    pub fn to_vec(&self) -> Vec<ProcessId> {
        self.0.iter().copied().collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Active,
    Decided,
}

/// Output of the Prepare step.
#[derive(Clone, Debug)]
pub struct PreparedAggregate {
    pub votes: Ciphertext,
    pub participating: Option<Ciphertext>,
}

#[derive(Clone, Debug)]
pub enum Step {
    /// Nothing new; no rebroadcast.
    Ignored,
    /// State grew and must be rebroadcast. Carries the Prepare output when
    /// this merge completed the instance.
    Merged(Option<PreparedAggregate>),
}

/// One process's view of one consensus instance.
#[derive(Clone, Debug)]
pub struct ConsensusState {
    pub id: ProcessId,
    pub instance: String,
    votes: Ciphertext,
    participating: Option<Ciphertext>,
    counts: Counts,
    phase: Phase,
    members: Membership,
}

impl ConsensusState {
    pub fn votes(&self) -> &Ciphertext {
        &self.votes
    }

    pub fn participating(&self) -> Option<&Ciphertext> {
        self.participating.as_ref()
    }

    pub fn counts(&self) -> &Counts {
        &self.counts
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn members(&self) -> &Membership {
        &self.members
    }

    /// Aggregate message carrying the current state.
    pub fn message(&self) -> ProtocolMessage {
        ProtocolMessage::aggregate(
            &self.instance,
            self.votes.clone(),
            self.participating.clone(),
            self.counts.clone(),
        )
    }

    /// Whether counts already cover every member.
    pub fn complete(&self) -> bool {
        self.counts.covers(&self.members)
    }

    /// Prepare output, if counts cover every member.
    pub fn prepare(&self, backend: &dyn HeBackend) -> Result<PreparedAggregate, ConsensusError> {
        let votes = prepare(backend, &self.votes, &self.counts, &self.members)?;
        let participating = match &self.participating {
            Some(p) => Some(prepare(backend, p, &self.counts, &self.members)?),
            None => None,
        };
        Ok(PreparedAggregate {
            votes,
            participating,
        })
    }

    /// Marks the instance decided and returns its Prepare output.
    fn decide(&mut self, backend: &dyn HeBackend) -> Result<PreparedAggregate, ConsensusError> {
        let prepared = self.prepare(backend)?;
        self.phase = Phase::Decided;
        Ok(prepared)
    }

    /// Folds an incoming aggregate into this state.
    pub fn on_receive(
        &mut self,
        backend: &dyn HeBackend,
        msg: &ProtocolMessage,
    ) -> Result<Step, ConsensusError> {
        if msg.instance != self.instance {
            return Err(ConsensusError::InstanceMismatch {
                expected: self.instance.clone(),
                got: msg.instance.clone(),
            });
        }
        if msg.counts.len() != self.counts.len() {
            return Err(ConsensusError::CountsLength {
                expected: self.counts.len(),
                got: msg.counts.len(),
            });
        }
        if self.phase == Phase::Decided || msg.counts.support_within(&self.counts) {
            return Ok(Step::Ignored);
        }
        let Some(votes) = &msg.votes else {
            return Ok(Step::Ignored);
        };
        self.votes = backend.add_ct(&self.votes, votes)?;
        if let (Some(mine), Some(theirs)) = (&self.participating, &msg.participating) {
            self.participating = Some(backend.add_ct(mine, theirs)?);
        }
        self.counts.merge(&msg.counts)?;
        if self.complete() {
            return Ok(Step::Merged(Some(self.decide(backend)?)));
        }
        Ok(Step::Merged(None))
    }

    /// Decides immediately if this process is the only member.
    pub fn try_decide_alone(
        &mut self,
        backend: &dyn HeBackend,
    ) -> Result<Option<PreparedAggregate>, ConsensusError> {
        if self.phase == Phase::Active && self.complete() {
            return self.decide(backend).map(Some);
        }
        Ok(None)
    }
}

/// Initial state of a process: `v` in its own slot, count one.
pub fn init_consensus(
    backend: &dyn HeBackend,
    pk: &PublicKey,
    id: ProcessId,
    v: f64,
    label: &str,
    instance: &str,
    members: Membership,
) -> Result<ConsensusState, ConsensusError> {
    let votes = encrypt_impulse(backend, pk, id, v, label)?;
    Ok(ConsensusState {
        id,
        instance: instance.to_string(),
        votes,
        participating: None,
        counts: Counts::impulse(backend.slot_capacity(), id),
        phase: Phase::Active,
        members,
    })
}

/// Builds a state around an already encrypted own contribution.
pub fn init_with_ciphertexts(
    id: ProcessId,
    instance: &str,
    votes: Ciphertext,
    participating: Option<Ciphertext>,
    capacity: usize,
    members: Membership,
) -> ConsensusState {
    ConsensusState {
        id,
        instance: instance.to_string(),
        votes,
        participating,
        counts: Counts::impulse(capacity, id),
        phase: Phase::Active,
        members,
    }
}

/// `Enc(v · e_id)` tagged with `(id, label)`.
pub fn encrypt_impulse(
    backend: &dyn HeBackend,
    pk: &PublicKey,
    id: ProcessId,
    v: f64,
    label: &str,
) -> Result<Ciphertext, ConsensusError> {
    if !v.is_finite() {
        return Err(ConsensusError::NonFinite(v));
    }
    let cap = backend.slot_capacity();
    if id.0 >= cap {
        return Err(ConsensusError::CapacityTooSmall { capacity: cap, id });
    }
    let plain = SlotVector::impulse(cap, id.0, v);
    Ok(backend.encrypt(pk, &plain, Provenance::new(id, label))?)
}

/// Divides out duplicate counts, scales by `1/n` and sums all slots, so
/// every slot holds the average over `members`.
pub fn prepare(
    backend: &dyn HeBackend,
    votes: &Ciphertext,
    counts: &Counts,
    members: &Membership,
) -> Result<Ciphertext, ConsensusError> {
    let cap = backend.slot_capacity();
    let n = members.n() as f64;
    let mut weights = vec![0.0; cap];
    for p in members.iter() {
        let c = counts.get(p.0);
        if c == 0 {
            return Err(ConsensusError::ZeroCount(p));
        }
        weights[p.0] = 1.0 / (c as f64 * n);
    }
    let scaled = backend.mult_pt(votes, &SlotVector::new(weights))?;
    Ok(rotate_sum(backend, &scaled)?)
}

/// Decrypts a prepared aggregate and returns its common slot value.
pub fn finalize_trusted(
    backend: &dyn HeBackend,
    sk: &SecretKey,
    prepared: &Ciphertext,
    n: usize,
) -> Result<f64, ConsensusError> {
    if !prepared.is_prepared() {
        return Err(ConsensusError::Unprepared);
    }
    let slots = backend.decrypt(sk, prepared)?;
    let expected = slots[0];
    let scale = expected.abs().max(1.0);
    for (index, &got) in slots.as_slice().iter().enumerate().take(n.max(1)) {
        if (got - expected).abs() > SLOT_AGREEMENT_TOLERANCE * scale {
            return Err(ConsensusError::SlotsDisagree {
                index,
                expected,
                got,
            });
        }
    }
    Ok(expected)
}
