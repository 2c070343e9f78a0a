//! Three chained consensus rounds (mean, squared deviation, filtered mean)
//! that exclude values outside `μ ± cσ` without revealing who held them.

pub mod node;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::avg_consensus::{
    encrypt_impulse, finalize_trusted, init_with_ciphertexts, prepare, ConsensusError,
    ConsensusState, Counts, Membership,
};
use crate::he_slots::{Ciphertext, HeBackend, HeError, PublicKey, SecretKey, SlotVector};
use crate::process::ProcessId;

/// How far below zero a noisy variance may fall before it is an error.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-6;

pub const ROUND1_LABEL: &str = "v";
pub const ROUND2_LABEL: &str = "dev";
pub const ROUND2_ENCRYPTED_LABEL: &str = "sq";
pub const ROUND3_LABEL: &str = "v3";
pub const PARTICIPATING_LABEL: &str = "participating";

pub fn instance(round: u8) -> String {
    format!("out/r{round}")
}

pub fn round_of(instance: &str) -> Option<u8> {
    instance.strip_prefix("out/r")?.parse().ok()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OutlierError {
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error("c must be positive and finite, got {0}")]
    InvalidC(f64),
    #[error("variance {0} is materially negative")]
    NegativeVariance(f64),
    #[error("every value is an outlier; the filtered mean is undefined")]
    AllOutliers,
    #[error("no correct processes remain")]
    EmptyCorrectSet,
}

impl From<HeError> for OutlierError {
    fn from(e: HeError) -> Self {
        OutlierError::Consensus(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutlierParams {
    c: f64,
}

impl OutlierParams {
    pub fn new(c: f64) -> Result<Self, OutlierError> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(OutlierError::InvalidC(c));
        }
        Ok(OutlierParams { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceRoute {
    /// The keyholder decrypts the mean after round 1 and broadcasts it.
    #[default]
    Decrypt,
    /// Round 2 runs on the encrypted mean; nothing is decrypted in between.
    Encrypted,
}

/// Per-process progress through the three rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct OutlierState {
    pub round: u8,
    pub mu: Option<f64>,
    pub variance: Option<f64>,
    pub sigma: Option<f64>,
    pub outlier: Option<bool>,
    pub members: Membership,
}

impl OutlierState {
    pub fn new(n: usize) -> Self {
        OutlierState {
            round: 1,
            mu: None,
            variance: None,
            sigma: None,
            outlier: None,
            members: Membership::all(n),
        }
    }
}

pub fn round2_input(v: f64, mu: f64) -> f64 {
    (v - mu) * (v - mu)
}

/// Standard deviation from the round-2 average, clamping noise below zero.
pub fn sigma_from_round2(variance_avg: f64) -> Result<f64, OutlierError> {
    if variance_avg < -NEGATIVE_VARIANCE_TOLERANCE || variance_avg.is_nan() {
        return Err(OutlierError::NegativeVariance(variance_avg));
    }
    Ok(variance_avg.max(0.0).sqrt())
}

/// Strict: values exactly on `μ ± cσ` are kept.
pub fn is_outlier(v: f64, mu: f64, sigma: f64, c: f64) -> bool {
    (v - mu).abs() > c * sigma
}

/// Round-3 state: the value and a participation indicator, both zeroed for
/// an outlier, so neither reveals the outlier status once aggregated.
pub fn init_round3(
    backend: &dyn HeBackend,
    pk: &PublicKey,
    id: ProcessId,
    v: f64,
    outlier: bool,
    members: Membership,
) -> Result<ConsensusState, OutlierError> {
    let (vote, part) = if outlier { (0.0, 0.0) } else { (v, 1.0) };
    let votes = encrypt_impulse(backend, pk, id, vote, ROUND3_LABEL)?;
    let participating = encrypt_impulse(backend, pk, id, part, PARTICIPATING_LABEL)?;
    Ok(init_with_ciphertexts(
        id,
        &instance(3),
        votes,
        Some(participating),
        backend.slot_capacity(),
        members,
    ))
}

/// Outcome of the filtered mean.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FilteredMean {
    pub value: f64,
    pub participants: usize,
}

/// Ratio of the prepared round-3 vote average to the participation average.
pub fn finalize_outlier(
    backend: &dyn HeBackend,
    sk: &SecretKey,
    prepared_votes: &Ciphertext,
    prepared_participating: &Ciphertext,
    n: usize,
) -> Result<f64, OutlierError> {
    finalize_filtered(backend, sk, prepared_votes, prepared_participating, n).map(|f| f.value)
}

pub fn finalize_filtered(
    backend: &dyn HeBackend,
    sk: &SecretKey,
    prepared_votes: &Ciphertext,
    prepared_participating: &Ciphertext,
    n: usize,
) -> Result<FilteredMean, OutlierError> {
    let votes_avg = finalize_trusted(backend, sk, prepared_votes, n)?;
    let part_avg = finalize_trusted(backend, sk, prepared_participating, n)?;
    let participants = (part_avg * n as f64).round().max(0.0) as usize;
    if participants == 0 {
        return Err(OutlierError::AllOutliers);
    }
    // the participant count is an integer; dividing by it exactly keeps the
    // no-outlier case bit-identical to the round-1 mean
    let value = if participants == n {
        votes_avg
    } else {
        votes_avg * n as f64 / participants as f64
    };
    Ok(FilteredMean {
        value,
        participants,
    })
}

/// `Enc((v² − 2·v·μ) · e_id)` from the encrypted mean `μ`.
pub fn variance_contribution(
    backend: &dyn HeBackend,
    pk: &PublicKey,
    id: ProcessId,
    v: f64,
    mean_ct: &Ciphertext,
) -> Result<Ciphertext, OutlierError> {
    let square = encrypt_impulse(backend, pk, id, v * v, ROUND2_ENCRYPTED_LABEL)?;
    let cap = backend.slot_capacity();
    let cross = backend.mult_pt(mean_ct, &SlotVector::impulse(cap, id.0, -2.0 * v))?;
    Ok(backend.add_ct(&square, &cross)?)
}

/// Adds `μ²` to the prepared average of the contributions.
pub fn complete_variance(
    backend: &dyn HeBackend,
    prepared: &Ciphertext,
    mean_ct: &Ciphertext,
) -> Result<Ciphertext, OutlierError> {
    let mean_sq = backend.mult_ct(mean_ct, mean_ct)?;
    Ok(backend.add_ct(prepared, &mean_sq)?)
}

/// Encrypted variance over `values` given the prepared mean, folding each
/// contribution exactly once. The networked route does the same fold via
/// flooding.
pub fn encrypted_variance(
    backend: &dyn HeBackend,
    pk: &PublicKey,
    mean_ct: &Ciphertext,
    values: &[(ProcessId, f64)],
) -> Result<Ciphertext, OutlierError> {
    let members = Membership::new(values.iter().map(|(p, _)| *p))?;
    let cap = backend.slot_capacity();
    let mut acc: Option<Ciphertext> = None;
    let mut counts = Counts::zeros(cap);
    for &(id, v) in values {
        let c = variance_contribution(backend, pk, id, v, mean_ct)?;
        acc = Some(match acc {
            Some(a) => backend.add_ct(&a, &c)?,
            None => c,
        });
        counts.merge(&Counts::impulse(cap, id))?;
    }
    let acc = acc.ok_or(OutlierError::EmptyCorrectSet)?;
    let prepared = prepare(backend, &acc, &counts, &members)?;
    complete_variance(backend, &prepared, mean_ct)
}

/// Restricts the remaining rounds to the processes still correct.
pub fn adjust_n_on_fault(
    state: &OutlierState,
    correct: impl IntoIterator<Item = ProcessId>,
) -> Result<OutlierState, OutlierError> {
    let members = Membership::new(correct).map_err(|_| OutlierError::EmptyCorrectSet)?;
    Ok(OutlierState {
        members,
        ..state.clone()
    })
}
