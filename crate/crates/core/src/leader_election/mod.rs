//! Ballot casting into one encrypted secondary-vote matrix, and shallow
//! ranked elimination over the decrypted tally.
//!
//! Slot layout for `n` processes: `p·n + s` counts ballots with primary `p`
//! and secondary `s`; `n² + p` counts ballots for `p` with no secondary.

pub mod node;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::he_slots::{padded_capacity, Ciphertext, HeBackend, HeError, SecretKey, SlotVector};
use crate::process::ProcessId;

/// Largest distance from an integer a decrypted slot may have.
pub const INTEGRALITY_TOLERANCE: f64 = 0.01;

pub const BALLOT_LABEL: &str = "ballot";

pub fn instance(origin: ProcessId) -> String {
    format!("elect/{origin}")
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ElectionError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("ballot of {voter} names the same candidate {candidate} twice")]
    SameCandidate {
        voter: ProcessId,
        candidate: ProcessId,
    },
    #[error("candidate {candidate} out of range for n = {n}")]
    OutOfRange { candidate: ProcessId, n: usize },
    #[error("slot {index} holds {value}, which is not an integer count")]
    CorruptedTally { index: usize, value: f64 },
    #[error("slot vector holds {got} slots, layout needs {need}")]
    ShortTally { need: usize, got: usize },
    #[error("election needs at least one voter")]
    NoVoters,
    #[error("tie-break over an empty set")]
    EmptyTie,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ballot {
    pub primary: ProcessId,
    #[serde(default)]
    pub secondary: Option<ProcessId>,
}

impl Ballot {
    pub fn new(primary: usize, secondary: Option<usize>) -> Self {
        Ballot {
            primary: ProcessId(primary),
            secondary: secondary.map(ProcessId),
        }
    }

    pub fn validate(&self, voter: ProcessId, n: usize) -> Result<(), ElectionError> {
        for c in std::iter::once(self.primary).chain(self.secondary) {
            if c.0 >= n {
                return Err(ElectionError::OutOfRange { candidate: c, n });
            }
        }
        if self.secondary == Some(self.primary) {
            return Err(ElectionError::SameCandidate {
                voter,
                candidate: self.primary,
            });
        }
        Ok(())
    }

    /// Flat slot this ballot adds one to.
    pub fn slot(&self, n: usize) -> usize {
        match self.secondary {
            Some(s) => self.primary.0 * n + s.0,
            None => n * n + self.primary.0,
        }
    }
}

/// Slots the layout occupies before padding.
pub fn layout_len(n: usize) -> usize {
    n * n + n
}

pub fn slot_capacity(n: usize) -> usize {
    padded_capacity(layout_len(n))
}

/// One-hot vector for `b`, padded to `capacity` slots.
pub fn make_ballot_vector(
    b: &Ballot,
    voter: ProcessId,
    n: usize,
    capacity: usize,
) -> Result<SlotVector, ElectionError> {
    b.validate(voter, n)?;
    if capacity < layout_len(n) {
        return Err(ElectionError::ShortTally {
            need: layout_len(n),
            got: capacity,
        });
    }
    Ok(SlotVector::impulse(capacity, b.slot(n), 1.0))
}

/// Decrypted ballot aggregate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub n: usize,
    /// `matrix[p][s]`: ballots with primary `p`, secondary `s`.
    pub matrix: Vec<Vec<u64>>,
    pub primary_only: Vec<u64>,
}

impl Tally {
    /// Builds a tally directly from ballots (no encryption).
    pub fn from_ballots(n: usize, ballots: &[Ballot]) -> Self {
        let mut matrix = vec![vec![0; n]; n];
        let mut primary_only = vec![0; n];
        for b in ballots {
            match b.secondary {
                Some(s) => matrix[b.primary.0][s.0] += 1,
                None => primary_only[b.primary.0] += 1,
            }
        }
        Tally {
            n,
            matrix,
            primary_only,
        }
    }

    /// Rounds decrypted slots, rejecting anything far from an integer.
    pub fn from_slots(slots: &[f64], n: usize) -> Result<Self, ElectionError> {
        if slots.len() < layout_len(n) {
            return Err(ElectionError::ShortTally {
                need: layout_len(n),
                got: slots.len(),
            });
        }
        let mut counts = Vec::with_capacity(layout_len(n));
        for (index, &value) in slots.iter().enumerate().take(layout_len(n)) {
            let r = value.round();
            if (value - r).abs() > INTEGRALITY_TOLERANCE || r < 0.0 {
                return Err(ElectionError::CorruptedTally { index, value });
            }
            counts.push(r as u64);
        }
        let matrix = counts[..n * n]
            .chunks(n.max(1))
            .map(<[u64]>::to_vec)
            .collect();
        Ok(Tally {
            n,
            matrix: if n == 0 { Vec::new() } else { matrix },
            primary_only: counts[n * n..].to_vec(),
        })
    }

    /// First-choice totals per candidate.
    pub fn primary(&self) -> Vec<u64> {
        (0..self.n)
            .map(|p| self.matrix[p].iter().sum::<u64>() + self.primary_only[p])
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.primary().iter().sum()
    }
}

/// Decrypts a complete ballot ciphertext into a tally.
pub fn tally(
    backend: &dyn HeBackend,
    sk: &SecretKey,
    complete: &Ciphertext,
    n: usize,
) -> Result<Tally, ElectionError> {
    let slots = backend.decrypt(sk, complete)?;
    Tally::from_slots(slots.as_slice(), n)
}

/// Picks the `(v_tie mod k)`-th smallest id, so the choice depends only on
/// sorted position and never favours large or small ids as such.
pub fn tie_break(tied: &BTreeSet<ProcessId>, v_tie: u64) -> Result<ProcessId, ElectionError> {
    let k = tied.len() as u64;
    if k == 0 {
        return Err(ElectionError::EmptyTie);
    }
    let r = (v_tie % k) as usize;
    Ok(*tied.iter().nth(r).expect("r < k"))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ElectedBy {
    Majority,
    LastStanding,
    TieBreak { tied: Vec<ProcessId>, v_tie: u64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundOutcome {
    Elected {
        winner: ProcessId,
        by: ElectedBy,
    },
    Eliminated {
        candidate: ProcessId,
        /// Set when several candidates shared the fewest votes.
        tie: Option<Vec<ProcessId>>,
        transferred: u64,
        exhausted: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ElectionRound {
    /// Current votes of every live candidate.
    pub tallies: Vec<(ProcessId, u64)>,
    pub exhausted: u64,
    pub outcome: RoundOutcome,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ElectionResult {
    pub winner: ProcessId,
    pub rounds: Vec<ElectionRound>,
    pub exhausted: u64,
}

struct Group {
    secondary: Option<ProcessId>,
    count: u64,
    holder: Option<ProcessId>,
    transferred: bool,
}

/// Shallow ranked elimination: each ballot moves to its secondary at most
/// once, after which it exhausts.
pub fn elect_winner(t: &Tally) -> Result<ElectionResult, ElectionError> {
    let n = t.n;
    if n == 0 || t.total() == 0 {
        return Err(ElectionError::NoVoters);
    }
    let mut groups = Vec::new();
    for p in 0..n {
        let primary = ProcessId(p);
        for s in 0..n {
            if t.matrix[p][s] > 0 {
                groups.push(Group {
                    secondary: Some(ProcessId(s)),
                    count: t.matrix[p][s],
                    holder: Some(primary),
                    transferred: false,
                });
            }
        }
        if t.primary_only[p] > 0 {
            groups.push(Group {
                secondary: None,
                count: t.primary_only[p],
                holder: Some(primary),
                transferred: false,
            });
        }
    }
    let total = t.total();
    let mut live: BTreeSet<ProcessId> = (0..n).map(ProcessId).collect();
    let mut rounds = Vec::new();
    loop {
        let votes = |c: ProcessId| -> u64 {
            groups
                .iter()
                .filter(|g| g.holder == Some(c))
                .map(|g| g.count)
                .sum()
        };
        let tallies: Vec<_> = live.iter().map(|&c| (c, votes(c))).collect();
        let active: u64 = tallies.iter().map(|(_, v)| v).sum();
        let exhausted = total - active;
        // ties are only broken once ranked transfers have had a chance
        let after_elimination = !rounds.is_empty();
        let mut record = |outcome| {
            rounds.push(ElectionRound {
                tallies: tallies.clone(),
                exhausted,
                outcome,
            })
        };
        if let Some(&(c, _)) = tallies.iter().find(|(_, v)| 2 * v > active) {
            record(RoundOutcome::Elected {
                winner: c,
                by: ElectedBy::Majority,
            });
            return Ok(ElectionResult {
                winner: c,
                rounds,
                exhausted,
            });
        }
        if live.len() == 1 {
            let c = tallies[0].0;
            record(RoundOutcome::Elected {
                winner: c,
                by: ElectedBy::LastStanding,
            });
            return Ok(ElectionResult {
                winner: c,
                rounds,
                exhausted,
            });
        }
        let fewest = tallies
            .iter()
            .map(|(_, v)| *v)
            .min()
            .expect("live is non-empty");
        let tied: BTreeSet<_> = tallies
            .iter()
            .filter(|(_, v)| *v == fewest)
            .map(|(c, _)| *c)
            .collect();
        if tied.len() == live.len() && after_elimination {
            let winner = tie_break(&tied, fewest)?;
            record(RoundOutcome::Elected {
                winner,
                by: ElectedBy::TieBreak {
                    tied: tied.into_iter().collect(),
                    v_tie: fewest,
                },
            });
            return Ok(ElectionResult {
                winner,
                rounds,
                exhausted,
            });
        }
        let out = tie_break(&tied, fewest)?;
        live.remove(&out);
        let (mut moved, mut dead) = (0, 0);
        for g in groups.iter_mut().filter(|g| g.holder == Some(out)) {
            match g.secondary {
                Some(s) if !g.transferred && live.contains(&s) => {
                    g.holder = Some(s);
                    g.transferred = true;
                    moved += g.count;
                }
                _ => {
                    g.holder = None;
                    dead += g.count;
                }
            }
        }
        record(RoundOutcome::Eliminated {
            candidate: out,
            tie: (tied.len() > 1).then(|| tied.into_iter().collect()),
            transferred: moved,
            exhausted: dead,
        });
    }
}
