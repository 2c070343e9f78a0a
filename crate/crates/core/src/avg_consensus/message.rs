use serde::Serialize;

use super::Counts;
use crate::he_slots::Ciphertext;
use crate::netsim::Wire;
use crate::process::ProcessId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageKind {
    /// Partial aggregate flooded between neighbours.
    Aggregate,
    /// Prepare output on its way to the keyholder.
    Prepared,
    /// Ballot ciphertext every voter has contributed to.
    Complete,
    /// Keyholder's broadcast of a decrypted outcome.
    Result,
}

/// Plaintext outcome published by a keyholder.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Announcement {
    pub value: Option<f64>,
    pub mean: Option<f64>,
    pub winner: Option<ProcessId>,
    /// Processes the next round runs over.
    pub members: Vec<ProcessId>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct ProtocolMessage {
    pub instance: String,
    pub kind: MessageKind,
    pub votes: Option<Ciphertext>,
    pub participating: Option<Ciphertext>,
    /// Second prepared ciphertext sent alongside `votes` (the encrypted mean
    /// on the encrypted-variance route).
    pub aux: Option<Ciphertext>,
    pub counts: Counts,
    pub announcement: Option<Announcement>,
    /// Cleartext copy of the sender's input. Only the leak mutation sets it.
    pub plain: Option<f64>,
}

impl ProtocolMessage {
    fn empty(instance: &str, kind: MessageKind) -> Self {
        ProtocolMessage {
            instance: instance.to_string(),
            kind,
            votes: None,
            participating: None,
            aux: None,
            counts: Counts::zeros(0),
            announcement: None,
            plain: None,
        }
    }

    pub fn aggregate(
        instance: &str,
        votes: Ciphertext,
        participating: Option<Ciphertext>,
        counts: Counts,
    ) -> Self {
        ProtocolMessage {
            votes: Some(votes),
            participating,
            counts,
            ..Self::empty(instance, MessageKind::Aggregate)
        }
    }

    pub fn prepared(
        instance: &str,
        votes: Ciphertext,
        participating: Option<Ciphertext>,
        aux: Option<Ciphertext>,
    ) -> Self {
        ProtocolMessage {
            votes: Some(votes),
            participating,
            aux,
            ..Self::empty(instance, MessageKind::Prepared)
        }
    }

    pub fn complete(instance: &str, ballots: Ciphertext, counts: Counts) -> Self {
        ProtocolMessage {
            votes: Some(ballots),
            counts,
            ..Self::empty(instance, MessageKind::Complete)
        }
    }

    pub fn result(instance: &str, announcement: Announcement) -> Self {
        ProtocolMessage {
            announcement: Some(announcement),
            ..Self::empty(instance, MessageKind::Result)
        }
    }
}

impl Wire for ProtocolMessage {
    fn ciphertexts(&self) -> Vec<&Ciphertext> {
        [&self.votes, &self.participating, &self.aux]
            .into_iter()
            .flatten()
            .collect()
    }

    fn plaintext_reals(&self) -> Vec<f64> {
        // announcements are protocol outputs and exempt
        self.plain.into_iter().collect()
    }

    fn plaintext_words(&self) -> usize {
        let announced = self
            .announcement
            .as_ref()
            .map_or(0, |a| 3 + a.members.len());
        self.counts.len() + announced + usize::from(self.plain.is_some())
    }

    fn instance(&self) -> &str {
        &self.instance
    }
}
