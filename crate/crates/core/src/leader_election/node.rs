//! Simulator nodes for ballot casting.
//!
//! Each origin starts one ballot ciphertext that travels as a depth-first
//! token: every process adds its ballot the first time the token reaches
//! it, then passes it to its smallest neighbour that has not yet voted on
//! it, or back along the edge it first arrived on. Once every process has
//! contributed the token goes to the keyholder.

use std::collections::BTreeMap;

use serde::Serialize;

use super::{elect_winner, make_ballot_vector, tally, Ballot, ElectionResult, Tally, BALLOT_LABEL};
use crate::avg_consensus::{Announcement, Counts, MessageKind, ProtocolMessage};
use crate::he_slots::{Ciphertext, Provenance, PublicKey, SecretKey};
use crate::netsim::{Ctx, Decision, Node};
use crate::process::ProcessId;

type Context<'a> = Ctx<'a, ProtocolMessage>;

pub struct ElectionProcess {
    id: ProcessId,
    n: usize,
    ballot: Ballot,
    pk: PublicKey,
    keyholder: ProcessId,
    origin: bool,
    /// Edge each lineage first arrived on.
    parents: BTreeMap<String, ProcessId>,
}

impl ElectionProcess {
    pub fn new(
        id: ProcessId,
        n: usize,
        ballot: Ballot,
        pk: PublicKey,
        keyholder: ProcessId,
        origin: bool,
    ) -> Self {
        ElectionProcess {
            id,
            n,
            ballot,
            pk,
            keyholder,
            origin,
            parents: BTreeMap::new(),
        }
    }

    fn encrypt_ballot(&self, ctx: &mut Context<'_>) -> Option<Ciphertext> {
        let backend = ctx.backend();
        let built = make_ballot_vector(&self.ballot, self.id, self.n, backend.slot_capacity())
            .map_err(|e| e.to_string())
            .and_then(|v| {
                backend
                    .encrypt(&self.pk, &v, Provenance::new(self.id, BALLOT_LABEL))
                    .map_err(|e| e.to_string())
            });
        match built {
            Ok(ct) => Some(ct),
            Err(e) => {
                ctx.error(e);
                None
            }
        }
    }

    fn pass_on(&self, ctx: &mut Context<'_>, instance: &str, ct: Ciphertext, counts: Counts) {
        if (0..self.n).all(|i| counts.get(i) == 1) {
            ctx.send(
                self.keyholder,
                ProtocolMessage::complete(instance, ct, counts),
            );
            return;
        }
        let next = ctx
            .neighbors()
            .iter()
            .copied()
            .find(|p| p.0 < self.n && counts.get(p.0) == 0)
            .or_else(|| self.parents.get(instance).copied());
        match next {
            Some(p) => ctx.send(p, ProtocolMessage::aggregate(instance, ct, None, counts)),
            None => ctx.error(format!("{instance} cannot reach the remaining voters")),
        }
    }
}

impl Node for ElectionProcess {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Context<'_>) {
        if !self.origin {
            return;
        }
        let inst = super::instance(self.id);
        if let Some(ct) = self.encrypt_ballot(ctx) {
            let counts = Counts::impulse(ctx.backend().slot_capacity(), self.id);
            self.pass_on(ctx, &inst, ct, counts);
        }
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, from: ProcessId, msg: ProtocolMessage) {
        match msg.kind {
            MessageKind::Aggregate => {
                let Some(mut ct) = msg.votes else {
                    return ctx.error("ballot token without ciphertext");
                };
                let mut counts = msg.counts;
                if counts.get(self.id.0) == 0 {
                    self.parents.entry(msg.instance.clone()).or_insert(from);
                    let Some(mine) = self.encrypt_ballot(ctx) else {
                        return;
                    };
                    match ctx.backend().add_ct(&ct, &mine) {
                        Ok(sum) => ct = sum,
                        Err(e) => return ctx.error(e.to_string()),
                    }
                    counts.set(self.id.0, 1);
                    ctx.progress();
                }
                self.pass_on(ctx, &msg.instance, ct, counts);
            }
            MessageKind::Result => match msg.announcement.and_then(|a| a.winner) {
                Some(w) => ctx.decide(Decision::Leader(w)),
                None => ctx.error("election result without winner"),
            },
            _ => ctx.error("unexpected message kind"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ElectionSummary {
    pub result: Option<ElectionResult>,
    pub tally: Option<Tally>,
    pub complete_received: usize,
    pub disagreements: usize,
}

pub struct ElectionKeyholder {
    sk: SecretKey,
    n: usize,
    summary: ElectionSummary,
}

impl ElectionKeyholder {
    pub fn new(sk: SecretKey, n: usize) -> Self {
        ElectionKeyholder {
            sk,
            n,
            summary: ElectionSummary::default(),
        }
    }

    pub fn summary(&self) -> &ElectionSummary {
        &self.summary
    }
}

impl Node for ElectionKeyholder {
    type Msg = ProtocolMessage;

    fn start(&mut self, _ctx: &mut Context<'_>) {}

    fn on_message(&mut self, ctx: &mut Context<'_>, _from: ProcessId, msg: ProtocolMessage) {
        if msg.kind != MessageKind::Complete {
            return ctx.error("keyholder only accepts complete ballots");
        }
        if !(0..self.n).all(|i| msg.counts.get(i) == 1) {
            return ctx.error(format!("{} is not complete", msg.instance));
        }
        let Some(ct) = &msg.votes else { return };
        let t = match tally(ctx.backend(), &self.sk, ct, self.n) {
            Ok(t) => t,
            Err(e) => return ctx.error(e.to_string()),
        };
        self.summary.complete_received += 1;
        ctx.progress();
        if let Some(first) = &self.summary.tally {
            if *first != t {
                self.summary.disagreements += 1;
                ctx.error(format!("{} disagrees with the first tally", msg.instance));
            }
            return;
        }
        match elect_winner(&t) {
            Ok(result) => {
                let ann = Announcement {
                    winner: Some(result.winner),
                    members: (0..self.n).map(ProcessId).collect(),
                    ..Announcement::default()
                };
                for p in 0..self.n {
                    ctx.send(
                        ProcessId(p),
                        ProtocolMessage::result(&msg.instance, ann.clone()),
                    );
                }
                self.summary.result = Some(result);
            }
            Err(e) => ctx.error(e.to_string()),
        }
        self.summary.tally = Some(t);
    }
}

pub enum ElectionNode {
    Process(ElectionProcess),
    Keyholder(ElectionKeyholder),
}

impl Node for ElectionNode {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Context<'_>) {
        match self {
            ElectionNode::Process(p) => p.start(ctx),
            ElectionNode::Keyholder(k) => k.start(ctx),
        }
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, from: ProcessId, msg: ProtocolMessage) {
        match self {
            ElectionNode::Process(p) => p.on_message(ctx, from, msg),
            ElectionNode::Keyholder(k) => k.on_message(ctx, from, msg),
        }
    }
}
