//! Simulator nodes for the three-round outlier-resistant protocol.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{
    adjust_n_on_fault, complete_variance, finalize_filtered, init_round3, instance, is_outlier,
    round2_input, round_of, sigma_from_round2, variance_contribution, OutlierError, OutlierState,
    VarianceRoute, ROUND1_LABEL, ROUND2_LABEL,
};
use crate::avg_consensus::{
    finalize_trusted, init_consensus, init_with_ciphertexts, Announcement, ConsensusState,
    Membership, MessageKind, PreparedAggregate, ProtocolMessage, Step,
};
use crate::he_slots::{Ciphertext, PublicKey, SecretKey};
use crate::netsim::{Ctx, Decision, Node};
use crate::process::ProcessId;

type Context<'a> = Ctx<'a, ProtocolMessage>;

pub struct OutlierProcess {
    id: ProcessId,
    v: f64,
    c: f64,
    route: VarianceRoute,
    pk: PublicKey,
    keyholder: ProcessId,
    leak_plaintext: bool,
    state: OutlierState,
    rounds: BTreeMap<u8, ConsensusState>,
    pending: BTreeMap<u8, Vec<ProtocolMessage>>,
    dirty: BTreeSet<u8>,
    mean_ct: Option<Ciphertext>,
}

impl OutlierProcess {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: ProcessId,
        v: f64,
        n: usize,
        c: f64,
        route: VarianceRoute,
        pk: PublicKey,
        keyholder: ProcessId,
        leak_plaintext: bool,
    ) -> Self {
        OutlierProcess {
            id,
            v,
            c,
            route,
            pk,
            keyholder,
            leak_plaintext,
            state: OutlierState::new(n),
            rounds: BTreeMap::new(),
            pending: BTreeMap::new(),
            dirty: BTreeSet::new(),
            mean_ct: None,
        }
    }

    pub fn state(&self) -> &OutlierState {
        &self.state
    }

    fn begin(
        &mut self,
        ctx: &mut Context<'_>,
        round: u8,
        built: Result<ConsensusState, OutlierError>,
    ) {
        let mut st = match built {
            Ok(st) => st,
            Err(e) => return ctx.error(e.to_string()),
        };
        self.state.round = round;
        ctx.progress();
        let alone = st.try_decide_alone(ctx.backend());
        self.rounds.insert(round, st);
        self.dirty.insert(round);
        match alone {
            Ok(Some(p)) => self.on_decided(ctx, round, p),
            Ok(None) => {}
            Err(e) => ctx.error(e.to_string()),
        }
        for msg in self.pending.remove(&round).unwrap_or_default() {
            self.on_aggregate(ctx, round, msg);
        }
    }

    fn start_round1(&mut self, ctx: &mut Context<'_>) {
        let st = init_consensus(
            ctx.backend(),
            &self.pk,
            self.id,
            self.v,
            ROUND1_LABEL,
            &instance(1),
            self.state.members.clone(),
        );
        self.begin(ctx, 1, st.map_err(Into::into));
    }

    fn start_round2(&mut self, ctx: &mut Context<'_>) {
        let backend = ctx.backend();
        let members = self.state.members.clone();
        let st = match (self.route, self.state.mu, &self.mean_ct) {
            (VarianceRoute::Decrypt, Some(mu), _) => init_consensus(
                backend,
                &self.pk,
                self.id,
                round2_input(self.v, mu),
                ROUND2_LABEL,
                &instance(2),
                members,
            )
            .map_err(Into::into),
            (VarianceRoute::Encrypted, _, Some(mean)) => {
                variance_contribution(backend, &self.pk, self.id, self.v, mean).map(|ct| {
                    init_with_ciphertexts(
                        self.id,
                        &instance(2),
                        ct,
                        None,
                        backend.slot_capacity(),
                        members,
                    )
                })
            }
            _ => return ctx.error("round 2 started without a mean"),
        };
        self.begin(ctx, 2, st);
    }

    fn start_round3(&mut self, ctx: &mut Context<'_>) {
        let (Some(mu), Some(sigma)) = (self.state.mu, self.state.sigma) else {
            return ctx.error("round 3 started without mean and deviation");
        };
        let outlier = is_outlier(self.v, mu, sigma, self.c);
        self.state.outlier = Some(outlier);
        let st = init_round3(
            ctx.backend(),
            &self.pk,
            self.id,
            self.v,
            outlier,
            self.state.members.clone(),
        );
        self.begin(ctx, 3, st);
    }

    fn on_decided(&mut self, ctx: &mut Context<'_>, round: u8, p: PreparedAggregate) {
        ctx.ready();
        let name = instance(round);
        let to_keyholder = match (round, self.route) {
            (1, VarianceRoute::Encrypted) => {
                self.mean_ct = Some(p.votes);
                self.start_round2(ctx);
                None
            }
            (2, VarianceRoute::Encrypted) => {
                let Some(mean) = self.mean_ct.clone() else {
                    return ctx.error("encrypted route lost its mean");
                };
                match complete_variance(ctx.backend(), &p.votes, &mean) {
                    Ok(var) => Some(ProtocolMessage::prepared(&name, var, None, Some(mean))),
                    Err(e) => return ctx.error(e.to_string()),
                }
            }
            _ => Some(ProtocolMessage::prepared(
                &name,
                p.votes,
                p.participating,
                None,
            )),
        };
        if let Some(msg) = to_keyholder {
            ctx.send(self.keyholder, msg);
        }
    }

    fn on_aggregate(&mut self, ctx: &mut Context<'_>, round: u8, msg: ProtocolMessage) {
        let Some(st) = self.rounds.get_mut(&round) else {
            if round > self.state.round {
                self.pending.entry(round).or_default().push(msg);
            } else {
                ctx.error(format!("aggregate for finished round {round}"));
            }
            return;
        };
        match st.on_receive(ctx.backend(), &msg) {
            Ok(Step::Ignored) => {}
            Ok(Step::Merged(prepared)) => {
                ctx.progress();
                self.dirty.insert(round);
                if let Some(p) = prepared {
                    self.on_decided(ctx, round, p);
                }
            }
            Err(e) => ctx.error(e.to_string()),
        }
    }

    fn on_result(&mut self, ctx: &mut Context<'_>, round: u8, ann: Announcement) {
        if let Some(e) = ann.error {
            return ctx.error(e);
        }
        if round < 3 {
            match adjust_n_on_fault(&self.state, ann.members.iter().copied()) {
                Ok(s) => self.state = s,
                Err(e) => return ctx.error(e.to_string()),
            }
        }
        match round {
            1 => {
                self.state.mu = ann.mean;
                self.start_round2(ctx);
            }
            2 => {
                self.state.mu = ann.mean;
                self.state.variance = ann.value;
                match ann.value.map(sigma_from_round2) {
                    Some(Ok(s)) => self.state.sigma = Some(s),
                    Some(Err(e)) => return ctx.error(e.to_string()),
                    None => return ctx.error("round 2 result without value"),
                }
                self.start_round3(ctx);
            }
            _ => match ann.value {
                Some(v) => ctx.decide(Decision::Average(v)),
                None => ctx.error("round 3 result without value"),
            },
        }
    }
}

impl Node for OutlierProcess {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Context<'_>) {
        self.start_round1(ctx);
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, _from: ProcessId, msg: ProtocolMessage) {
        let Some(round) = round_of(&msg.instance) else {
            return ctx.error(format!("unknown instance {}", msg.instance));
        };
        match msg.kind {
            MessageKind::Aggregate => self.on_aggregate(ctx, round, msg),
            MessageKind::Result => match msg.announcement {
                Some(ann) => self.on_result(ctx, round, ann),
                None => ctx.error("result without announcement"),
            },
            _ => ctx.error("unexpected message kind"),
        }
    }

    fn on_tick_end(&mut self, ctx: &mut Context<'_>) {
        for round in std::mem::take(&mut self.dirty) {
            let Some(st) = self.rounds.get(&round) else {
                continue;
            };
            let mut msg = st.message();
            if self.leak_plaintext {
                msg.plain = Some(self.v);
            }
            for &p in ctx.neighbors() {
                if p != self.keyholder {
                    ctx.send(p, msg.clone());
                }
            }
        }
    }
}

/// What the keyholder learned, for the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OutlierSummary {
    pub mean: Option<f64>,
    pub variance: Option<f64>,
    pub sigma: Option<f64>,
    pub participants: Option<usize>,
    pub value: Option<f64>,
    pub members_round2: Vec<ProcessId>,
    pub members_round3: Vec<ProcessId>,
    pub error: Option<String>,
}

pub struct OutlierKeyholder {
    sk: SecretKey,
    route: VarianceRoute,
    members: Membership,
    done: BTreeSet<u8>,
    summary: OutlierSummary,
}

impl OutlierKeyholder {
    pub fn new(sk: SecretKey, n: usize, route: VarianceRoute) -> Self {
        OutlierKeyholder {
            sk,
            route,
            members: Membership::all(n),
            done: BTreeSet::new(),
            summary: OutlierSummary::default(),
        }
    }

    pub fn summary(&self) -> &OutlierSummary {
        &self.summary
    }

    fn announce(&self, ctx: &mut Context<'_>, round: u8, ann: Announcement) {
        for p in self.members.iter() {
            ctx.send(p, ProtocolMessage::result(&instance(round), ann.clone()));
        }
    }

    fn next_round(&mut self, ctx: &mut Context<'_>, round: u32) -> Result<(), OutlierError> {
        let alive = ctx.barrier(round);
        let survivors: Vec<_> = self.members.iter().filter(|p| alive.contains(p)).collect();
        self.members = Membership::new(survivors).map_err(|_| OutlierError::EmptyCorrectSet)?;
        Ok(())
    }

    fn handle(
        &mut self,
        ctx: &mut Context<'_>,
        round: u8,
        msg: &ProtocolMessage,
    ) -> Result<(), OutlierError> {
        let backend = ctx.backend();
        let n = self.members.n();
        let votes = msg.votes.as_ref().ok_or(OutlierError::EmptyCorrectSet)?;
        match round {
            1 => {
                let mu = finalize_trusted(backend, &self.sk, votes, n)?;
                self.summary.mean = Some(mu);
                self.next_round(ctx, 2)?;
                self.summary.members_round2 = self.members.to_vec();
                let ann = Announcement {
                    value: Some(mu),
                    mean: Some(mu),
                    members: self.members.to_vec(),
                    ..Announcement::default()
                };
                self.announce(ctx, 1, ann);
            }
            2 => {
                let variance = finalize_trusted(backend, &self.sk, votes, n)?;
                let mu = match (self.route, &msg.aux) {
                    (VarianceRoute::Encrypted, Some(mean)) => {
                        self.summary.members_round2 = self.members.to_vec();
                        finalize_trusted(backend, &self.sk, mean, n)?
                    }
                    _ => self.summary.mean.ok_or(OutlierError::EmptyCorrectSet)?,
                };
                self.summary.mean = Some(mu);
                self.summary.variance = Some(variance);
                self.summary.sigma = sigma_from_round2(variance).ok();
                self.next_round(ctx, 3)?;
                self.summary.members_round3 = self.members.to_vec();
                let ann = Announcement {
                    value: Some(variance),
                    mean: Some(mu),
                    members: self.members.to_vec(),
                    ..Announcement::default()
                };
                self.announce(ctx, 2, ann);
            }
            _ => {
                let part = msg
                    .participating
                    .as_ref()
                    .ok_or(OutlierError::EmptyCorrectSet)?;
                let ann = match finalize_filtered(backend, &self.sk, votes, part, n) {
                    Ok(f) => {
                        self.summary.value = Some(f.value);
                        self.summary.participants = Some(f.participants);
                        Announcement {
                            value: Some(f.value),
                            members: self.members.to_vec(),
                            ..Announcement::default()
                        }
                    }
                    Err(e) => {
                        self.summary.error = Some(e.to_string());
                        Announcement {
                            members: self.members.to_vec(),
                            error: Some(e.to_string()),
                            ..Announcement::default()
                        }
                    }
                };
                self.announce(ctx, 3, ann);
            }
        }
        Ok(())
    }
}

impl Node for OutlierKeyholder {
    type Msg = ProtocolMessage;

    fn start(&mut self, _ctx: &mut Context<'_>) {}

    fn on_message(&mut self, ctx: &mut Context<'_>, _from: ProcessId, msg: ProtocolMessage) {
        let Some(round) = round_of(&msg.instance) else {
            return ctx.error(format!("unknown instance {}", msg.instance));
        };
        if msg.kind != MessageKind::Prepared {
            return ctx.error("keyholder only accepts prepared aggregates");
        }
        if !self.done.insert(round) {
            return;
        }
        ctx.progress();
        if let Err(e) = self.handle(ctx, round, &msg) {
            if self.summary.error.is_none() {
                self.summary.error = Some(e.to_string());
            }
            ctx.error(e.to_string());
        }
    }
}

pub enum OutlierNode {
    Process(Box<OutlierProcess>),
    Keyholder(Box<OutlierKeyholder>),
}

impl Node for OutlierNode {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Context<'_>) {
        match self {
            OutlierNode::Process(p) => p.start(ctx),
            OutlierNode::Keyholder(k) => k.start(ctx),
        }
    }

    fn on_message(&mut self, ctx: &mut Context<'_>, from: ProcessId, msg: ProtocolMessage) {
        match self {
            OutlierNode::Process(p) => p.on_message(ctx, from, msg),
            OutlierNode::Keyholder(k) => k.on_message(ctx, from, msg),
        }
    }

    fn on_tick_end(&mut self, ctx: &mut Context<'_>) {
        match self {
            OutlierNode::Process(p) => p.on_tick_end(ctx),
            OutlierNode::Keyholder(k) => k.on_tick_end(ctx),
        }
    }
}
