//! Simulator nodes for the trusted and untrusted average-consensus variants.

use std::collections::{BTreeMap, BTreeSet};

use super::{
    encrypt_impulse, finalize_trusted, init_consensus, untrusted_instance, Announcement,
    ConsensusState, Counts, Membership, MessageKind, ProtocolMessage, Step, TRUSTED_INSTANCE,
};
use crate::he_slots::{PublicKey, SecretKey};
use crate::netsim::{Ctx, Decision, Node};
use crate::process::ProcessId;

pub const VOTE_LABEL: &str = "v";

/// Deliberate protocol defects, used to check that the audit catches them.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Mutations {
    /// Attach the sender's raw input to every aggregate it sends.
    pub leak_plaintext: bool,
    /// Hand the keyholder a raw aggregate, which it decrypts.
    pub premature_decrypt: bool,
}

#[derive(Debug)]
pub enum Role {
    /// Keyholder of the trusted variant: `keyholder` is its node id.
    Trusted { pk: PublicKey, keyholder: ProcessId },
    /// Untrusted variant: one key per viable initiator.
    Untrusted {
        instances: BTreeMap<ProcessId, PublicKey>,
        own_secret: Option<SecretKey>,
    },
}

pub struct AvgProcess {
    id: ProcessId,
    v: f64,
    n: usize,
    role: Role,
    mutations: Mutations,
    states: BTreeMap<String, ConsensusState>,
    /// Instance to the process that must not receive its aggregates.
    excluded: BTreeMap<String, ProcessId>,
    dirty: BTreeSet<String>,
    results: BTreeMap<String, f64>,
}

impl AvgProcess {
    pub fn new(id: ProcessId, v: f64, n: usize, role: Role, mutations: Mutations) -> Self {
        AvgProcess {
            id,
            v,
            n,
            role,
            mutations,
            states: BTreeMap::new(),
            excluded: BTreeMap::new(),
            dirty: BTreeSet::new(),
            results: BTreeMap::new(),
        }
    }

    pub fn results(&self) -> &BTreeMap<String, f64> {
        &self.results
    }

    pub fn state(&self, instance: &str) -> Option<&ConsensusState> {
        self.states.get(instance)
    }

    fn decision_target(&self, instance: &str) -> Option<ProcessId> {
        match &self.role {
            Role::Trusted { keyholder, .. } => Some(*keyholder),
            Role::Untrusted { .. } => self.excluded.get(instance).copied(),
        }
    }

    fn expected_instances(&self) -> usize {
        match &self.role {
            Role::Trusted { .. } => 1,
            Role::Untrusted { instances, .. } => instances.len(),
        }
    }

    fn own_instance(&self) -> Option<String> {
        match &self.role {
            Role::Untrusted {
                own_secret: Some(_),
                ..
            } => Some(untrusted_instance(self.id)),
            _ => None,
        }
    }

    fn outgoing(&self, msg: ProtocolMessage) -> ProtocolMessage {
        ProtocolMessage {
            plain: self.mutations.leak_plaintext.then_some(self.v),
            ..msg
        }
    }

    fn send_prepared(
        &self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        instance: &str,
        p: super::PreparedAggregate,
    ) {
        ctx.ready();
        match self.decision_target(instance) {
            Some(target) if ctx.neighbors().contains(&target) => {
                ctx.send(
                    target,
                    ProtocolMessage::prepared(instance, p.votes, None, None),
                );
            }
            _ => {}
        }
    }

    fn start_instance(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        instance: String,
        pk: &PublicKey,
    ) {
        let backend = ctx.backend();
        match init_consensus(
            backend,
            pk,
            self.id,
            self.v,
            VOTE_LABEL,
            &instance,
            Membership::all(self.n),
        ) {
            Ok(mut state) => {
                match state.try_decide_alone(backend) {
                    Ok(Some(p)) => self.send_prepared(ctx, &instance, p),
                    Ok(None) => {}
                    Err(e) => ctx.error(e.to_string()),
                }
                self.dirty.insert(instance.clone());
                self.states.insert(instance, state);
            }
            Err(e) => ctx.error(e.to_string()),
        }
    }

    fn record_result(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        instance: &str,
        value: f64,
    ) -> bool {
        if self.results.contains_key(instance) {
            return false;
        }
        self.results.insert(instance.to_string(), value);
        ctx.progress();
        if self.results.len() == self.expected_instances() {
            let first = *self.results.values().next().expect("non-empty");
            ctx.decide(Decision::Average(first));
        }
        true
    }

    fn on_aggregate(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>, msg: ProtocolMessage) {
        let backend = ctx.backend();
        let Some(state) = self.states.get_mut(&msg.instance) else {
            ctx.error(format!("aggregate for unknown instance {}", msg.instance));
            return;
        };
        match state.on_receive(backend, &msg) {
            Ok(Step::Ignored) => {}
            Ok(Step::Merged(prepared)) => {
                ctx.progress();
                self.dirty.insert(msg.instance.clone());
                if let Some(p) = prepared {
                    self.send_prepared(ctx, &msg.instance, p);
                }
            }
            Err(e) => ctx.error(e.to_string()),
        }
    }

    fn on_prepared(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>, msg: ProtocolMessage) {
        if Some(&msg.instance) != self.own_instance().as_ref() {
            ctx.error(format!("unexpected prepared message for {}", msg.instance));
            return;
        }
        if self.results.contains_key(&msg.instance) {
            return;
        }
        let Role::Untrusted {
            own_secret: Some(sk),
            ..
        } = &self.role
        else {
            return;
        };
        let Some(votes) = &msg.votes else { return };
        match finalize_trusted(ctx.backend(), sk, votes, self.n) {
            Ok(value) => {
                self.record_result(ctx, &msg.instance, value);
                let ann = Announcement {
                    value: Some(value),
                    members: Membership::all(self.n).to_vec(),
                    ..Announcement::default()
                };
                for &p in ctx.neighbors() {
                    ctx.send(p, ProtocolMessage::result(&msg.instance, ann.clone()));
                }
            }
            Err(e) => ctx.error(e.to_string()),
        }
    }

    fn on_result(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        from: ProcessId,
        msg: ProtocolMessage,
    ) {
        let Some(value) = msg.announcement.as_ref().and_then(|a| a.value) else {
            ctx.error(format!("result without value for {}", msg.instance));
            return;
        };
        let fresh = self.record_result(ctx, &msg.instance, value);
        if fresh && matches!(self.role, Role::Untrusted { .. }) {
            for &p in ctx.neighbors() {
                if p != from {
                    ctx.send(p, msg.clone());
                }
            }
        }
    }
}

impl Node for AvgProcess {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>) {
        match &self.role {
            Role::Trusted { pk, keyholder } => {
                let (pk, keyholder) = (pk.clone(), *keyholder);
                self.start_instance(ctx, TRUSTED_INSTANCE.to_string(), &pk);
                if self.mutations.premature_decrypt && self.id == ProcessId(0) {
                    if let Some(s) = self.states.get(TRUSTED_INSTANCE) {
                        ctx.send(keyholder, s.message());
                    }
                }
            }
            Role::Untrusted { instances, .. } => {
                let instances = instances.clone();
                for (k, pk) in instances {
                    let instance = untrusted_instance(k);
                    self.excluded.insert(instance.clone(), k);
                    if k == self.id {
                        self.seed_own(ctx, &instance, &pk);
                    } else {
                        self.start_instance(ctx, instance, &pk);
                    }
                }
            }
        }
    }

    fn on_message(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        from: ProcessId,
        msg: ProtocolMessage,
    ) {
        match msg.kind {
            MessageKind::Aggregate => self.on_aggregate(ctx, msg),
            MessageKind::Prepared => self.on_prepared(ctx, msg),
            MessageKind::Result => self.on_result(ctx, from, msg),
            MessageKind::Complete => ctx.error("unexpected complete message"),
        }
    }

    fn on_tick_end(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>) {
        for instance in std::mem::take(&mut self.dirty) {
            let Some(state) = self.states.get(&instance) else {
                continue;
            };
            let excluded = self.excluded.get(&instance).copied();
            let msg = self.outgoing(state.message());
            for &p in ctx.neighbors() {
                if Some(p) != excluded && p.0 < self.n {
                    ctx.send(p, msg.clone());
                }
            }
        }
    }
}

impl AvgProcess {
    /// The initiator's own vote enters its instance through its neighbours.
    fn seed_own(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>, instance: &str, pk: &PublicKey) {
        let targets: Vec<ProcessId> = ctx
            .neighbors()
            .iter()
            .copied()
            .filter(|p| p.0 < self.n)
            .collect();
        if targets.is_empty() {
            ctx.error(format!(
                "initiator {} has no neighbour to seed {instance}",
                self.id
            ));
            return;
        }
        match encrypt_impulse(ctx.backend(), pk, self.id, self.v, VOTE_LABEL) {
            Ok(ct) => {
                let counts = Counts::impulse(ctx.backend().slot_capacity(), self.id);
                let msg = self.outgoing(ProtocolMessage::aggregate(instance, ct, None, counts));
                for p in targets {
                    ctx.send(p, msg.clone());
                }
            }
            Err(e) => ctx.error(e.to_string()),
        }
    }
}

/// Trusted party of the trusted variant.
pub struct TrustedParty {
    sk: SecretKey,
    n: usize,
    result: Option<f64>,
    extra_prepared: usize,
    raw_decryptions: usize,
}

impl TrustedParty {
    pub fn new(sk: SecretKey, n: usize) -> Self {
        TrustedParty {
            sk,
            n,
            result: None,
            extra_prepared: 0,
            raw_decryptions: 0,
        }
    }

    pub fn result(&self) -> Option<f64> {
        self.result
    }

    pub fn raw_decryptions(&self) -> usize {
        self.raw_decryptions
    }

    pub fn extra_prepared(&self) -> usize {
        self.extra_prepared
    }
}

impl Node for TrustedParty {
    type Msg = ProtocolMessage;

    fn start(&mut self, _ctx: &mut Ctx<'_, ProtocolMessage>) {}

    fn on_message(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        _from: ProcessId,
        msg: ProtocolMessage,
    ) {
        let Some(votes) = &msg.votes else { return };
        match msg.kind {
            MessageKind::Prepared => {
                if self.result.is_some() {
                    self.extra_prepared += 1;
                    return;
                }
                match finalize_trusted(ctx.backend(), &self.sk, votes, self.n) {
                    Ok(value) => {
                        self.result = Some(value);
                        ctx.progress();
                        let ann = Announcement {
                            value: Some(value),
                            members: Membership::all(self.n).to_vec(),
                            ..Announcement::default()
                        };
                        for &p in ctx.neighbors() {
                            ctx.send(p, ProtocolMessage::result(&msg.instance, ann.clone()));
                        }
                    }
                    Err(e) => ctx.error(e.to_string()),
                }
            }
            MessageKind::Aggregate => {
                // only reachable under the premature-decrypt mutation
                if ctx.backend().decrypt(&self.sk, votes).is_ok() {
                    self.raw_decryptions += 1;
                }
            }
            _ => ctx.error("unexpected message at trusted party"),
        }
    }
}

/// Either role, so one simulation can host both.
pub enum AvgNode {
    Process(AvgProcess),
    Trusted(TrustedParty),
}

impl Node for AvgNode {
    type Msg = ProtocolMessage;

    fn start(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>) {
        match self {
            AvgNode::Process(p) => p.start(ctx),
            AvgNode::Trusted(t) => t.start(ctx),
        }
    }

    fn on_message(
        &mut self,
        ctx: &mut Ctx<'_, ProtocolMessage>,
        from: ProcessId,
        msg: ProtocolMessage,
    ) {
        match self {
            AvgNode::Process(p) => p.on_message(ctx, from, msg),
            AvgNode::Trusted(t) => t.on_message(ctx, from, msg),
        }
    }

    fn on_tick_end(&mut self, ctx: &mut Ctx<'_, ProtocolMessage>) {
        match self {
            AvgNode::Process(p) => p.on_tick_end(ctx),
            AvgNode::Trusted(t) => t.on_tick_end(ctx),
        }
    }
}
