use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use super::report::{InstanceReport, KeyholderReport, SimReport, Termination, SCHEMA_VERSION};
use super::{privacy_audit, AuditPolicy, CompletePolicy, Node, SimConfig, SimOutcome, Simulation};
use crate::avg_consensus::node::{AvgNode, AvgProcess, Mutations, Role, TrustedParty};
use crate::he_slots::{AuditLedger, BackendConfig, HeBackend, SimulatedBackend};
use crate::leader_election::node::{ElectionKeyholder, ElectionNode, ElectionProcess};
use crate::leader_election::{self, BALLOT_LABEL};
use crate::outlier_consensus::node::{OutlierKeyholder, OutlierNode, OutlierProcess};
use crate::outlier_consensus::VarianceRoute;
use crate::process::ProcessId;
use crate::scenario::{
    self, ConfigError, Inputs, Protocol, ResolvedScenario, ScenarioConfig, BACKEND_STREAM,
    SCHEDULE_STREAM,
};

/// Runs trial 0 of a scenario.
pub fn run(config: &ScenarioConfig) -> Result<SimReport, ConfigError> {
    run_resolved(&config.resolve(0)?)
}

/// Runs every trial, in parallel; reports come back in trial order.
pub fn run_trials(config: &ScenarioConfig) -> Result<Vec<SimReport>, ConfigError> {
    (0..config.trials)
        .into_par_iter()
        .map(|t| run_resolved(&config.resolve(t)?))
        .collect()
}

fn he(e: impl ToString) -> ConfigError {
    ConfigError::Invalid(e.to_string())
}

struct Setup {
    backend: Arc<SimulatedBackend>,
    ledger: Arc<AuditLedger>,
    graph: Vec<BTreeSet<ProcessId>>,
}

fn setup(r: &ResolvedScenario, slots: usize) -> Result<Setup, ConfigError> {
    let n = r.topology.n();
    let cfg = &r.config;
    let ledger = Arc::new(AuditLedger::new());
    let backend_seed = scenario::stream(r.seed, BACKEND_STREAM).gen();
    let backend = SimulatedBackend::with_ledger(
        BackendConfig::for_slots(slots, cfg.noise_epsilon).map_err(he)?,
        backend_seed,
        ledger.clone(),
    )
    .map_err(he)?;
    let mut graph: Vec<BTreeSet<ProcessId>> = r
        .topology
        .processes()
        .map(|p| r.topology.neighbors(p).cloned())
        .collect::<Result<_, _>>()?;
    if cfg.protocol.has_keyholder() {
        let t = ProcessId(n);
        for adj in &mut graph {
            adj.insert(t);
        }
        graph.push((0..n).map(ProcessId).collect());
    }
    Ok(Setup {
        backend: Arc::new(backend),
        ledger,
        graph,
    })
}

fn sim_config(r: &ResolvedScenario) -> SimConfig {
    let cfg = &r.config;
    let n = r.topology.n() as u64;
    let diam = r.topology.diameter().unwrap_or(r.topology.n()).max(1) as u64;
    SimConfig {
        schedule: cfg.schedule,
        max_latency: cfg.max_latency,
        seed: scenario::stream(r.seed, SCHEDULE_STREAM).gen(),
        deadline: cfg
            .deadline
            .unwrap_or(10 * n.max(1) * diam * cfg.max_latency),
        crashes: cfg.faults.crashes.clone(),
    }
}

fn simulate<N: Node>(r: &ResolvedScenario, s: &Setup, nodes: Vec<N>) -> (Vec<N>, SimOutcome) {
    let backend: Arc<dyn HeBackend> = s.backend.clone();
    Simulation::new(
        nodes,
        s.graph.clone(),
        r.topology.n(),
        backend,
        s.ledger.clone(),
        sim_config(r),
    )
    .run()
}

fn values(r: &ResolvedScenario) -> &[f64] {
    match &r.inputs {
        Inputs::Values(v) => v,
        Inputs::Ballots(_) => &[],
    }
}

fn value_policy(v: &[f64]) -> AuditPolicy {
    AuditPolicy {
        complete: None,
        private_inputs: v
            .iter()
            .enumerate()
            .map(|(i, x)| (ProcessId(i), *x))
            .collect(),
    }
}

/// Protocol-specific part of a report.
#[derive(Default)]
struct Extras {
    instances: Vec<InstanceReport>,
    election: Option<crate::leader_election::node::ElectionSummary>,
    outlier: Option<crate::outlier_consensus::node::OutlierSummary>,
    non_viable: bool,
    ready_ticks: bool,
}

pub fn run_resolved(r: &ResolvedScenario) -> Result<SimReport, ConfigError> {
    let cfg = &r.config;
    let n = r.topology.n();
    let mutation = cfg.mutation.unwrap_or_default();
    let mutations = Mutations {
        leak_plaintext: mutation.leak_plaintext,
        premature_decrypt: mutation.premature_decrypt,
    };
    let keyholder = ProcessId(n);
    let (s, outcome, policy, extras) = match cfg.protocol {
        Protocol::AvgTrusted => {
            let s = setup(r, n)?;
            let (pk, sk) = s.backend.keygen(keyholder).map_err(he)?.into_parts();
            let mut nodes: Vec<AvgNode> = values(r)
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let role = Role::Trusted {
                        pk: pk.clone(),
                        keyholder,
                    };
                    AvgNode::Process(AvgProcess::new(ProcessId(i), v, n, role, mutations))
                })
                .collect();
            nodes.push(AvgNode::Trusted(TrustedParty::new(sk, n)));
            let (_, outcome) = simulate(r, &s, nodes);
            let extras = Extras {
                ready_ticks: true,
                ..Extras::default()
            };
            (s, outcome, value_policy(values(r)), extras)
        }
        Protocol::AvgUntrusted => {
            let s = setup(r, n)?;
            let initiators = cfg.initiators_or_all(n);
            let mut viable = BTreeMap::new();
            for &k in &initiators {
                let ok = n > 1 && r.topology.connected_without(&BTreeSet::from([k]))?;
                viable.insert(k, ok);
            }
            let mut public = BTreeMap::new();
            let mut secret = BTreeMap::new();
            for (&k, &ok) in &viable {
                if ok {
                    let (pk, sk) = s.backend.keygen(k).map_err(he)?.into_parts();
                    public.insert(k, pk);
                    secret.insert(k, sk);
                }
            }
            let nodes: Vec<AvgNode> = values(r)
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let id = ProcessId(i);
                    let role = Role::Untrusted {
                        instances: public.clone(),
                        own_secret: secret.remove(&id),
                    };
                    AvgNode::Process(AvgProcess::new(id, v, n, role, mutations))
                })
                .collect();
            let (nodes, outcome) = simulate(r, &s, nodes);
            let instances = viable
                .iter()
                .map(|(&k, &ok)| InstanceReport {
                    initiator: k,
                    viable: ok,
                    value: match &nodes[k.0] {
                        AvgNode::Process(p) => p
                            .results()
                            .get(&crate::avg_consensus::untrusted_instance(k))
                            .copied(),
                        AvgNode::Trusted(_) => None,
                    },
                })
                .collect();
            let extras = Extras {
                instances,
                non_viable: public.is_empty(),
                ready_ticks: true,
                ..Extras::default()
            };
            (s, outcome, value_policy(values(r)), extras)
        }
        Protocol::Outlier => {
            let s = setup(r, n)?;
            let (pk, sk) = s.backend.keygen(keyholder).map_err(he)?.into_parts();
            let c = cfg.c.expect("validated");
            let route = cfg.variance_route.unwrap_or(VarianceRoute::Decrypt);
            let mut nodes: Vec<OutlierNode> = values(r)
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    OutlierNode::Process(Box::new(OutlierProcess::new(
                        ProcessId(i),
                        v,
                        n,
                        c,
                        route,
                        pk.clone(),
                        keyholder,
                        mutations.leak_plaintext,
                    )))
                })
                .collect();
            nodes.push(OutlierNode::Keyholder(Box::new(OutlierKeyholder::new(sk, n, route))));
            let (nodes, outcome) = simulate(r, &s, nodes);
            let outlier = match nodes.last() {
                Some(OutlierNode::Keyholder(k)) => Some(k.summary().clone()),
                _ => None,
            };
            let extras = Extras {
                outlier,
                ..Extras::default()
            };
            (s, outcome, value_policy(values(r)), extras)
        }
        Protocol::Election => {
            let Inputs::Ballots(ballots) = &r.inputs else {
                return Err(he("election needs ballots"));
            };
            let s = setup(r, leader_election::slot_capacity(n))?;
            let (pk, sk) = s.backend.keygen(keyholder).map_err(he)?.into_parts();
            let origins: BTreeSet<ProcessId> = cfg.initiators_or_all(n).into_iter().collect();
            let mut nodes: Vec<ElectionNode> = ballots
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let id = ProcessId(i);
                    ElectionNode::Process(ElectionProcess::new(
                        id,
                        n,
                        *b,
                        pk.clone(),
                        keyholder,
                        origins.contains(&id),
                    ))
                })
                .collect();
            nodes.push(ElectionNode::Keyholder(ElectionKeyholder::new(sk, n)));
            let (nodes, outcome) = simulate(r, &s, nodes);
            let election = match nodes.last() {
                Some(ElectionNode::Keyholder(k)) => Some(k.summary().clone()),
                _ => None,
            };
            let policy = AuditPolicy {
                complete: Some(CompletePolicy {
                    label: BALLOT_LABEL.to_string(),
                    voters: (0..n).map(ProcessId).collect(),
                }),
                private_inputs: Vec::new(),
            };
            let extras = Extras {
                election,
                ..Extras::default()
            };
            (s, outcome, policy, extras)
        }
    };
    Ok(build_report(r, &s, outcome, &policy, extras))
}

fn build_report(
    r: &ResolvedScenario,
    s: &Setup,
    outcome: SimOutcome,
    policy: &AuditPolicy,
    extras: Extras,
) -> SimReport {
    let cfg = &r.config;
    let n = r.topology.n();
    let p = cfg.ciphertext_bytes;
    let diameter = r.topology.diameter().ok();
    let procs = &outcome.records[..n];
    let degree: Vec<usize> = r
        .topology
        .processes()
        .map(|q| r.topology.degree(q))
        .collect();

    let violations = privacy_audit(&s.ledger, &outcome.plaintext, policy);

    let mut granted: BTreeMap<ProcessId, (u64, u64)> = BTreeMap::new();
    for e in s.ledger.events() {
        if let crate::he_slots::LedgerEvent::Decrypted { by, granted: g, .. } = e {
            let slot = granted.entry(by).or_default();
            if g {
                slot.0 += 1;
            } else {
                slot.1 += 1;
            }
        }
    }
    let mut key_counts: BTreeMap<ProcessId, usize> = BTreeMap::new();
    for holder in s.ledger.key_holders().values() {
        *key_counts.entry(*holder).or_default() += 1;
    }
    let keyholders = key_counts
        .iter()
        .map(|(&id, &keys)| {
            let rec = &outcome.records[id.0];
            let (g, d) = granted.get(&id).copied().unwrap_or_default();
            KeyholderReport {
                id,
                keys,
                messages_sent: rec.sent,
                messages_received: rec.received,
                decryptions_granted: g,
                decryptions_denied: d,
            }
        })
        .collect();

    let alive_undecided = procs
        .iter()
        .enumerate()
        .any(|(i, rec)| rec.decision.is_none() && !outcome.crashed.contains_key(&ProcessId(i)));
    let termination = if extras.non_viable {
        Termination::NonViable
    } else if alive_undecided {
        Termination::DeadlineExceeded
    } else {
        Termination::Decided
    };

    let rounds_to_decide = procs
        .iter()
        .map(|rec| {
            rec.decision.as_ref()?;
            if extras.ready_ticks {
                rec.ready_at.or(rec.decided_at)
            } else {
                rec.decided_at
            }
        })
        .collect();

    let k_observed = diameter.filter(|d| *d > 0).and_then(|d| {
        procs
            .iter()
            .zip(&degree)
            .filter(|(_, deg)| **deg > 0)
            .map(|(rec, deg)| rec.sent as f64 / (d * deg) as f64)
            .reduce(f64::max)
    });

    let errors = outcome
        .records
        .iter()
        .enumerate()
        .filter(|(_, rec)| !rec.errors.is_empty())
        .map(|(i, rec)| (ProcessId(i), rec.errors.clone()))
        .collect();

    SimReport {
        schema_version: SCHEMA_VERSION,
        protocol: cfg.protocol,
        trial: r.trial,
        seed: r.seed,
        n,
        diameter,
        edges: r.topology.edge_count(),
        schedule: cfg.schedule,
        max_latency: cfg.max_latency,
        ciphertext_bytes: p,
        inputs: r.inputs.clone(),
        decided_values: procs.iter().map(|rec| rec.decision.clone()).collect(),
        rounds_to_decide,
        decided_at: procs.iter().map(|rec| rec.decided_at).collect(),
        messages_sent: procs.iter().map(|rec| rec.sent).collect(),
        bytes_modeled: procs
            .iter()
            .map(|rec| rec.ciphertexts_sent * p + rec.plaintext_words_sent * 8)
            .collect(),
        degree,
        crashed: outcome.crashed,
        keyholders,
        k_observed,
        privacy_violations: violations,
        termination,
        expect_termination: cfg.faults.expect_termination,
        end_tick: outcome.end_tick,
        instances: extras.instances,
        election: extras.election,
        outlier: extras.outlier,
        errors,
    }
}
