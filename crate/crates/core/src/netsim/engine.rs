use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::he_slots::{AuditLedger, Ciphertext, HeBackend};
use crate::process::ProcessId;

/// What the simulator needs to know about a message.
pub trait Wire: Clone {
    fn ciphertexts(&self) -> Vec<&Ciphertext>;
    /// Real-valued fields sent in the clear that are not protocol outputs.
    fn plaintext_reals(&self) -> Vec<f64>;
    /// Plaintext scalars carried, for byte accounting.
    fn plaintext_words(&self) -> usize;
    fn instance(&self) -> &str;
}

/// A participant driven by the simulator. Calls are serialized per node.
pub trait Node {
    type Msg: Wire;

    fn start(&mut self, ctx: &mut Ctx<'_, Self::Msg>);

    fn on_message(&mut self, ctx: &mut Ctx<'_, Self::Msg>, from: ProcessId, msg: Self::Msg);

    /// Called once per tick after every delivery to this node in that tick.
    fn on_tick_end(&mut self, _ctx: &mut Ctx<'_, Self::Msg>) {}
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    /// Every message takes exactly one tick.
    #[default]
    Sync,
    /// Each message independently takes a uniform `[1, max_latency]` ticks.
    Async,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashTime {
    /// Stop at this logical time.
    Tick(u64),
    /// Stop when the round barrier for this round is announced.
    BeforeRound(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Crash {
    pub process: ProcessId,
    pub at: CrashTime,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Decision {
    Average(f64),
    Leader(ProcessId),
}

impl Decision {
    pub fn as_average(&self) -> Option<f64> {
        match self {
            Decision::Average(v) => Some(*v),
            Decision::Leader(_) => None,
        }
    }

    pub fn as_leader(&self) -> Option<ProcessId> {
        match self {
            Decision::Leader(p) => Some(*p),
            Decision::Average(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub schedule: Schedule,
    pub max_latency: u64,
    pub seed: u64,
    /// Ticks without progress before the run is abandoned.
    pub deadline: u64,
    pub crashes: Vec<Crash>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct NodeRecord {
    pub sent: u64,
    pub received: u64,
    pub ciphertexts_sent: u64,
    pub plaintext_words_sent: u64,
    pub decision: Option<Decision>,
    pub decided_at: Option<u64>,
    pub ready_at: Option<u64>,
    pub errors: Vec<String>,
}

/// A cleartext real seen on the wire.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaintextObservation {
    pub time: u64,
    pub from: ProcessId,
    pub to: ProcessId,
    pub instance: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct SimOutcome {
    pub records: Vec<NodeRecord>,
    pub crashed: BTreeMap<ProcessId, u64>,
    pub end_tick: u64,
    pub deadline_exceeded: bool,
    pub plaintext: Vec<PlaintextObservation>,
    pub barriers: Vec<(u32, u64)>,
}

struct Shared {
    now: u64,
    processes: usize,
    crashed: BTreeMap<ProcessId, u64>,
    round_crashes: Vec<(u32, ProcessId)>,
    records: Vec<NodeRecord>,
    last_progress: u64,
    barriers: Vec<(u32, u64)>,
}

impl Shared {
    fn alive(&self) -> BTreeSet<ProcessId> {
        (0..self.processes)
            .map(ProcessId)
            .filter(|p| !self.crashed.contains_key(p))
            .collect()
    }
}

/// A node's handle on the simulator during one callback.
pub struct Ctx<'a, M> {
    me: ProcessId,
    shared: &'a mut Shared,
    neighbors: &'a BTreeSet<ProcessId>,
    backend: &'a dyn HeBackend,
    outbox: Vec<(ProcessId, M)>,
}

impl<'a, M> Ctx<'a, M> {
    pub fn me(&self) -> ProcessId {
        self.me
    }

    pub fn now(&self) -> u64 {
        self.shared.now
    }

    pub fn backend(&self) -> &'a dyn HeBackend {
        self.backend
    }

    pub fn neighbors(&self) -> &'a BTreeSet<ProcessId> {
        self.neighbors
    }

    pub fn send(&mut self, to: ProcessId, msg: M) {
        self.outbox.push((to, msg));
    }

    fn record(&mut self) -> &mut NodeRecord {
        &mut self.shared.records[self.me.0]
    }

    /// Records the node's output; only the first decision counts.
    pub fn decide(&mut self, decision: Decision) {
        let now = self.shared.now;
        let rec = self.record();
        if rec.decision.is_none() {
            rec.decision = Some(decision);
            rec.decided_at = Some(now);
        }
        self.progress();
    }

    /// Marks the tick at which the node completed an aggregation.
    pub fn ready(&mut self) {
        let now = self.shared.now;
        self.record().ready_at = Some(now);
        self.progress();
    }

    pub fn progress(&mut self) {
        self.shared.last_progress = self.shared.now;
    }

    pub fn error(&mut self, message: impl Into<String>) {
        let message = message.into();
        log::warn!("process {}: {message}", self.me);
        self.record().errors.push(message);
    }

    /// Announces the start of `round`: crashes scheduled before it take
    /// effect now. Returns the processes still alive.
    pub fn barrier(&mut self, round: u32) -> BTreeSet<ProcessId> {
        let now = self.shared.now;
        if !self.shared.barriers.iter().any(|(r, _)| *r == round) {
            self.shared.barriers.push((round, now));
            let due: Vec<_> = self
                .shared
                .round_crashes
                .iter()
                .filter(|(r, _)| *r == round)
                .map(|(_, p)| *p)
                .collect();
            for p in due {
                self.shared.crashed.entry(p).or_insert(now);
            }
        }
        self.progress();
        self.shared.alive()
    }
}

struct Envelope<M> {
    from: ProcessId,
    to: ProcessId,
    msg: M,
}

/// Deterministic discrete-event executor.
pub struct Simulation<N: Node> {
    nodes: Vec<N>,
    graph: Vec<BTreeSet<ProcessId>>,
    backend: Arc<dyn HeBackend>,
    ledger: Arc<AuditLedger>,
    config: SimConfig,
    rng: ChaCha8Rng,
    queue: BTreeMap<(u64, u64), Envelope<N::Msg>>,
    seq: u64,
    time_crashes: Vec<(u64, ProcessId)>,
    plaintext: Vec<PlaintextObservation>,
    shared: Shared,
}

impl<N: Node> Simulation<N> {
    /// `graph[i]` lists who node `i` may send to. The first `processes`
    /// nodes are protocol participants; any further nodes are keyholders.
    pub fn new(
        nodes: Vec<N>,
        graph: Vec<BTreeSet<ProcessId>>,
        processes: usize,
        backend: Arc<dyn HeBackend>,
        ledger: Arc<AuditLedger>,
        config: SimConfig,
    ) -> Self {
        assert_eq!(nodes.len(), graph.len(), "one adjacency set per node");
        for i in 0..nodes.len() {
            ledger.register(ProcessId(i));
        }
        let mut time_crashes = Vec::new();
        let mut round_crashes = Vec::new();
        for c in &config.crashes {
            match c.at {
                CrashTime::Tick(t) => time_crashes.push((t, c.process)),
                CrashTime::BeforeRound(r) => round_crashes.push((r, c.process)),
            }
        }
        time_crashes.sort();
        let shared = Shared {
            now: 0,
            processes,
            crashed: BTreeMap::new(),
            round_crashes,
            records: vec![NodeRecord::default(); nodes.len()],
            last_progress: 0,
            barriers: Vec::new(),
        };
        Simulation {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            nodes,
            graph,
            backend,
            ledger,
            config,
            queue: BTreeMap::new(),
            seq: 0,
            time_crashes,
            plaintext: Vec::new(),
            shared,
        }
    }

    fn latency(&mut self) -> u64 {
        match self.config.schedule {
            Schedule::Sync => 1,
            Schedule::Async => self.rng.gen_range(1..=self.config.max_latency.max(1)),
        }
    }

    fn is_crashed(&self, p: ProcessId) -> bool {
        self.shared.crashed.contains_key(&p)
    }

    fn with_ctx(&mut self, id: ProcessId, f: impl FnOnce(&mut N, &mut Ctx<'_, N::Msg>)) {
        let mut ctx = Ctx {
            me: id,
            shared: &mut self.shared,
            neighbors: &self.graph[id.0],
            backend: self.backend.as_ref(),
            outbox: Vec::new(),
        };
        f(&mut self.nodes[id.0], &mut ctx);
        let outbox = ctx.outbox;
        for (to, msg) in outbox {
            self.schedule(id, to, msg);
        }
    }

    fn schedule(&mut self, from: ProcessId, to: ProcessId, msg: N::Msg) {
        if !self.graph[from.0].contains(&to) {
            self.shared.records[from.0]
                .errors
                .push(format!("dropped send to non-neighbour {to}"));
            return;
        }
        let now = self.shared.now;
        for value in msg.plaintext_reals() {
            self.plaintext.push(PlaintextObservation {
                time: now,
                from,
                to,
                instance: msg.instance().to_string(),
                value,
            });
        }
        let rec = &mut self.shared.records[from.0];
        rec.sent += 1;
        rec.ciphertexts_sent += msg.ciphertexts().len() as u64;
        rec.plaintext_words_sent += msg.plaintext_words() as u64;
        let at = now + self.latency();
        self.seq += 1;
        self.queue
            .insert((at, self.seq), Envelope { from, to, msg });
    }

    fn apply_time_crashes(&mut self, now: u64) {
        while let Some(&(t, p)) = self.time_crashes.first() {
            if t > now {
                break;
            }
            self.time_crashes.remove(0);
            self.shared.crashed.entry(p).or_insert(t);
        }
    }

    pub fn run(mut self) -> (Vec<N>, SimOutcome) {
        self.apply_time_crashes(0);
        for i in 0..self.nodes.len() {
            let id = ProcessId(i);
            if self.is_crashed(id) {
                continue;
            }
            self.with_ctx(id, |node, ctx| {
                node.start(ctx);
                node.on_tick_end(ctx);
            });
        }
        let mut deadline_exceeded = false;
        while let Some((&(t, _), _)) = self.queue.first_key_value() {
            if t > self.shared.last_progress + self.config.deadline {
                deadline_exceeded = true;
                break;
            }
            self.shared.now = t;
            self.apply_time_crashes(t);
            let mut touched = BTreeSet::new();
            while let Some(entry) = self.queue.first_entry() {
                if entry.key().0 != t {
                    break;
                }
                let env = entry.remove();
                if self.is_crashed(env.to) {
                    continue;
                }
                for ct in env.msg.ciphertexts() {
                    self.ledger.record_held(env.to, ct);
                }
                self.shared.records[env.to.0].received += 1;
                touched.insert(env.to);
                let (from, msg) = (env.from, env.msg);
                self.with_ctx(env.to, |node, ctx| node.on_message(ctx, from, msg));
            }
            for id in touched {
                if !self.is_crashed(id) {
                    self.with_ctx(id, |node, ctx| node.on_tick_end(ctx));
                }
            }
        }
        let outcome = SimOutcome {
            records: self.shared.records,
            crashed: self.shared.crashed,
            end_tick: self.shared.now,
            deadline_exceeded,
            plaintext: self.plaintext,
            barriers: self.shared.barriers,
        };
        (self.nodes, outcome)
    }
}
