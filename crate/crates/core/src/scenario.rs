//! Experiment configuration files.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::leader_election::Ballot;
use crate::netsim::{Crash, CrashTime, Schedule};
use crate::outlier_consensus::{OutlierParams, VarianceRoute};
use crate::process::ProcessId;
use crate::topology::{Topology, TopologyError};

pub const DEFAULT_CIPHERTEXT_BYTES: u64 = 1 << 16;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("topology: {0}")]
    Topology(#[from] TopologyError),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    AvgTrusted,
    AvgUntrusted,
    Outlier,
    Election,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::AvgTrusted => "avg-trusted",
            Protocol::AvgUntrusted => "avg-untrusted",
            Protocol::Outlier => "outlier",
            Protocol::Election => "election",
        }
    }

    /// Whether a separate keyholder node takes part.
    pub fn has_keyholder(self) -> bool {
        self != Protocol::AvgUntrusted
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Ring,
    Path,
    Star,
    Complete,
    Tree,
    RandomConnected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub family: Family,
    pub n: usize,
    /// Edge probability for `random-connected`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineTopology {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TopologySpec {
    File(PathBuf),
    Family(FamilySpec),
    Inline(InlineTopology),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorKind {
    Uniform,
    Ballots,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Extremes {
    pub count: usize,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub generator: GeneratorKind,
    #[serde(default = "default_low")]
    pub low: f64,
    #[serde(default = "default_high")]
    pub high: f64,
    /// Values drawn from a separate range and placed at random processes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extremes: Option<Extremes>,
    /// Chance that a generated ballot names a secondary choice.
    #[serde(default = "default_secondary")]
    pub secondary_probability: f64,
    /// Candidates are drawn from `0..candidates` (default: everyone).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
}

fn default_low() -> f64 {
    -1000.0
}

fn default_high() -> f64 {
    1000.0
}

fn default_secondary() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputSpec {
    Values(Vec<f64>),
    Ballots(Vec<Ballot>),
    Generated(GeneratorSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultPlan {
    #[serde(default)]
    pub crashes: Vec<Crash>,
    /// Fail the acceptance check if the run does not terminate.
    #[serde(default = "yes")]
    pub expect_termination: bool,
}

fn yes() -> bool {
    true
}

impl Default for FaultPlan {
    fn default() -> Self {
        FaultPlan {
            crashes: Vec::new(),
            expect_termination: true,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mutation {
    #[serde(default)]
    pub leak_plaintext: bool,
    #[serde(default)]
    pub premature_decrypt: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub protocol: Protocol,
    pub topology: TopologySpec,
    pub inputs: InputSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_route: Option<VarianceRoute>,
    /// Untrusted-average initiators, or election origins.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initiators: Option<Vec<ProcessId>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    #[serde(default = "one")]
    pub max_latency: u64,
    #[serde(default)]
    pub faults: FaultPlan,
    #[serde(default = "one_trial")]
    pub trials: u32,
    #[serde(default)]
    pub noise_epsilon: f64,
    #[serde(default = "default_ct_bytes")]
    pub ciphertext_bytes: u64,
    /// Ticks without progress before a run is abandoned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation: Option<Mutation>,
    /// Directory relative topology paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

fn one() -> u64 {
    1
}

fn one_trial() -> u32 {
    1
}

fn default_ct_bytes() -> u64 {
    DEFAULT_CIPHERTEXT_BYTES
}

/// Inputs after generation.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Inputs {
    Values(Vec<f64>),
    Ballots(Vec<Ballot>),
}

/// A scenario with topology and inputs fixed for one trial.
#[derive(Clone, Debug)]
pub struct ResolvedScenario {
    pub config: ScenarioConfig,
    pub trial: u32,
    pub seed: u64,
    pub topology: Topology,
    pub inputs: Inputs,
}

/// Independent random streams derived from a trial seed.
pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub(crate) const TOPOLOGY_STREAM: u64 = 1;
pub(crate) const INPUT_STREAM: u64 = 2;
pub(crate) const BACKEND_STREAM: u64 = 3;
pub(crate) const SCHEDULE_STREAM: u64 = 4;

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_str(text)?;
        config.validate_static()?;
        Ok(config)
    }

    pub fn from_value(value: serde_json::Value) -> Result<Self, ConfigError> {
        let config: ScenarioConfig = serde_json::from_value(value)?;
        config.validate_static()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        config.base_dir = path.parent().map(Path::to_path_buf);
        config.validate()?;
        Ok(config)
    }

    /// Checks that need no topology.
    fn validate_static(&self) -> Result<(), ConfigError> {
        let outlier = self.protocol == Protocol::Outlier;
        match (outlier, self.c) {
            (true, None) => return invalid("outlier protocol needs `c`"),
            (true, Some(c)) => {
                OutlierParams::new(c).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            (false, Some(_)) => return invalid("`c` only applies to the outlier protocol"),
            (false, None) => {}
        }
        if !outlier && self.variance_route.is_some() {
            return invalid("`variance_route` only applies to the outlier protocol");
        }
        if self.initiators.is_some()
            && !matches!(self.protocol, Protocol::AvgUntrusted | Protocol::Election)
        {
            return invalid("`initiators` only applies to avg-untrusted and election");
        }
        let wants_ballots = self.protocol == Protocol::Election;
        match (&self.inputs, wants_ballots) {
            (InputSpec::Values(_), true) => return invalid("election needs ballots as inputs"),
            (InputSpec::Ballots(_), false) => {
                return invalid("ballots only apply to the election protocol")
            }
            (InputSpec::Generated(g), w) => {
                if (g.generator == GeneratorKind::Ballots) != w {
                    return invalid("input generator does not match the protocol");
                }
                if !(g.low <= g.high && g.low.is_finite() && g.high.is_finite()) {
                    return invalid("generator needs finite low <= high");
                }
                if !(0.0..=1.0).contains(&g.secondary_probability) {
                    return invalid("secondary_probability must lie in [0, 1]");
                }
                if let Some(e) = g.extremes {
                    if !(e.low <= e.high && e.low.is_finite() && e.high.is_finite()) {
                        return invalid("extremes need finite low <= high");
                    }
                }
            }
            _ => {}
        }
        if let InputSpec::Values(v) = &self.inputs {
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return invalid(format!("input {x} is not finite"));
            }
        }
        if self.max_latency == 0 {
            return invalid("max_latency must be at least 1");
        }
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if !(self.noise_epsilon >= 0.0 && self.noise_epsilon.is_finite()) {
            return invalid("noise_epsilon must be finite and non-negative");
        }
        if self.deadline == Some(0) {
            return invalid("deadline must be positive");
        }
        if let Some(m) = self.mutation {
            if m.premature_decrypt && self.protocol != Protocol::AvgTrusted {
                return invalid("premature_decrypt is only wired into avg-trusted");
            }
        }
        for c in &self.faults.crashes {
            if let CrashTime::BeforeRound(r) = c.at {
                if self.protocol != Protocol::Outlier || !(2..=3).contains(&r) {
                    return invalid("before_round crashes only apply to outlier rounds 2 and 3");
                }
                if r == 2 && self.variance_route == Some(VarianceRoute::Encrypted) {
                    return invalid("the encrypted variance route has no barrier before round 2");
                }
            }
        }
        Ok(())
    }

    /// Full validation, resolving trial 0.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_static()?;
        self.resolve(0).map(|_| ())
    }

    pub fn trial_seed(&self, trial: u32) -> u64 {
        self.seed.wrapping_add(u64::from(trial))
    }

    fn topology_for(&self, seed: u64) -> Result<Topology, ConfigError> {
        let mut rng = stream(seed, TOPOLOGY_STREAM);
        Ok(match &self.topology {
            TopologySpec::File(path) => {
                let full = match &self.base_dir {
                    Some(dir) if path.is_relative() => dir.join(path),
                    _ => path.clone(),
                };
                Topology::load(&full)?
            }
            TopologySpec::Inline(t) => Topology::new(t.n, t.edges.iter().map(|[a, b]| (*a, *b)))?,
            TopologySpec::Family(f) => {
                if f.n == 0 {
                    return invalid("topology needs at least one process");
                }
                match f.family {
                    Family::Ring => Topology::ring(f.n),
                    Family::Path => Topology::path(f.n),
                    Family::Star => Topology::star(f.n),
                    Family::Complete => Topology::complete(f.n),
                    Family::Tree => Topology::random_tree(f.n, &mut rng),
                    Family::RandomConnected => {
                        let p =
                            f.p.unwrap_or_else(|| Topology::default_edge_probability(f.n));
                        if !(p > 0.0 && p <= 1.0) {
                            return invalid("edge probability must lie in (0, 1]");
                        }
                        Topology::random_connected(f.n, p, &mut rng)?
                    }
                }
            }
        })
    }

    fn inputs_for(&self, n: usize, seed: u64) -> Result<Inputs, ConfigError> {
        let mut rng = stream(seed, INPUT_STREAM);
        let inputs = match &self.inputs {
            InputSpec::Values(v) => Inputs::Values(v.clone()),
            InputSpec::Ballots(b) => Inputs::Ballots(b.clone()),
            InputSpec::Generated(g) => match g.generator {
                GeneratorKind::Uniform => {
                    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(g.low..=g.high)).collect();
                    if let Some(e) = g.extremes {
                        if e.count > n {
                            return invalid("more extremes than processes");
                        }
                        let mut slots: Vec<usize> = (0..n).collect();
                        rand::seq::SliceRandom::shuffle(slots.as_mut_slice(), &mut rng);
                        for &i in &slots[..e.count] {
                            v[i] = rng.gen_range(e.low..=e.high);
                        }
                    }
                    Inputs::Values(v)
                }
                GeneratorKind::Ballots => {
                    let k = g.candidates.unwrap_or(n);
                    if k == 0 || k > n {
                        return invalid("candidates must lie in 1..=n");
                    }
                    let ballots = (0..n)
                        .map(|_| {
                            let primary = rng.gen_range(0..k);
                            let secondary =
                                (k > 1 && rng.gen_bool(g.secondary_probability)).then(|| {
                                    let s = rng.gen_range(0..k - 1);
                                    if s >= primary {
                                        s + 1
                                    } else {
                                        s
                                    }
                                });
                            Ballot::new(primary, secondary)
                        })
                        .collect();
                    Inputs::Ballots(ballots)
                }
            },
        };
        let len = match &inputs {
            Inputs::Values(v) => v.len(),
            Inputs::Ballots(b) => b.len(),
        };
        if len != n {
            return invalid(format!("{len} inputs given for {n} processes"));
        }
        if let Inputs::Ballots(b) = &inputs {
            for (i, ballot) in b.iter().enumerate() {
                ballot
                    .validate(ProcessId(i), n)
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        Ok(inputs)
    }

    /// Fixes topology and inputs for `trial`.
    pub fn resolve(&self, trial: u32) -> Result<ResolvedScenario, ConfigError> {
        let seed = self.trial_seed(trial);
        let topology = self.topology_for(seed)?;
        let n = topology.n();
        if n == 0 {
            return invalid("topology needs at least one process");
        }
        let inputs = self.inputs_for(n, seed)?;
        if let Some(init) = &self.initiators {
            if init.is_empty() {
                return invalid("`initiators` is empty");
            }
            let set: BTreeSet<_> = init.iter().collect();
            if set.len() != init.len() {
                return invalid("`initiators` lists a process twice");
            }
            if let Some(p) = init.iter().find(|p| p.0 >= n) {
                return invalid(format!("initiator {p} out of range for n = {n}"));
            }
        }
        let mut crashed = BTreeSet::new();
        for c in &self.faults.crashes {
            if c.process.0 >= n {
                return invalid(format!("crash of unknown process {}", c.process));
            }
            if !crashed.insert(c.process) {
                return invalid(format!("process {} crashes twice", c.process));
            }
        }
        if self.faults.expect_termination && !crashed.is_empty() {
            self.check_crash_plan(&topology, &crashed)?;
        }
        Ok(ResolvedScenario {
            config: self.clone(),
            trial,
            seed,
            topology,
            inputs,
        })
    }

    /// Rejects crash plans under which the run cannot terminate.
    fn check_crash_plan(
        &self,
        topology: &Topology,
        crashed: &BTreeSet<ProcessId>,
    ) -> Result<(), ConfigError> {
        let n = topology.n();
        if crashed.len() >= n || !topology.connected_without(crashed)? {
            return invalid("crash plan disconnects the survivors but expects termination");
        }
        let ticks = self.faults.crashes.iter().filter_map(|c| match c.at {
            CrashTime::Tick(t) => Some(t),
            CrashTime::BeforeRound(_) => None,
        });
        match self.protocol {
            Protocol::Election => {
                invalid("a crash can drop the ballot token; set expect_termination to false")
            }
            Protocol::Outlier => {
                if ticks.count() > 0 {
                    return invalid("outlier crashes must use before_round to expect termination");
                }
                Ok(())
            }
            Protocol::AvgTrusted | Protocol::AvgUntrusted => {
                if ticks.clone().any(|t| t == 0) {
                    return invalid("a process crashing at tick 0 never shares its value");
                }
                if self.protocol == Protocol::AvgUntrusted {
                    for k in self.initiators_or_all(n) {
                        let mut gone = crashed.clone();
                        if !gone.insert(k) {
                            return invalid(format!("initiator {k} crashes and loses its key"));
                        }
                        if !topology.connected_without(&gone)? {
                            return invalid(format!(
                                "crash plan leaves instance {k} unable to finish"
                            ));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn initiators_or_all(&self, n: usize) -> Vec<ProcessId> {
        self.initiators
            .clone()
            .unwrap_or_else(|| (0..n).map(ProcessId).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ScenarioConfig, ConfigError> {
        let c = ScenarioConfig::from_json(s)?;
        c.validate()?;
        Ok(c)
    }

    #[test]
    fn minimal_config() {
        let c = parse(
            r#"{"protocol":"avg-trusted","topology":{"family":"ring","n":4},"inputs":[1,2,3,4]}"#,
        )
        .unwrap();
        assert_eq!(c.trials, 1);
        assert_eq!(c.ciphertext_bytes, 65536);
        let r = c.resolve(0).unwrap();
        assert_eq!(r.topology, Topology::ring(4));
    }

    #[test]
    fn inline_topology() {
        let c = parse(
            r#"{"protocol":"avg-trusted","topology":{"n":3,"edges":[[0,1],[1,2]]},"inputs":[1,2,3]}"#,
        )
        .unwrap();
        assert_eq!(c.resolve(0).unwrap().topology, Topology::path(3));
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let e = parse(
            r#"{"protocol":"avg-trusted","topology":{"family":"ring","n":4},"inputs":[1,2,3]}"#,
        )
        .unwrap_err();
        assert!(e.to_string().contains("3 inputs"));
    }

    #[test]
    fn rejects_irrelevant_fields() {
        assert!(parse(
            r#"{"protocol":"avg-trusted","topology":{"family":"ring","n":2},"inputs":[1,2],"c":2}"#
        )
        .is_err());
        assert!(parse(
            r#"{"protocol":"outlier","topology":{"family":"ring","n":2},"inputs":[1,2]}"#
        )
        .is_err());
        assert!(parse(
            r#"{"protocol":"avg-trusted","topology":{"family":"ring","n":2},"inputs":[1,2],"bogus":1}"#
        )
        .is_err());
        assert!(parse(
            r#"{"protocol":"election","topology":{"family":"ring","n":2},"inputs":[1,2]}"#
        )
        .is_err());
    }

    #[test]
    fn ballots_parse_and_validate() {
        let ok = r#"{"protocol":"election","topology":{"family":"ring","n":3},
            "inputs":[{"primary":0,"secondary":1},{"primary":2},{"primary":0}]}"#;
        assert!(parse(ok).is_ok());
        let same = r#"{"protocol":"election","topology":{"family":"ring","n":3},
            "inputs":[{"primary":0,"secondary":0},{"primary":2},{"primary":0}]}"#;
        assert!(parse(same).is_err());
    }

    #[test]
    fn generators_are_seeded() {
        let text = r#"{"protocol":"outlier","c":2,"topology":{"family":"random-connected","n":8},
            "inputs":{"generator":"uniform","extremes":{"count":1,"low":5000,"high":6000}},"seed":3}"#;
        let c = parse(text).unwrap();
        let a = c.resolve(1).unwrap();
        let b = c.resolve(1).unwrap();
        assert_eq!(a.topology, b.topology);
        assert_eq!(a.inputs, b.inputs);
        let Inputs::Values(v) = &a.inputs else {
            panic!()
        };
        assert_eq!(v.iter().filter(|x| **x >= 5000.0).count(), 1);
        assert_ne!(c.resolve(2).unwrap().inputs, a.inputs);
    }

    #[test]
    fn crash_plan_checks() {
        let star_center = r#"{"protocol":"avg-trusted","topology":{"family":"star","n":4},
            "inputs":[1,2,3,4],"faults":{"crashes":[{"process":0,"at":{"tick":1}}]}}"#;
        assert!(parse(star_center).is_err());
        let allowed = r#"{"protocol":"avg-trusted","topology":{"family":"star","n":4},
            "inputs":[1,2,3,4],"faults":{"crashes":[{"process":0,"at":{"tick":1}}],
            "expect_termination":false}}"#;
        assert!(parse(allowed).is_ok());
        let bad_round = r#"{"protocol":"outlier","c":1,"variance_route":"encrypted",
            "topology":{"family":"ring","n":4},"inputs":[1,2,3,4],
            "faults":{"crashes":[{"process":0,"at":{"before_round":2}}]}}"#;
        assert!(parse(bad_round).is_err());
    }
}
