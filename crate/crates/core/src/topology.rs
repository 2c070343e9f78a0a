//! Communication graphs: loading, generation, connectivity and diameter.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::process::ProcessId;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("process id {id} out of range for n = {n}")]
    OutOfRange { id: usize, n: usize },
    #[error("self-loop on process {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("graph is not connected")]
    Disconnected,
    #[error("cannot remove every process from the graph")]
    RemovesAll,
    #[error("{0} labels given for {1} processes")]
    LabelCount(usize, usize),
    #[error("unknown topology family `{0}`")]
    UnknownFamily(String),
    #[error("could not generate a connected graph after {0} attempts")]
    GenerationFailed(usize),
    #[error("reading topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing topology file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyFile {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

/// Undirected simple graph over processes `0..n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    adjacency: Vec<BTreeSet<ProcessId>>,
    labels: Option<Vec<String>>,
}

impl Topology {
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, TopologyError> {
        let mut adjacency = vec![BTreeSet::new(); n];
        for (a, b) in edges {
            for id in [a, b] {
                if id >= n {
                    return Err(TopologyError::OutOfRange { id, n });
                }
            }
            if a == b {
                return Err(TopologyError::SelfLoop(a));
            }
            if !adjacency[a].insert(ProcessId(b)) {
                return Err(TopologyError::DuplicateEdge(a.min(b), a.max(b)));
            }
            adjacency[b].insert(ProcessId(a));
        }
        Ok(Topology {
            adjacency,
            labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, TopologyError> {
        if labels.len() != self.n() {
            return Err(TopologyError::LabelCount(labels.len(), self.n()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let file: TopologyFile = serde_json::from_str(text)?;
        let topo = Topology::new(file.n, file.edges.into_iter().map(|[a, b]| (a, b)))?;
        match file.labels {
            Some(labels) => topo.with_labels(labels),
            None => Ok(topo),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let file = TopologyFile {
            n: self.n(),
            edges: self.edges().into_iter().map(|(a, b)| [a.0, b.0]).collect(),
            labels: self.labels.clone(),
        };
        serde_json::to_string(&file).expect("topology serializes")
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> {
        (0..self.n()).map(ProcessId)
    }

    /// Each edge once, as `(low, high)`.
    pub fn edges(&self) -> Vec<(ProcessId, ProcessId)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(a, peers)| {
                peers
                    .iter()
                    .filter(move |b| b.0 > a)
                    .map(move |&b| (ProcessId(a), b))
            })
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, id: ProcessId) -> Result<&BTreeSet<ProcessId>, TopologyError> {
        self.adjacency.get(id.0).ok_or(TopologyError::OutOfRange {
            id: id.0,
            n: self.n(),
        })
    }

    pub fn degree(&self, id: ProcessId) -> usize {
        self.adjacency.get(id.0).map_or(0, BTreeSet::len)
    }

    pub fn has_edge(&self, a: ProcessId, b: ProcessId) -> bool {
        self.adjacency.get(a.0).is_some_and(|s| s.contains(&b))
    }

    /// BFS hop distances from `source`, skipping `removed` vertices.
    fn distances(&self, source: usize, removed: &BTreeSet<ProcessId>) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for v in &self.adjacency[u] {
                if dist[v.0].is_none() && !removed.contains(v) {
                    dist[v.0] = Some(d + 1);
                    queue.push_back(v.0);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        if self.n() == 0 {
            return true;
        }
        self.distances(0, &BTreeSet::new())
            .iter()
            .all(Option::is_some)
    }

    /// Largest shortest-path length over all pairs.
    pub fn diameter(&self) -> Result<usize, TopologyError> {
        self.diameter_without(&BTreeSet::new())
    }

    /// Diameter of the subgraph induced by the vertices not in `removed`.
    pub fn diameter_without(&self, removed: &BTreeSet<ProcessId>) -> Result<usize, TopologyError> {
        let mut best = 0;
        for s in self.processes().filter(|p| !removed.contains(p)) {
            let dist = self.distances(s.0, removed);
            for (v, d) in dist.iter().enumerate() {
                if removed.contains(&ProcessId(v)) {
                    continue;
                }
                best = best.max(d.ok_or(TopologyError::Disconnected)?);
            }
        }
        Ok(best)
    }

    /// Whether the graph stays connected once `removed` vertices are gone.
    pub fn connected_without(&self, removed: &BTreeSet<ProcessId>) -> Result<bool, TopologyError> {
        for p in removed {
            if p.0 >= self.n() {
                return Err(TopologyError::OutOfRange {
                    id: p.0,
                    n: self.n(),
                });
            }
        }
        let Some(start) = self.processes().find(|p| !removed.contains(p)) else {
            return Err(TopologyError::RemovesAll);
        };
        let dist = self.distances(start.0, removed);
        Ok(self
            .processes()
            .all(|p| removed.contains(&p) || dist[p.0].is_some()))
    }

    pub fn path(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (i - 1, i))).expect("path is simple")
    }

    /// Cycle for `n >= 3`; degenerates to a path below that.
    pub fn ring(n: usize) -> Self {
        if n < 3 {
            return Self::path(n);
        }
        Self::new(n, (0..n).map(|i| (i, (i + 1) % n))).expect("ring is simple")
    }

    /// Star centred on process 0.
    pub fn star(n: usize) -> Self {
        Self::new(n, (1..n).map(|i| (0, i))).expect("star is simple")
    }

    pub fn complete(n: usize) -> Self {
        Self::new(n, (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b)))).expect("simple")
    }

    /// Uniform random recursive tree: vertex `i` attaches to a random `j < i`.
    pub fn random_tree(n: usize, rng: &mut impl Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        let edges: Vec<_> = (1..n)
            .map(|i| (order[rng.gen_range(0..i)], order[i]))
            .collect();
        Self::new(n, edges).expect("tree is simple")
    }

    /// Erdős–Rényi `G(n, p)`, redrawn until connected.
    pub fn random_connected(n: usize, p: f64, rng: &mut impl Rng) -> Result<Self, TopologyError> {
        const ATTEMPTS: usize = 10_000;
        for _ in 0..ATTEMPTS {
            let mut edges = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen_bool(p.clamp(0.0, 1.0)) {
                        edges.push((a, b));
                    }
                }
            }
            let topo = Self::new(n, edges)?;
            if topo.is_connected() {
                return Ok(topo);
            }
        }
        Err(TopologyError::GenerationFailed(ATTEMPTS))
    }

    /// Edge probability used when a random family does not name one.
    pub fn default_edge_probability(n: usize) -> f64 {
        if n <= 2 {
            1.0
        } else {
            (2.0 * (n as f64).ln() / n as f64).min(1.0)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set(ids: &[usize]) -> BTreeSet<ProcessId> {
        ids.iter().copied().map(ProcessId).collect()
    }

    /// All-pairs distances by repeated relaxation; independent of BFS.
    fn floyd_diameter(t: &Topology) -> Option<usize> {
        let n = t.n();
        let inf = usize::MAX / 4;
        let mut d = vec![vec![inf; n]; n];
        for (i, row) in d.iter_mut().enumerate() {
            row[i] = 0;
        }
        for (a, b) in t.edges() {
            d[a.0][b.0] = 1;
            d[b.0][a.0] = 1;
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    d[i][j] = d[i][j].min(d[i][k] + d[k][j]);
                }
            }
        }
        let m = d.iter().flatten().copied().max().unwrap_or(0);
        (m < inf).then_some(m)
    }

    #[test]
    fn neighbors_examples() {
        let p = Topology::path(3);
        assert_eq!(p.neighbors(ProcessId(1)).unwrap(), &set(&[0, 2]));
        let iso = Topology::new(2, []).unwrap();
        assert!(iso.neighbors(ProcessId(0)).unwrap().is_empty());
        let k4 = Topology::complete(4);
        assert_eq!(k4.neighbors(ProcessId(0)).unwrap(), &set(&[1, 2, 3]));
        assert!(matches!(
            k4.neighbors(ProcessId(4)),
            Err(TopologyError::OutOfRange { id: 4, n: 4 })
        ));
    }

    #[test]
    fn connectivity_examples() {
        assert!(Topology::new(1, []).unwrap().is_connected());
        assert!(!Topology::new(2, []).unwrap().is_connected());
        assert!(Topology::ring(5).is_connected());
    }

    #[test]
    fn diameter_examples() {
        for n in 2..7 {
            assert_eq!(Topology::complete(n).diameter().unwrap(), 1);
        }
        assert_eq!(Topology::path(4).diameter().unwrap(), 3);
        assert_eq!(Topology::ring(6).diameter().unwrap(), 3);
        assert!(matches!(
            Topology::new(3, [(0, 1)]).unwrap().diameter(),
            Err(TopologyError::Disconnected)
        ));
    }

    #[test]
    fn removal_examples() {
        let star = Topology::star(5);
        assert!(!star.connected_without(&set(&[0])).unwrap());
        let ring = Topology::ring(5);
        for i in 0..5 {
            assert!(ring.connected_without(&set(&[i])).unwrap());
        }
        // 0-1, 1-2, 1-3, 3-4: leaves are 0, 2, 4
        let tree = Topology::new(5, [(0, 1), (1, 2), (1, 3), (3, 4)]).unwrap();
        for leaf in [0, 2, 4] {
            assert!(tree.connected_without(&set(&[leaf])).unwrap());
        }
        assert!(!tree.connected_without(&set(&[1])).unwrap());
        assert!(matches!(
            tree.connected_without(&set(&[0, 1, 2, 3, 4])),
            Err(TopologyError::RemovesAll)
        ));
    }

    #[test]
    fn loader_rejects_malformed_files() {
        let ok = Topology::from_json(r#"{"n": 3, "edges": [[0,1],[1,2]]}"#).unwrap();
        assert_eq!(ok, Topology::path(3));
        assert!(matches!(
            Topology::from_json(r#"{"n": 3, "edges": [[0,1],[1,0]]}"#),
            Err(TopologyError::DuplicateEdge(0, 1))
        ));
        assert!(matches!(
            Topology::from_json(r#"{"n": 3, "edges": [[1,1]]}"#),
            Err(TopologyError::SelfLoop(1))
        ));
        assert!(matches!(
            Topology::from_json(r#"{"n": 3, "edges": [[0,3]]}"#),
            Err(TopologyError::OutOfRange { id: 3, n: 3 })
        ));
        assert!(Topology::from_json(r#"{"n": 2, "edges": [], "extra": 1}"#).is_err());
    }

    #[test]
    fn json_round_trip_keeps_labels() {
        let t = Topology::ring(4)
            .with_labels(vec!["a".into(), "b".into(), "c".into(), "d".into()])
            .unwrap();
        assert_eq!(Topology::from_json(&t.to_json()).unwrap(), t);
    }

    #[test]
    fn generators_match_floyd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..12 {
            let trees = [Topology::random_tree(n, &mut rng)];
            let er = Topology::random_connected(n, 0.4, &mut rng).unwrap();
            for t in trees.iter().chain([&er]) {
                assert!(t.is_connected());
                assert_eq!(Some(t.diameter().unwrap()), floyd_diameter(t));
                if n >= 2 {
                    let d = t.diameter().unwrap();
                    assert!(d >= 1 && d < n);
                }
            }
            assert_eq!(trees[0].edge_count(), n.saturating_sub(1));
        }
    }

    #[test]
    fn removing_a_vertex_never_shortens_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let t = Topology::random_connected(8, 0.45, &mut rng).unwrap();
            for r in 0..8 {
                let removed = set(&[r]);
                for s in (0..8).filter(|&s| s != r) {
                    let before = t.distances(s, &BTreeSet::new());
                    let after = t.distances(s, &removed);
                    for v in (0..8).filter(|&v| v != r) {
                        if let Some(a) = after[v] {
                            assert!(a >= before[v].unwrap());
                        }
                    }
                }
            }
        }
    }
}
