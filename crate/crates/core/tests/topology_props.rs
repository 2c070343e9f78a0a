use std::collections::BTreeSet;

use consentry::process::ProcessId;
use consentry::topology::Topology;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn floyd(t: &Topology) -> Option<usize> {
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

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_connected_graphs_are_connected(n in 1usize..24, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Topology::default_edge_probability(n);
        let t = Topology::random_connected(n, p, &mut rng).unwrap();
        prop_assert!(t.is_connected());
        prop_assert_eq!(t.diameter().ok(), floyd(&t));
    }

    #[test]
    fn tree_cut_vertices_are_the_inner_nodes(n in 3usize..20, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Topology::random_tree(n, &mut rng);
        prop_assert_eq!(t.edge_count(), n - 1);
        for p in t.processes() {
            let survives = t.connected_without(&BTreeSet::from([p])).unwrap();
            prop_assert_eq!(survives, t.degree(p) == 1, "process {}", p);
        }
    }

    #[test]
    fn json_round_trip(n in 1usize..16, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Topology::random_connected(n, 0.4, &mut rng).unwrap();
        prop_assert_eq!(Topology::from_json(&t.to_json()).unwrap(), t);
    }
}

#[test]
fn family_diameters() {
    assert_eq!(Topology::ring(8).diameter().unwrap(), 4);
    assert_eq!(Topology::path(8).diameter().unwrap(), 7);
    assert_eq!(Topology::star(8).diameter().unwrap(), 2);
    assert_eq!(Topology::complete(8).diameter().unwrap(), 1);
    assert!(!Topology::star(5)
        .connected_without(&BTreeSet::from([ProcessId(0)]))
        .unwrap());
}
