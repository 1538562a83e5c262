mod oracles;

use std::collections::{HashMap, HashSet};

use edgecal::data::{generate_sbm, SbmSpec};
use edgecal::graph::{normalized_adjacency, receptive_field, sample_negative_edges, split_edges, Adjacency, Graph};
use proptest::prelude::*;
use rand::Rng;

fn sbm(nodes_per_block: usize, seed: u64) -> Graph {
    let spec = SbmSpec {
        nodes_per_block,
        ..SbmSpec::default()
    };
    generate_sbm(&spec, seed).unwrap().0
}

#[test]
fn negatives_never_hit_edges() {
    let g = sbm(100, 3);
    let edges = g.edge_set();
    let mut r = oracles::rng(4);
    let neg = sample_negative_edges(&g, 1000, &mut r, &HashSet::new()).unwrap();
    assert_eq!(neg.len(), 1000);
    assert!(neg.iter().all(|e| !edges.contains(e) && e.0 < e.1));
    assert_eq!(neg.iter().collect::<HashSet<_>>().len(), 1000);
}

#[test]
fn negatives_respect_exclusions() {
    let g = Graph::from_edges(6, &[(0, 1), (1, 2)]).unwrap();
    let exclude: HashSet<_> = [(0, 2), (3, 4)].into_iter().collect();
    let mut r = oracles::rng(0);
    let all = sample_negative_edges(&g, 11, &mut r, &exclude).unwrap();
    assert!(all.iter().all(|e| !exclude.contains(e) && !g.has_edge(e.0, e.1)));
    assert!(sample_negative_edges(&g, 12, &mut r, &exclude).is_err());
}

#[test]
fn receptive_field_matches_bfs() {
    for seed in 0..5 {
        let g = sbm(50, seed);
        let mut r = oracles::rng(seed);
        for _ in 0..20 {
            let u = r.random_range(0..g.node_count());
            let v = loop {
                let v = r.random_range(0..g.node_count());
                if v != u {
                    break v;
                }
            };
            // the toggled graph as a plain adjacency map
            let toggled: HashSet<(usize, usize)> = g.edge_set().symmetric_difference(&HashSet::from([(u.min(v), u.max(v))])).copied().collect();
            let mut adj: HashMap<usize, Vec<usize>> = HashMap::new();
            for &(a, b) in &toggled {
                adj.entry(a).or_default().push(b);
                adj.entry(b).or_default().push(a);
            }
            for depth in [1, 2] {
                let got = receptive_field(&g, u, v, depth).unwrap();
                let expected: Vec<usize> = oracles::bfs_ball(&adj, u, v, depth).into_iter().collect();
                assert_eq!(got, expected);
            }
        }
    }
}

#[test]
fn sbm_block_counts_within_three_sigma() {
    let spec = SbmSpec::default();
    let k = spec.nodes_per_block as f64;
    let pairs = k * (k - 1.0) / 2.0;
    let mean = spec.p_in * pairs;
    let sd = (pairs * spec.p_in * (1.0 - spec.p_in)).sqrt();
    for seed in 0..3 {
        let (g, _) = generate_sbm(&spec, seed).unwrap();
        for block in 0..spec.blocks {
            let inside = g
                .edges()
                .iter()
                .filter(|&&(u, v)| u / spec.nodes_per_block == block && v / spec.nodes_per_block == block)
                .count() as f64;
            assert!((inside - mean).abs() <= 3.0 * sd, "block {block}: {inside} vs {mean} ± {sd}");
        }
    }
}

#[test]
fn split_ratio_on_hundred_edges() {
    let edges: Vec<(usize, usize)> = (0..100).map(|i| (i, i + 1)).collect();
    let g = Graph::from_edges(101, &edges).unwrap();
    let s = split_edges(&g, (0.8, 0.1, 0.1), 5).unwrap();
    assert_eq!((s.train_pos.len(), s.val_pos.len(), s.test_pos.len()), (80, 10, 10));
    assert_eq!((s.val_neg.len(), s.test_neg.len()), (10, 10));
    let all: HashSet<_> = s.train_pos.iter().chain(&s.val_pos).chain(&s.test_pos).collect();
    assert_eq!(all.len(), 100);
    assert!(s.val_neg.iter().chain(&s.test_neg).all(|e| !g.has_edge(e.0, e.1)));
    assert!(s.val_neg.iter().all(|e| !s.test_neg.contains(e)));
    assert_eq!(s, split_edges(&g, (0.8, 0.1, 0.1), 5).unwrap());
}

#[test]
fn path_graph_normalization() {
    let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap();
    let a = normalized_adjacency(&g);
    assert!((a.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
    assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(a.get(0, 2), 0.0);
}

proptest! {
    #[test]
    fn toggling_twice_restores_graph(
        edges in prop::collection::vec((0usize..12, 0usize..12), 0..30),
        u in 0usize..12,
        v in 0usize..12,
    ) {
        prop_assume!(u != v);
        let edges: Vec<_> = edges.into_iter().filter(|(a, b)| a != b).collect();
        let g = Graph::from_edges(12, &edges).unwrap();
        let once = g.toggle_edge(u, v).unwrap();
        prop_assert_ne!(once.has_edge(u, v), g.has_edge(u, v));
        let diff = |x: usize, y: usize| x.abs_diff(y);
        prop_assert_eq!(diff(once.degree(u), g.degree(u)), 1);
        prop_assert_eq!(diff(once.degree(v), g.degree(v)), 1);
        prop_assert_eq!(once.toggle_edge(u, v).unwrap(), g);
    }

    #[test]
    fn normalized_rows_of_regular_graphs_are_uniform(n in 4usize..20) {
        // cycle: every node has degree 2
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        let g = Graph::from_edges(n, &edges).unwrap();
        let a = normalized_adjacency(&g);
        for i in 0..n {
            for j in [(i + n - 1) % n, i, (i + 1) % n] {
                prop_assert!((a.get(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
        }
    }
}
