//! Undirected simple graphs in CSR layout, plus the edge bookkeeping used by
//! link prediction: splits, negative sampling and single-edge toggles.

use std::borrow::Cow;
use std::collections::{BTreeSet, HashSet, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::tensor::CsrMatrix;

/// Unordered node pair stored as `(min, max)`.
pub type Edge = (usize, usize);

#[inline]
pub fn ordered(u: usize, v: usize) -> Edge {
    if u <= v {
        (u, v)
    } else {
        (v, u)
    }
}

/// Read-only neighborhood access shared by [`Graph`] and [`ToggledView`].
pub trait Adjacency {
    fn node_count(&self) -> usize;
    /// Neighbors of `i` in ascending order.
    fn neighbors(&self, i: usize) -> Cow<'_, [usize]>;
    fn degree(&self, i: usize) -> usize {
        self.neighbors(i).len()
    }
}

/// Undirected graph without self-loops or parallel edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
}

impl Graph {
    /// Builds a graph from arbitrary pairs. Pairs are symmetrized and
    /// deduplicated; self-loops are dropped.
    pub fn from_edges(n: usize, edges: &[Edge]) -> Result<Self> {
        let mut lists = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return contract(format!("edge ({u}, {v}) out of range for {n} nodes"));
            }
            if u == v {
                continue;
            }
            lists[u].push(v);
            lists[v].push(u);
        }
        Ok(Self::from_lists(lists))
    }

    fn from_lists(mut lists: Vec<Vec<usize>>) -> Self {
        let mut indptr = Vec::with_capacity(lists.len() + 1);
        let mut indices = Vec::new();
        indptr.push(0);
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
            indices.extend_from_slice(l);
            indptr.push(indices.len());
        }
        Self {
            n: lists.len(),
            indptr,
            indices,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indptr: vec![0; n + 1],
            indices: Vec::new(),
        }
    }

    pub fn edge_count(&self) -> usize {
        self.indices.len() / 2
    }

    pub fn adj(&self, i: usize) -> &[usize] {
        &self.indices[self.indptr[i]..self.indptr[i + 1]]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n && v < self.n && self.adj(u).binary_search(&v).is_ok()
    }

    /// All edges as `(u, v)` with `u < v`, in ascending order.
    pub fn edges(&self) -> Vec<Edge> {
        let mut out = Vec::with_capacity(self.edge_count());
        for u in 0..self.n {
            out.extend(self.adj(u).iter().filter(|&&v| v > u).map(|&v| (u, v)));
        }
        out
    }

    pub fn edge_set(&self) -> HashSet<Edge> {
        self.edges().into_iter().collect()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.adj(i).len()).collect()
    }

    /// Copy with the edge `(u, v)` added when absent or removed when present.
    pub fn toggle_edge(&self, u: usize, v: usize) -> Result<Graph> {
        let view = ToggledView::new(self, u, v)?;
        let lists = (0..self.n).map(|i| view.neighbors(i).into_owned()).collect();
        Ok(Self::from_lists(lists))
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return contract("permutation length must equal node count");
        }
        let edges: Vec<Edge> = self.edges().iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        Graph::from_edges(self.n, &edges)
    }
}

impl Adjacency for Graph {
    fn node_count(&self) -> usize {
        self.n
    }
    fn neighbors(&self, i: usize) -> Cow<'_, [usize]> {
        Cow::Borrowed(self.adj(i))
    }
}

/// A graph seen with one edge toggled, without copying the adjacency.
#[derive(Clone, Copy, Debug)]
pub struct ToggledView<'a> {
    base: &'a Graph,
    u: usize,
    v: usize,
    removed: bool,
}

impl<'a> ToggledView<'a> {
    pub fn new(base: &'a Graph, u: usize, v: usize) -> Result<Self> {
        if u == v {
            return contract(format!("cannot toggle self-loop ({u}, {u})"));
        }
        if u >= base.n || v >= base.n {
            return contract(format!("edge ({u}, {v}) out of range for {} nodes", base.n));
        }
        Ok(Self {
            base,
            u,
            v,
            removed: base.has_edge(u, v),
        })
    }

    /// True when the toggle removes an observed edge.
    pub fn removes(&self) -> bool {
        self.removed
    }

    pub fn endpoints(&self) -> Edge {
        (self.u, self.v)
    }
}

impl Adjacency for ToggledView<'_> {
    fn node_count(&self) -> usize {
        self.base.n
    }

    fn neighbors(&self, i: usize) -> Cow<'_, [usize]> {
        let other = if i == self.u {
            self.v
        } else if i == self.v {
            self.u
        } else {
            return Cow::Borrowed(self.base.adj(i));
        };
        let mut list = self.base.adj(i).to_vec();
        match list.binary_search(&other) {
            Ok(pos) => {
                list.remove(pos);
            }
            Err(pos) => list.insert(pos, other),
        }
        Cow::Owned(list)
    }
}

/// Weight `1/√((d_i+1)(d_j+1))` of the self-loop-augmented, symmetrically
/// normalized adjacency.
#[inline]
pub fn gcn_weight(deg_i: usize, deg_j: usize) -> f64 {
    1.0 / (((deg_i + 1) * (deg_j + 1)) as f64).sqrt()
}

/// `(D+I)^{-1/2}(A+I)(D+I)^{-1/2}` in sparse form.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    matrix: Arc<CsrMatrix>,
}

impl NormalizedAdjacency {
    pub fn matrix(&self) -> &Arc<CsrMatrix> {
        &self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }
}

/// Sorted neighbor list of `i` with `i` itself inserted in order.
pub fn with_self_loop(neigh: &[usize], i: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(neigh.len() + 1);
    let pos = neigh.partition_point(|&j| j < i);
    out.extend_from_slice(&neigh[..pos]);
    out.push(i);
    out.extend_from_slice(&neigh[pos..]);
    out
}

pub fn normalized_adjacency<A: Adjacency>(g: &A) -> NormalizedAdjacency {
    let n = g.node_count();
    let deg: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let rows = (0..n)
        .map(|i| {
            with_self_loop(&g.neighbors(i), i)
                .into_iter()
                .map(|j| (j, gcn_weight(deg[i], deg[j])))
                .collect()
        })
        .collect();
    NormalizedAdjacency {
        matrix: Arc::new(CsrMatrix::from_row_lists(n, rows)),
    }
}

/// Plain adjacency with unit weights (no self-loops).
pub fn sum_adjacency<A: Adjacency>(g: &A) -> Arc<CsrMatrix> {
    let n = g.node_count();
    let rows = (0..n)
        .map(|i| g.neighbors(i).iter().map(|&j| (j, 1.0)).collect())
        .collect();
    Arc::new(CsrMatrix::from_row_lists(n, rows))
}

/// Row-normalized adjacency: each neighbor weighted `1/deg(i)`.
pub fn mean_adjacency<A: Adjacency>(g: &A) -> Arc<CsrMatrix> {
    let n = g.node_count();
    let rows = (0..n)
        .map(|i| {
            let neigh = g.neighbors(i);
            let w = if neigh.is_empty() { 0.0 } else { 1.0 / neigh.len() as f64 };
            neigh.iter().map(|&j| (j, w)).collect()
        })
        .collect();
    Arc::new(CsrMatrix::from_row_lists(n, rows))
}

/// Train/validation/test partition of the edges with fixed evaluation negatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeSplit {
    pub train_pos: Vec<Edge>,
    pub val_pos: Vec<Edge>,
    pub test_pos: Vec<Edge>,
    pub val_neg: Vec<Edge>,
    pub test_neg: Vec<Edge>,
}

impl EdgeSplit {
    /// The graph used for message passing: training positives only.
    pub fn train_graph(&self, n: usize) -> Result<Graph> {
        Graph::from_edges(n, &self.train_pos)
    }
}

/// `(u, v, label)` record of the calibration set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationTriple {
    pub u: usize,
    pub v: usize,
    pub y: u8,
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shuffles the edges under `seed` and cuts them by `fractions`
/// (train, val, test). Validation and test negatives are drawn from the same
/// seeded stream, disjoint from each other and from the edge set.
pub fn split_edges(g: &Graph, fractions: (f64, f64, f64), seed: u64) -> Result<EdgeSplit> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return contract(format!("split fractions {fractions:?} must be in [0,1] and sum to 1"));
    }
    let m = g.edge_count();
    if m < 10 {
        return contract(format!("need at least 10 edges to split, got {m}"));
    }
    let mut rng = rng_from_seed(seed);
    let mut edges = g.edges();
    edges.shuffle(&mut rng);
    let n_val = (m as f64 * fv).floor() as usize;
    let n_test = (m as f64 * fs).floor() as usize;
    let n_train = m - n_val - n_test;
    let train_pos = edges[..n_train].to_vec();
    let val_pos = edges[n_train..n_train + n_val].to_vec();
    let test_pos = edges[n_train + n_val..].to_vec();

    let mut exclude = HashSet::new();
    let val_neg = sample_negative_edges(g, n_val, &mut rng, &exclude)?;
    exclude.extend(val_neg.iter().copied());
    let test_neg = sample_negative_edges(g, n_test, &mut rng, &exclude)?;
    Ok(EdgeSplit {
        train_pos,
        val_pos,
        test_pos,
        val_neg,
        test_neg,
    })
}

/// Draws `k` distinct unordered non-edges uniformly, avoiding `exclude`.
pub fn sample_negative_edges<R: Rng + ?Sized>(
    g: &Graph,
    k: usize,
    rng: &mut R,
    exclude: &HashSet<Edge>,
) -> Result<Vec<Edge>> {
    let n = g.n;
    let all_pairs = n * n.saturating_sub(1) / 2;
    let blocked = g.edge_count() + exclude.iter().filter(|&&(u, v)| u != v && !g.has_edge(u, v)).count();
    let available = all_pairs.saturating_sub(blocked);
    if k > available {
        return contract(format!("cannot sample {k} negatives: only {available} non-edges available"));
    }
    if k == 0 {
        return Ok(Vec::new());
    }

    let usable = |e: Edge| !g.has_edge(e.0, e.1) && !exclude.contains(&e);
    if 2 * k > available {
        // dense request: enumerate and take a random subset
        let mut pool: Vec<Edge> = (0..n)
            .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
            .filter(|&e| usable(e))
            .collect();
        let (picked, _) = pool.partial_shuffle(rng, k);
        return Ok(picked.to_vec());
    }

    let mut chosen = HashSet::with_capacity(k);
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u == v {
            continue;
        }
        let e = ordered(u, v);
        if usable(e) && chosen.insert(e) {
            out.push(e);
        }
    }
    Ok(out)
}

/// Nodes within `layers` hops of `u` or `v` in the graph with `(u, v)`
/// toggled, in ascending order.
pub fn receptive_field(g: &Graph, u: usize, v: usize, layers: usize) -> Result<Vec<usize>> {
    if layers == 0 {
        return contract("receptive field needs at least one layer");
    }
    let view = ToggledView::new(g, u, v)?;
    Ok(ball(&view, &[u, v], layers).into_iter().collect())
}

/// Nodes within `radius` hops of any seed.
pub fn ball<A: Adjacency>(g: &A, seeds: &[usize], radius: usize) -> BTreeSet<usize> {
    let mut dist = std::collections::HashMap::new();
    let mut queue = VecDeque::new();
    for &s in seeds {
        if dist.insert(s, 0usize).is_none() {
            queue.push_back(s);
        }
    }
    while let Some(x) = queue.pop_front() {
        let d = dist[&x];
        if d == radius {
            continue;
        }
        for &y in g.neighbors(x).iter() {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(y) {
                e.insert(d + 1);
                queue.push_back(y);
            }
        }
    }
    dist.into_keys().collect()
}
