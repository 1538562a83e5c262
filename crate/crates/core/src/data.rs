//! Dataset loading and synthetic graph generation.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::graph::{rng_from_seed, Adjacency, Edge, Graph};
use crate::tensor::DenseMatrix;

/// Node and feature counts of public benchmarks, checked when a loaded
/// dataset carries one of these names.
pub const KNOWN_DATASETS: &[(&str, usize, usize)] = &[
    ("cora", 2708, 1433),
    ("pubmed", 19717, 500),
    ("citeseer", 3327, 3703),
    ("twitch", 1912, 128),
    ("chameleon", 2277, 2325),
    ("bitcoin-alpha", 3783, 8),
    ("bitcoin-otc", 5881, 8),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub blocks: usize,
    pub nodes_per_block: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            blocks: 2,
            nodes_per_block: 200,
            p_in: 0.1,
            p_out: 0.01,
            feature_dim: 8,
        }
    }
}

/// Amplitude of the uniform noise added to the block-indicator features.
pub const SBM_FEATURE_NOISE: f64 = 0.5;

/// Stochastic block model. Node `i` belongs to block `i / nodes_per_block`;
/// its features are a one-hot block indicator (wrapped modulo
/// `feature_dim`) plus uniform noise in `±SBM_FEATURE_NOISE`.
pub fn generate_sbm(spec: &SbmSpec, seed: u64) -> Result<(Graph, DenseMatrix)> {
    let SbmSpec {
        blocks,
        nodes_per_block: k,
        p_in,
        p_out,
        feature_dim,
    } = *spec;
    if !(0.0 <= p_out && p_out < p_in && p_in <= 1.0) {
        return contract(format!("SBM needs 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}"));
    }
    if blocks == 0 || k == 0 || feature_dim == 0 {
        return contract("SBM needs at least one block, one node per block and one feature");
    }
    let n = blocks * k;
    let mut rng = rng_from_seed(seed);
    let mut edges: Vec<Edge> = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if u / k == v / k { p_in } else { p_out };
            if rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let mut x = DenseMatrix::zeros(n, feature_dim);
    for i in 0..n {
        for j in 0..feature_dim {
            let noise = rng.random_range(-SBM_FEATURE_NOISE..=SBM_FEATURE_NOISE);
            let indicator = if j == (i / k) % feature_dim { 1.0 } else { 0.0 };
            x.set(i, j, indicator + noise);
        }
    }
    Ok((Graph::from_edges(n, &edges)?, x))
}

/// Features for graphs that ship without any: `[degree, 1]` per node.
pub fn fallback_features(g: &Graph) -> DenseMatrix {
    let rows: Vec<Vec<f64>> = g.degrees().into_iter().map(|d| vec![d as f64, 1.0]).collect();
    if rows.is_empty() {
        return DenseMatrix::zeros(0, 2);
    }
    DenseMatrix::from_rows(&rows).expect("rows have equal width")
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn tokens(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty())
}

/// Parses an edge list: one `u v` pair of non-negative node ids per line,
/// separated by whitespace or a comma. Blank lines and `#` comments are
/// skipped.
pub fn parse_edge_list(text: &str) -> Result<Vec<Edge>> {
    content_lines(text)
        .map(|(line, l)| {
            let t: Vec<&str> = tokens(l).collect();
            if t.len() != 2 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 2 node ids, found {} fields", t.len()),
                });
            }
            let id = |s: &str| {
                s.parse::<usize>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("'{s}' is not a node id"),
                })
            };
            Ok((id(t[0])?, id(t[1])?))
        })
        .collect()
}

/// Parses a feature matrix: one comma- or whitespace-separated row of
/// numbers per node, in node-id order.
pub fn parse_features(text: &str) -> Result<DenseMatrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, l) in content_lines(text) {
        let row = tokens(l)
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("'{s}' is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} features, found {}", first.len(), row.len()),
                });
            }
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: "features must be finite".into(),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("feature file has no rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

/// Builds a graph from an edge list and optional features. Without
/// features the node count is `max id + 1` and [`fallback_features`] are
/// used; with features it is the feature row count, which must cover
/// every id.
pub fn assemble(edges: &[Edge], features: Option<DenseMatrix>) -> Result<(Graph, DenseMatrix)> {
    let max_id = edges.iter().map(|&(u, v)| u.max(v)).max();
    match features {
        Some(x) => {
            if let Some(m) = max_id {
                if m >= x.rows() {
                    return contract(format!(
                        "feature file has {} rows but the edge list uses node id {m}",
                        x.rows()
                    ));
                }
            }
            Ok((Graph::from_edges(x.rows(), edges)?, x))
        }
        None => {
            let n = max_id.map_or(0, |m| m + 1);
            let g = Graph::from_edges(n, edges)?;
            let x = fallback_features(&g);
            Ok((g, x))
        }
    }
}

pub fn load_dataset(edge_file: &Path, feature_file: Option<&Path>) -> Result<(Graph, DenseMatrix)> {
    let edges = parse_edge_list(&fs::read_to_string(edge_file)?)?;
    let features = feature_file
        .map(|p| fs::read_to_string(p).map_err(Error::from).and_then(|t| parse_features(&t)))
        .transpose()?;
    let (g, x) = assemble(&edges, features)?;
    if let Some(stem) = edge_file.file_stem().and_then(|s| s.to_str()) {
        check_known_dataset(stem, &g, &x, feature_file.is_some())?;
    }
    Ok((g, x))
}

/// Checks node and feature counts against [`KNOWN_DATASETS`] when `name`
/// is one of them. Unknown names pass.
pub fn check_known_dataset(name: &str, g: &Graph, x: &DenseMatrix, has_features: bool) -> Result<()> {
    let lower = name.to_ascii_lowercase();
    let Some(&(_, nodes, feats)) = KNOWN_DATASETS.iter().find(|(n, _, _)| *n == lower) else {
        return Ok(());
    };
    if has_features && (g.node_count() != nodes || x.cols() != feats) {
        return Err(Error::Data(format!(
            "{name}: expected {nodes} nodes and {feats} features, found {} and {}",
            g.node_count(),
            x.cols()
        )));
    }
    Ok(())
}
