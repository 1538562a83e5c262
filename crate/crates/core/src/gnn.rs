//! Message-passing encoders (GCN, GIN, SAGE-mean), edge composition and the
//! MLP edge scorer.
//!
//! Every model has two forward paths:
//!
//! * a taped path ([`LinkModel::encode_taped`], [`LinkModel::logits_taped`])
//!   used for training, built from sparse-dense products over the whole graph;
//! * a row-wise inference path ([`LinkModel::encode_layers`]) that computes
//!   any subset of rows with the same arithmetic as the full pass. The
//!   counterfactual machinery relies on this to recompute only the rows an
//!   edge toggle can reach and still match a full recomputation bit-for-bit.

use std::collections::HashMap;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::graph::{gcn_weight, mean_adjacency, normalized_adjacency, sum_adjacency, with_self_loop, Adjacency, Edge};
use crate::tensor::{relu, xavier_uniform, CsrMatrix, DenseMatrix, ParamId, ParamSet, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Gcn,
    Gin,
    Sage,
}

impl FromStr for EncoderKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(Self::Gcn),
            "gin" => Ok(Self::Gin),
            "sage" => Ok(Self::Sage),
            other => contract(format!("unknown encoder '{other}' (expected gcn|gin|sage)")),
        }
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Gcn => "gcn",
            Self::Gin => "gin",
            Self::Sage => "sage",
        })
    }
}

/// Order-invariant edge composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Psi {
    Hadamard,
    Sum,
    ConcatSym,
    /// Inner product scorer: the edge embedding is the Hadamard product and
    /// the logit is its sum, with no MLP.
    Dot,
}

impl FromStr for Psi {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hadamard" => Ok(Self::Hadamard),
            "sum" => Ok(Self::Sum),
            "concat-sym" | "concat" => Ok(Self::ConcatSym),
            "dot" => Ok(Self::Dot),
            other => contract(format!("unknown psi '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, layers: usize, hidden_dim: usize, out_dim: usize) -> Self {
        Self {
            kind,
            layers,
            hidden_dim,
            out_dim,
        }
    }

    /// Per-model defaults for a two-layer encoder.
    pub fn default_for(kind: EncoderKind) -> Self {
        match kind {
            EncoderKind::Gcn => Self::new(kind, 2, 32, 16),
            EncoderKind::Gin => Self::new(kind, 2, 64, 16),
            EncoderKind::Sage => Self::new(kind, 2, 128, 64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers) {
            return contract(format!("layer count {} outside 1..=3", self.layers));
        }
        if self.hidden_dim == 0 || self.out_dim == 0 {
            return contract("encoder dims must be positive");
        }
        Ok(())
    }

    fn layer_dims(&self, in_dim: usize, l: usize) -> (usize, usize) {
        let d_in = if l == 0 { in_dim } else { self.hidden_dim };
        let d_out = if l + 1 == self.layers { self.out_dim } else { self.hidden_dim };
        (d_in, d_out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub psi: Psi,
    pub hidden_dim: usize,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            psi: Psi::Hadamard,
            hidden_dim: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub scorer: ScorerConfig,
    pub in_dim: usize,
}

impl ModelConfig {
    pub fn edge_dim(&self) -> usize {
        match self.scorer.psi {
            Psi::ConcatSym => 2 * self.encoder.out_dim,
            _ => self.encoder.out_dim,
        }
    }
}

/// `ψ(h_u, h_v)` for one pair of node embeddings.
pub fn edge_embedding(h_u: &[f64], h_v: &[f64], psi: Psi) -> Result<Vec<f64>> {
    if h_u.len() != h_v.len() {
        return Err(Error::Dimension {
            op: "edge_embedding",
            left: (1, h_u.len()),
            right: (1, h_v.len()),
        });
    }
    let pairs = h_u.iter().zip(h_v);
    Ok(match psi {
        Psi::Hadamard | Psi::Dot => pairs.map(|(a, b)| a * b).collect(),
        Psi::Sum => pairs.map(|(a, b)| a + b).collect(),
        Psi::ConcatSym => {
            let lo = h_u.iter().zip(h_v).map(|(a, b)| a.min(*b));
            let hi = h_u.iter().zip(h_v).map(|(a, b)| a.max(*b));
            lo.chain(hi).collect()
        }
    })
}

/// Sparse operators of one graph, built once per training run.
#[derive(Clone, Debug)]
pub struct GraphOperators {
    pub normalized: Arc<CsrMatrix>,
    pub sum: Arc<CsrMatrix>,
    pub mean: Arc<CsrMatrix>,
}

impl GraphOperators {
    pub fn new<A: Adjacency>(g: &A) -> Self {
        Self {
            normalized: normalized_adjacency(g).matrix().clone(),
            sum: sum_adjacency(g),
            mean: mean_adjacency(g),
        }
    }
}

/// Read access to one layer's rows, with freshly recomputed rows taking
/// precedence over a cached matrix.
pub struct RowOverlay<'a> {
    base: &'a DenseMatrix,
    fresh: Option<&'a HashMap<usize, Vec<f64>>>,
}

impl<'a> RowOverlay<'a> {
    pub fn new(base: &'a DenseMatrix, fresh: Option<&'a HashMap<usize, Vec<f64>>>) -> Self {
        Self { base, fresh }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &'a [f64] {
        if let Some(f) = self.fresh.and_then(|m| m.get(&i)) {
            return f;
        }
        self.base.row(i)
    }

    pub fn cols(&self) -> usize {
        self.base.cols()
    }
}

/// Encoder + scorer parameters with their configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkModel {
    pub config: ModelConfig,
    pub params: ParamSet,
}

fn pname(l: usize, what: &str) -> String {
    format!("enc.{l}.{what}")
}

impl LinkModel {
    /// Xavier-uniform weights, zero biases, GIN `ε = 0`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        if config.in_dim == 0 {
            return contract("input feature dim must be positive");
        }
        if config.scorer.hidden_dim == 0 && config.scorer.psi != Psi::Dot {
            return contract("scorer hidden dim must be positive");
        }
        let mut rng = crate::graph::rng_from_seed(seed);
        let mut params = ParamSet::new();
        let enc = &config.encoder;
        for l in 0..enc.layers {
            let (d_in, d_out) = enc.layer_dims(config.in_dim, l);
            match enc.kind {
                EncoderKind::Gcn => {
                    params.push(pname(l, "w"), xavier_uniform(&mut rng, d_in, d_out));
                    params.push(pname(l, "b"), DenseMatrix::zeros(1, d_out));
                }
                EncoderKind::Sage => {
                    params.push(pname(l, "w"), xavier_uniform(&mut rng, 2 * d_in, d_out));
                    params.push(pname(l, "b"), DenseMatrix::zeros(1, d_out));
                }
                EncoderKind::Gin => {
                    let mid = enc.hidden_dim;
                    params.push(pname(l, "eps"), DenseMatrix::scalar(0.0));
                    params.push(pname(l, "w1"), xavier_uniform(&mut rng, d_in, mid));
                    params.push(pname(l, "b1"), DenseMatrix::zeros(1, mid));
                    params.push(pname(l, "w2"), xavier_uniform(&mut rng, mid, d_out));
                    params.push(pname(l, "b2"), DenseMatrix::zeros(1, d_out));
                }
            }
        }
        if config.scorer.psi != Psi::Dot {
            let e = config.edge_dim();
            let h = config.scorer.hidden_dim;
            params.push("score.w1", xavier_uniform(&mut rng, e, h));
            params.push("score.b1", DenseMatrix::zeros(1, h));
            params.push("score.w2", xavier_uniform(&mut rng, h, 1));
            params.push("score.b2", DenseMatrix::zeros(1, 1));
        }
        Ok(Self { config, params })
    }

    pub fn layers(&self) -> usize {
        self.config.encoder.layers
    }

    fn p(&self, name: &str) -> Result<&DenseMatrix> {
        self.params
            .id_of(name)
            .map(|id| self.params.get(id))
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))
    }

    fn check_features<A: Adjacency>(&self, g: &A, x: &DenseMatrix) -> Result<()> {
        if x.rows() != g.node_count() || x.cols() != self.config.in_dim {
            return Err(Error::Dimension {
                op: "encode",
                left: x.shape(),
                right: (g.node_count(), self.config.in_dim),
            });
        }
        Ok(())
    }

    /// Aggregated input of layer `l` for row `i`.
    fn aggregate_row<A: Adjacency>(&self, g: &A, prev: &RowOverlay<'_>, l: usize, i: usize) -> Result<Vec<f64>> {
        let d = prev.cols();
        let neigh = g.neighbors(i);
        Ok(match self.config.encoder.kind {
            EncoderKind::Gcn => {
                let deg_i = neigh.len();
                let mut out = vec![0.0; d];
                for j in with_self_loop(&neigh, i) {
                    let w = gcn_weight(deg_i, g.degree(j));
                    for (o, &v) in out.iter_mut().zip(prev.row(j)) {
                        *o += w * v;
                    }
                }
                out
            }
            EncoderKind::Sage => {
                let mut mean = vec![0.0; d];
                if !neigh.is_empty() {
                    let w = 1.0 / neigh.len() as f64;
                    for &j in neigh.iter() {
                        for (o, &v) in mean.iter_mut().zip(prev.row(j)) {
                            *o += w * v;
                        }
                    }
                }
                let mut out = prev.row(i).to_vec();
                out.extend_from_slice(&mean);
                out
            }
            EncoderKind::Gin => {
                let scale = 1.0 + self.p(&pname(l, "eps"))?.data()[0];
                let mut out = vec![0.0; d];
                for &j in neigh.iter() {
                    for (o, &v) in out.iter_mut().zip(prev.row(j)) {
                        *o += v;
                    }
                }
                for (o, &v) in out.iter_mut().zip(prev.row(i)) {
                    *o += v * scale;
                }
                out
            }
        })
    }

    /// Dense transform of stacked aggregated rows for layer `l`.
    fn transform(&self, l: usize, agg: &DenseMatrix) -> Result<DenseMatrix> {
        let last = l + 1 == self.layers();
        let out = match self.config.encoder.kind {
            EncoderKind::Gcn | EncoderKind::Sage => {
                agg.matmul(self.p(&pname(l, "w"))?)?.add_row(self.p(&pname(l, "b"))?)?
            }
            EncoderKind::Gin => {
                let hidden = agg
                    .matmul(self.p(&pname(l, "w1"))?)?
                    .add_row(self.p(&pname(l, "b1"))?)?
                    .map(relu);
                hidden.matmul(self.p(&pname(l, "w2"))?)?.add_row(self.p(&pname(l, "b2"))?)?
            }
        };
        Ok(if last { out } else { out.map(relu) })
    }

    /// Computes rows `rows` of layer `l + 1` from layer `l`.
    pub fn layer_rows<A: Adjacency>(
        &self,
        g: &A,
        prev: &RowOverlay<'_>,
        l: usize,
        rows: &[usize],
    ) -> Result<DenseMatrix> {
        let aggs = rows
            .iter()
            .map(|&i| self.aggregate_row(g, prev, l, i))
            .collect::<Result<Vec<_>>>()?;
        let width = match self.config.encoder.kind {
            EncoderKind::Sage => 2 * prev.cols(),
            _ => prev.cols(),
        };
        let agg = if aggs.is_empty() {
            DenseMatrix::zeros(0, width)
        } else {
            DenseMatrix::from_rows(&aggs)?
        };
        self.transform(l, &agg)
    }

    /// All layer outputs `[X, H¹, …, Hᴸ]` by the row-wise path.
    pub fn encode_layers<A: Adjacency>(&self, g: &A, x: &DenseMatrix) -> Result<Vec<DenseMatrix>> {
        self.check_features(g, x)?;
        let all: Vec<usize> = (0..g.node_count()).collect();
        let mut layers = vec![x.clone()];
        for l in 0..self.layers() {
            let next = self.layer_rows(g, &RowOverlay::new(&layers[l], None), l, &all)?;
            layers.push(next);
        }
        Ok(layers)
    }

    /// Final node embeddings.
    pub fn encode<A: Adjacency>(&self, g: &A, x: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.encode_layers(g, x)?.pop().expect("at least the input layer"))
    }

    /// Edge embeddings `ψ(h_u, h_v)` stacked by row.
    pub fn edge_embeddings(&self, h: &DenseMatrix, edges: &[Edge]) -> Result<DenseMatrix> {
        let rows = edges
            .iter()
            .map(|&(u, v)| edge_embedding(h.row(u), h.row(v), self.config.scorer.psi))
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Ok(DenseMatrix::zeros(0, self.config.edge_dim()));
        }
        DenseMatrix::from_rows(&rows)
    }

    /// Logits for stacked edge embeddings.
    pub fn score_embeddings(&self, h_uv: &DenseMatrix) -> Result<Vec<f64>> {
        if h_uv.cols() != self.config.edge_dim() {
            return Err(Error::Dimension {
                op: "score_edge",
                left: h_uv.shape(),
                right: (h_uv.rows(), self.config.edge_dim()),
            });
        }
        if self.config.scorer.psi == Psi::Dot {
            return Ok((0..h_uv.rows()).map(|r| h_uv.row(r).iter().sum()).collect());
        }
        let hidden = h_uv
            .matmul(self.p("score.w1")?)?
            .add_row(self.p("score.b1")?)?
            .map(relu);
        let out = hidden.matmul(self.p("score.w2")?)?.add_row(self.p("score.b2")?)?;
        Ok(out.into_data())
    }

    /// Logit of one edge embedding.
    pub fn score_edge(&self, h_uv: &[f64]) -> Result<f64> {
        let m = DenseMatrix::new(1, h_uv.len(), h_uv.to_vec())?;
        Ok(self.score_embeddings(&m)?[0])
    }

    pub fn logits(&self, h: &DenseMatrix, edges: &[Edge]) -> Result<Vec<f64>> {
        self.score_embeddings(&self.edge_embeddings(h, edges)?)
    }

    /// Puts every parameter on the tape, indexed by [`ParamId`].
    pub fn load_params(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|(id, _, value)| tape.param(id, value.clone()))
            .collect()
    }

    fn var(&self, vars: &[Var], name: &str) -> Result<Var> {
        self.params
            .id_of(name)
            .map(|ParamId(i)| vars[i])
            .ok_or_else(|| Error::Data(format!("missing parameter '{name}'")))
    }

    /// Taped encoder forward over the whole graph.
    pub fn encode_taped(&self, tape: &mut Tape, vars: &[Var], ops: &GraphOperators, x: Var) -> Result<Var> {
        let mut h = x;
        for l in 0..self.layers() {
            let last = l + 1 == self.layers();
            let out = match self.config.encoder.kind {
                EncoderKind::Gcn => {
                    let agg = tape.spmm(ops.normalized.clone(), h)?;
                    let z = tape.matmul(agg, self.var(vars, &pname(l, "w"))?)?;
                    tape.add_row_bias(z, self.var(vars, &pname(l, "b"))?)?
                }
                EncoderKind::Sage => {
                    let mean = tape.spmm(ops.mean.clone(), h)?;
                    let agg = tape.concat_cols(h, mean)?;
                    let z = tape.matmul(agg, self.var(vars, &pname(l, "w"))?)?;
                    tape.add_row_bias(z, self.var(vars, &pname(l, "b"))?)?
                }
                EncoderKind::Gin => {
                    let eps = self.var(vars, &pname(l, "eps"))?;
                    let one_plus = tape.add_scalar(eps, 1.0)?;
                    let own = tape.scale_by(h, one_plus)?;
                    let neigh = tape.spmm(ops.sum.clone(), h)?;
                    let agg = tape.add(own, neigh)?;
                    let z1 = tape.matmul(agg, self.var(vars, &pname(l, "w1"))?)?;
                    let z1 = tape.add_row_bias(z1, self.var(vars, &pname(l, "b1"))?)?;
                    let a1 = tape.relu(z1)?;
                    let z2 = tape.matmul(a1, self.var(vars, &pname(l, "w2"))?)?;
                    tape.add_row_bias(z2, self.var(vars, &pname(l, "b2"))?)?
                }
            };
            h = if last { out } else { tape.relu(out)? };
        }
        Ok(h)
    }

    /// Taped logits (column vector) for `edges` given taped embeddings `h`.
    pub fn logits_taped(&self, tape: &mut Tape, vars: &[Var], h: Var, edges: &[Edge]) -> Result<Var> {
        let us = tape.gather_rows(h, Arc::new(edges.iter().map(|e| e.0).collect()))?;
        let vs = tape.gather_rows(h, Arc::new(edges.iter().map(|e| e.1).collect()))?;
        let h_uv = match self.config.scorer.psi {
            Psi::Hadamard | Psi::Dot => tape.mul(us, vs)?,
            Psi::Sum => tape.add(us, vs)?,
            Psi::ConcatSym => {
                let lo = tape.min(us, vs)?;
                let hi = tape.max(us, vs)?;
                tape.concat_cols(lo, hi)?
            }
        };
        if self.config.scorer.psi == Psi::Dot {
            return tape.row_sum(h_uv);
        }
        let z1 = tape.matmul(h_uv, self.var(vars, "score.w1")?)?;
        let z1 = tape.add_row_bias(z1, self.var(vars, "score.b1")?)?;
        let a1 = tape.relu(z1)?;
        let z2 = tape.matmul(a1, self.var(vars, "score.w2")?)?;
        tape.add_row_bias(z2, self.var(vars, "score.b2")?)
    }
}
