//! Define-by-run reverse-mode differentiation over [`DenseMatrix`] values.
//!
//! A [`Tape`] is rebuilt for every forward pass. Leaves are either constants
//! or parameters tagged with a [`ParamId`]; [`Tape::backward`] accumulates
//! gradients for parameters into a [`GradientStore`].

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{contract, Error, Result};

use super::matrix::{relu, sigmoid, softplus};
use super::{CsrMatrix, DenseMatrix};

/// Identity of a trainable parameter across tapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Clip range applied to probabilities inside [`Tape::nll`].
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Min(Var, Var),
    Max(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    /// Matrix times a 1x1 variable.
    ScaleBy(Var, Var),
    Relu(Var),
    /// `relu(x·w1 + b1)·w2 + b2`, evaluated row by row without storing the
    /// hidden layer.
    Mlp2 {
        x: Var,
        w1: Var,
        b1: Var,
        w2: Var,
        b2: Var,
    },
    Sigmoid(Var),
    Softplus(Var),
    SpMM(Arc<CsrMatrix>, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    ConcatCols(Var, Var),
    ConcatRows(Var, Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    /// `Σ w_i x_i` with constant weights of the same shape.
    WeightedSum(Var, Arc<DenseMatrix>),
    /// Mean binary cross-entropy evaluated from logits.
    BceWithLogits(Var, Arc<Vec<f64>>),
    /// Summed negative log-likelihood of probabilities (clipped).
    Nll(Var, Arc<Vec<f64>>),
    /// `(1/M) Σ_b |Σ_{m∈b} (y_m − p_m)|` with bin membership frozen at
    /// record time.
    BinnedAbsResidual {
        x: Var,
        labels: Arc<Vec<f64>>,
        bins: Arc<Vec<usize>>,
        n_bins: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: DenseMatrix,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive operations in topological order.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Accumulated gradients keyed by parameter.
#[derive(Clone, Debug, Default)]
pub struct GradientStore {
    grads: BTreeMap<ParamId, DenseMatrix>,
}

impl GradientStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&DenseMatrix> {
        self.grads.get(&id)
    }

    pub fn reset(&mut self) {
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    fn accumulate(&mut self, id: ParamId, g: &DenseMatrix) {
        match self.grads.get_mut(&id) {
            Some(acc) => acc.add_assign(g),
            None => {
                self.grads.insert(id, g.clone());
            }
        }
    }
}

fn dim_err<T>(op: &'static str, a: &DenseMatrix, b: &DenseMatrix) -> Result<T> {
    Err(Error::Dimension {
        op,
        left: a.shape(),
        right: b.shape(),
    })
}

fn label_len_check(x: &DenseMatrix, labels: &[f64]) -> Result<()> {
    if x.cols() != 1 || x.rows() != labels.len() {
        return contract(format!(
            "expected a column of {} values, got {:?}",
            labels.len(),
            x.shape()
        ));
    }
    Ok(())
}

/// Equal-width bin index on `[0, 1]`, consistent with the edges `b / n_bins`.
pub fn bin_index(c: f64, n_bins: usize) -> usize {
    let nb = n_bins as f64;
    let mut idx = ((c * nb).floor().max(0.0) as usize).min(n_bins - 1);
    if idx > 0 && c < idx as f64 / nb {
        idx -= 1;
    } else if idx + 1 < n_bins && c >= (idx + 1) as f64 / nb {
        idx += 1;
    }
    idx
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: DenseMatrix) -> Var {
        self.push_leaf(value, Op::Constant, false)
    }

    pub fn param(&mut self, id: ParamId, value: DenseMatrix) -> Var {
        self.push_leaf(value, Op::Param(id), true)
    }

    fn push_leaf(&mut self, value: DenseMatrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        let value = eval(&op, &self.nodes)?;
        let needs_grad = operands(&op).iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::MatMul(a, b))
    }
    pub fn add_row_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.record(Op::AddRowBias(x, bias))
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div(a, b))
    }
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Min(a, b))
    }
    pub fn max(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Max(a, b))
    }
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(x, c))
    }
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        self.record(Op::AddScalar(x, c))
    }
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.record(Op::ScaleBy(x, s))
    }
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Relu(x))
    }
    /// Two-layer perceptron with a ReLU hidden layer. Gives the same values
    /// as the composed `matmul`/`add_row_bias`/`relu` chain with far fewer
    /// intermediate allocations.
    pub fn mlp2(&mut self, x: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
        self.record(Op::Mlp2 { x, w1, b1, w2, b2 })
    }
    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sigmoid(x))
    }
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Softplus(x))
    }
    pub fn spmm(&mut self, a: Arc<CsrMatrix>, x: Var) -> Result<Var> {
        self.record(Op::SpMM(a, x))
    }
    pub fn gather_rows(&mut self, x: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        self.record(Op::GatherRows(x, idx))
    }
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatCols(a, b))
    }
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::ConcatRows(a, b))
    }
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::RowSum(x))
    }
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Sum(x))
    }
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.record(Op::Mean(x))
    }
    pub fn weighted_sum(&mut self, x: Var, w: Arc<DenseMatrix>) -> Result<Var> {
        self.record(Op::WeightedSum(x, w))
    }
    pub fn bce_with_logits(&mut self, logits: Var, labels: Arc<Vec<f64>>) -> Result<Var> {
        self.record(Op::BceWithLogits(logits, labels))
    }
    pub fn nll(&mut self, probs: Var, labels: Arc<Vec<f64>>) -> Result<Var> {
        self.record(Op::Nll(probs, labels))
    }

    /// ECE-style residual with bins assigned from the current values of `x`.
    pub fn binned_abs_residual(&mut self, x: Var, labels: Arc<Vec<f64>>, n_bins: usize) -> Result<Var> {
        if n_bins == 0 {
            return contract("n_bins must be positive");
        }
        let xv = self.value(x);
        label_len_check(xv, &labels)?;
        let bins = xv.data().iter().map(|&c| bin_index(c, n_bins)).collect();
        self.record(Op::BinnedAbsResidual {
            x,
            labels,
            bins: Arc::new(bins),
            n_bins,
        })
    }

    /// Re-evaluates every recorded operation from the leaves.
    pub fn replay(&self) -> Result<Vec<DenseMatrix>> {
        let mut replayed: Vec<Node> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = match node.op {
                Op::Constant | Op::Param(_) => node.value.clone(),
                ref op => eval(op, &replayed)?,
            };
            replayed.push(Node {
                value,
                op: node.op.clone(),
                needs_grad: node.needs_grad,
            });
        }
        Ok(replayed.into_iter().map(|n| n.value).collect())
    }

    /// True when [`Tape::replay`] reproduces every cached value bit-for-bit.
    pub fn replay_matches(&self) -> Result<bool> {
        let replayed = self.replay()?;
        Ok(replayed.iter().zip(&self.nodes).all(|(r, n)| {
            r.shape() == n.value.shape()
                && r.data().iter().zip(n.value.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        }))
    }

    pub fn backward(&self, loss: Var) -> Result<GradientStore> {
        let mut store = GradientStore::new();
        self.backward_into(loss, &mut store)?;
        Ok(store)
    }

    /// Adds the gradient of `loss` w.r.t. every parameter leaf into `store`.
    pub fn backward_into(&self, loss: Var, store: &mut GradientStore) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return contract(format!("backward needs a scalar root, got {:?}", root.value.shape()));
        }
        let mut grads: Vec<Option<DenseMatrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if let Op::Param(id) = node.op {
                store.accumulate(id, &g);
                continue;
            }
            for (v, contrib) in self.local_grads(node, g)? {
                if !self.nodes[v.0].needs_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn val(&self, v: Var) -> &DenseMatrix {
        &self.nodes[v.0].value
    }

    /// Vector-Jacobian products of one node with respect to its operands.
    fn local_grads(&self, node: &Node, g: DenseMatrix) -> Result<Vec<(Var, DenseMatrix)>> {
        let out = &node.value;
        Ok(match &node.op {
            Op::Constant | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.wants(*a) {
                    out.push((*a, g.matmul(&self.val(*b).transpose())?));
                }
                if self.wants(*b) {
                    out.push((*b, self.val(*a).matmul_tn(&g)?));
                }
                out
            }
            Op::AddRowBias(x, bias) => {
                let mut gb = DenseMatrix::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &v) in gb.row_mut(0).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                if self.wants(*x) {
                    vec![(*x, g), (*bias, gb)]
                } else {
                    vec![(*bias, gb)]
                }
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g)],
            Op::Sub(a, b) => {
                let gb = g.scale(-1.0);
                vec![(*a, g), (*b, gb)]
            }
            Op::Mul(a, b) => {
                let ga = g.hadamard(self.val(*b))?;
                let gb = g.hadamard(self.val(*a))?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Div(a, b) => {
                let bv = self.val(*b);
                let mut grads = Vec::with_capacity(2);
                if self.wants(*a) {
                    grads.push((*a, g.zip_map(bv, "div", |g, b| g / b)?));
                }
                if self.wants(*b) {
                    let t = g.zip_map(out, "div", |g, o| g * o)?;
                    grads.push((*b, t.zip_map(bv, "div", |t, b| -t / b)?));
                }
                grads
            }
            Op::Min(a, b) | Op::Max(a, b) => {
                let is_min = matches!(node.op, Op::Min(..));
                let (av, bv) = (self.val(*a), self.val(*b));
                let mut ga = DenseMatrix::zeros(g.rows(), g.cols());
                let mut gb = DenseMatrix::zeros(g.rows(), g.cols());
                for k in 0..g.len() {
                    let (x, y) = (av.data()[k], bv.data()[k]);
                    let pick_a = if is_min { x <= y } else { x >= y };
                    if pick_a {
                        ga.data_mut()[k] = g.data()[k];
                    } else {
                        gb.data_mut()[k] = g.data()[k];
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, c) => vec![(*x, g.scale(*c))],
            Op::AddScalar(x, _) => vec![(*x, g)],
            Op::ScaleBy(x, s) => {
                let sv = self.val(*s).data()[0];
                let gs = g.hadamard(self.val(*x))?.sum();
                vec![(*x, g.scale(sv)), (*s, DenseMatrix::scalar(gs))]
            }
            Op::Relu(x) => {
                let gx = g.zip_apply(self.val(*x), "relu", |g, x| if x > 0.0 { g } else { 0.0 })?;
                vec![(*x, gx)]
            }
            Op::Mlp2 { x, w1, b1, w2, b2 } => {
                let (xv, w1v, b1v, w2v) = (self.val(*x), self.val(*w1), self.val(*b1), self.val(*w2));
                let hidden = w1v.cols();
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                let mut gw1 = DenseMatrix::zeros(w1v.rows(), hidden);
                let mut gb1 = DenseMatrix::zeros(1, hidden);
                let mut gw2 = DenseMatrix::zeros(hidden, w2v.cols());
                let mut gb2 = DenseMatrix::zeros(1, w2v.cols());
                let mut pre = vec![0.0; hidden];
                let mut gh = vec![0.0; hidden];
                let want_x = self.wants(*x);
                let scalar_out = w2v.cols() == 1;
                for i in 0..xv.rows() {
                    let gi = g.row(i);
                    mlp2_pre(xv.row(i), w1v, b1v, &mut pre);
                    if scalar_out {
                        let gs = gi[0];
                        gb2.data_mut()[0] += gs;
                        let (gw2d, w2d) = (gw2.data_mut(), w2v.data());
                        for j in 0..hidden {
                            let p = pre[j];
                            if p > 0.0 {
                                gw2d[j] += p * gs;
                                gh[j] = w2d[j] * gs;
                            } else {
                                gh[j] = 0.0;
                            }
                        }
                    } else {
                        for (acc, &v) in gb2.data_mut().iter_mut().zip(gi) {
                            *acc += v;
                        }
                        for j in 0..hidden {
                            let h = relu(pre[j]);
                            if h != 0.0 {
                                for (acc, &v) in gw2.row_mut(j).iter_mut().zip(gi) {
                                    *acc += h * v;
                                }
                            }
                            gh[j] = if pre[j] > 0.0 {
                                w2v.row(j).iter().zip(gi).map(|(w, v)| w * v).sum()
                            } else {
                                0.0
                            };
                        }
                    }
                    for (acc, &v) in gb1.data_mut().iter_mut().zip(&gh) {
                        *acc += v;
                    }
                    for (k, &a) in xv.row(i).iter().enumerate() {
                        if a != 0.0 {
                            for (acc, &v) in gw1.row_mut(k).iter_mut().zip(&gh) {
                                *acc += a * v;
                            }
                        }
                        if want_x {
                            gx.row_mut(i)[k] = w1v.row(k).iter().zip(&gh).map(|(w, v)| w * v).sum();
                        }
                    }
                }
                let mut grads = vec![(*w1, gw1), (*b1, gb1), (*w2, gw2), (*b2, gb2)];
                if want_x {
                    grads.push((*x, gx));
                }
                grads
            }
            Op::Sigmoid(x) => vec![(*x, g.zip_apply(out, "sigmoid", |g, s| g * s * (1.0 - s))?)],
            Op::Softplus(x) => {
                vec![(*x, g.zip_apply(self.val(*x), "softplus", |g, x| g * sigmoid(x))?)]
            }
            Op::SpMM(a, x) => vec![(*x, a.spmm_transpose(&g)?)],
            Op::GatherRows(x, idx) => {
                let xv = self.val(*x);
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, &v) in gx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                vec![(*x, gx)]
            }
            Op::ConcatCols(a, b) => {
                let ca = self.val(*a).cols();
                let cb = self.val(*b).cols();
                let mut ga = DenseMatrix::zeros(g.rows(), ca);
                let mut gb = DenseMatrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::ConcatRows(a, b) => {
                let ra = self.val(*a).rows();
                let cols = g.cols();
                let ga = DenseMatrix::new(ra, cols, g.data()[..ra * cols].to_vec())?;
                let gb = DenseMatrix::new(g.rows() - ra, cols, g.data()[ra * cols..].to_vec())?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::RowSum(x) => {
                let xv = self.val(*x);
                let mut gx = DenseMatrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    gx.row_mut(r).fill(g.data()[r]);
                }
                vec![(*x, gx)]
            }
            Op::Sum(x) => {
                let (r, c) = self.val(*x).shape();
                vec![(*x, DenseMatrix::filled(r, c, g.data()[0]))]
            }
            Op::Mean(x) => {
                let (r, c) = self.val(*x).shape();
                vec![(*x, DenseMatrix::filled(r, c, g.data()[0] / (r * c) as f64))]
            }
            Op::WeightedSum(x, w) => vec![(*x, w.scale(g.data()[0]))],
            Op::BceWithLogits(x, labels) => {
                let xv = self.val(*x);
                let n = labels.len() as f64;
                let scale = g.data()[0] / n;
                let data = xv
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&s, &y)| scale * (sigmoid(s) - y))
                    .collect();
                vec![(*x, DenseMatrix::new(xv.rows(), 1, data)?)]
            }
            Op::Nll(x, labels) => {
                let xv = self.val(*x);
                let g0 = g.data()[0];
                let data = xv
                    .data()
                    .iter()
                    .zip(labels.iter())
                    .map(|(&p, &y)| {
                        if p < PROB_CLIP || p > 1.0 - PROB_CLIP {
                            0.0
                        } else {
                            g0 * (-y / p + (1.0 - y) / (1.0 - p))
                        }
                    })
                    .collect();
                vec![(*x, DenseMatrix::new(xv.rows(), 1, data)?)]
            }
            Op::BinnedAbsResidual {
                x,
                labels,
                bins,
                n_bins,
            } => {
                let xv = self.val(*x);
                let residuals = bin_residuals(xv.data(), labels, bins, *n_bins);
                let m = labels.len() as f64;
                let g0 = g.data()[0];
                let data = bins
                    .iter()
                    .map(|&b| {
                        let r = residuals[b];
                        let sign = if r > 0.0 {
                            1.0
                        } else if r < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        -g0 * sign / m
                    })
                    .collect();
                vec![(*x, DenseMatrix::new(xv.rows(), 1, data)?)]
            }
        })
    }
}

fn bin_residuals(x: &[f64], labels: &[f64], bins: &[usize], n_bins: usize) -> Vec<f64> {
    let mut residuals = vec![0.0; n_bins];
    for ((&p, &y), &b) in x.iter().zip(labels).zip(bins) {
        residuals[b] += y - p;
    }
    residuals
}

fn mlp2_check(x: &DenseMatrix, w1: &DenseMatrix, b1: &DenseMatrix, w2: &DenseMatrix, b2: &DenseMatrix) -> Result<()> {
    if x.cols() != w1.rows() {
        return dim_err("mlp2", x, w1);
    }
    if b1.shape() != (1, w1.cols()) {
        return dim_err("mlp2", w1, b1);
    }
    if w2.rows() != w1.cols() {
        return dim_err("mlp2", w1, w2);
    }
    if b2.shape() != (1, w2.cols()) {
        return dim_err("mlp2", w2, b2);
    }
    Ok(())
}

/// Pre-activations `x_row·w1 + b1`, accumulated in the same order as
/// [`DenseMatrix::matmul`] followed by a bias add.
fn mlp2_pre(x_row: &[f64], w1: &DenseMatrix, b1: &DenseMatrix, pre: &mut [f64]) {
    pre.fill(0.0);
    let h = pre.len();
    for (&a, w_row) in x_row.iter().zip(w1.data().chunks_exact(h)) {
        if a != 0.0 {
            for (p, &w) in pre.iter_mut().zip(w_row) {
                *p += a * w;
            }
        }
    }
    for (p, &b) in pre.iter_mut().zip(b1.data()) {
        *p += b;
    }
}

fn operands(op: &Op) -> Vec<Var> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::MatMul(a, b)
        | Op::AddRowBias(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::Min(a, b)
        | Op::Max(a, b)
        | Op::ScaleBy(a, b)
        | Op::ConcatCols(a, b)
        | Op::ConcatRows(a, b) => vec![*a, *b],
        Op::Scale(x, _)
        | Op::AddScalar(x, _)
        | Op::Relu(x)
        | Op::Sigmoid(x)
        | Op::Softplus(x)
        | Op::SpMM(_, x)
        | Op::GatherRows(x, _)
        | Op::RowSum(x)
        | Op::Sum(x)
        | Op::Mean(x)
        | Op::WeightedSum(x, _)
        | Op::BceWithLogits(x, _)
        | Op::Nll(x, _)
        | Op::BinnedAbsResidual { x, .. } => vec![*x],
        Op::Mlp2 { x, w1, b1, w2, b2 } => vec![*x, *w1, *b1, *w2, *b2],
    }
}

fn eval(op: &Op, nodes: &[Node]) -> Result<DenseMatrix> {
    let v = |x: &Var| &nodes[x.0].value;
    match op {
        Op::Constant | Op::Param(_) => unreachable!("leaves are not evaluated"),
        Op::MatMul(a, b) => v(a).matmul(v(b)),
        Op::AddRowBias(x, b) => v(x).add_row(v(b)),
        Op::Add(a, b) => v(a).add(v(b)),
        Op::Sub(a, b) => v(a).sub(v(b)),
        Op::Mul(a, b) => v(a).hadamard(v(b)),
        Op::Div(a, b) => v(a).zip_map(v(b), "div", |a, b| a / b),
        Op::Min(a, b) => v(a).zip_map(v(b), "min", f64::min),
        Op::Max(a, b) => v(a).zip_map(v(b), "max", f64::max),
        Op::Scale(x, c) => Ok(v(x).scale(*c)),
        Op::AddScalar(x, c) => Ok(v(x).map(|t| t + c)),
        Op::ScaleBy(x, s) => {
            let sv = v(s);
            if sv.shape() != (1, 1) {
                return dim_err("scale_by", v(x), sv);
            }
            let c = sv.data()[0];
            Ok(v(x).map(|t| t * c))
        }
        Op::Relu(x) => Ok(v(x).map(relu)),
        Op::Mlp2 { x, w1, b1, w2, b2 } => {
            let (xv, w1v, b1v, w2v, b2v) = (v(x), v(w1), v(b1), v(w2), v(b2));
            mlp2_check(xv, w1v, b1v, w2v, b2v)?;
            let mut out = DenseMatrix::zeros(xv.rows(), w2v.cols());
            let mut pre = vec![0.0; w1v.cols()];
            for i in 0..xv.rows() {
                mlp2_pre(xv.row(i), w1v, b1v, &mut pre);
                let o = out.row_mut(i);
                if let [o] = o {
                    for (&p, &w) in pre.iter().zip(w2v.data()) {
                        let h = relu(p);
                        if h != 0.0 {
                            *o += h * w;
                        }
                    }
                    *o += b2v.data()[0];
                    continue;
                }
                for (j, &p) in pre.iter().enumerate() {
                    let h = relu(p);
                    if h != 0.0 {
                        for (o, &w) in o.iter_mut().zip(w2v.row(j)) {
                            *o += h * w;
                        }
                    }
                }
                for (o, &b) in o.iter_mut().zip(b2v.data()) {
                    *o += b;
                }
            }
            Ok(out)
        }
        Op::Sigmoid(x) => Ok(v(x).map(sigmoid)),
        Op::Softplus(x) => Ok(v(x).map(softplus)),
        Op::SpMM(a, x) => a.spmm(v(x)),
        Op::GatherRows(x, idx) => v(x).gather_rows(idx),
        Op::ConcatCols(a, b) => v(a).concat_cols(v(b)),
        Op::ConcatRows(a, b) => v(a).concat_rows(v(b)),
        Op::RowSum(x) => {
            let xv = v(x);
            let sums = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect::<Vec<f64>>();
            Ok(DenseMatrix::column(&sums))
        }
        Op::Sum(x) => Ok(DenseMatrix::scalar(v(x).sum())),
        Op::Mean(x) => {
            let xv = v(x);
            if xv.is_empty() {
                return contract("mean of an empty matrix");
            }
            Ok(DenseMatrix::scalar(xv.sum() / xv.len() as f64))
        }
        Op::WeightedSum(x, w) => {
            v(x).same_shape(w, "weighted_sum")?;
            Ok(DenseMatrix::scalar(
                v(x).data().iter().zip(w.data()).map(|(a, b)| a * b).sum(),
            ))
        }
        Op::BceWithLogits(x, labels) => {
            let xv = v(x);
            label_len_check(xv, labels)?;
            if labels.is_empty() {
                return contract("bce over an empty batch");
            }
            let total: f64 = xv
                .data()
                .iter()
                .zip(labels.iter())
                .map(|(&s, &y)| s.max(0.0) - s * y + (-s.abs()).exp().ln_1p())
                .sum();
            Ok(DenseMatrix::scalar(total / labels.len() as f64))
        }
        Op::Nll(x, labels) => {
            let xv = v(x);
            label_len_check(xv, labels)?;
            Ok(DenseMatrix::scalar(crate::metrics::nll_unchecked(xv.data(), labels)))
        }
        Op::BinnedAbsResidual {
            x,
            labels,
            bins,
            n_bins,
        } => {
            let xv = v(x);
            let residuals = bin_residuals(xv.data(), labels, bins, *n_bins);
            let total: f64 = residuals.iter().map(|r| r.abs()).sum();
            Ok(DenseMatrix::scalar(total / labels.len() as f64))
        }
    }
}
