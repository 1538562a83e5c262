use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::graph::rng_from_seed;
use crate::metrics::{LossBreakdown, DEFAULT_BINS};
use crate::tensor::{adam_step, relu, sigmoid, softplus, xavier_uniform, AdamState, DenseMatrix, ParamSet, Tape, Var};

/// Hidden width of each temperature MLP.
pub const TEMP_HIDDEN: usize = 16;

/// `softplus⁻¹(1)`: output bias giving an initial temperature near one.
pub const UNIT_TEMPERATURE_BIAS: f64 = 0.541_324_854_612_918_1;

/// Added to every temperature so that softplus underflow never yields `T = 0`.
pub const MIN_TEMPERATURE: f64 = 1e-12;

/// How samples are assigned to temperature branches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    /// Branch 0 for `s > 0`, branch 1 otherwise.
    BySign,
    Single,
}

impl Routing {
    pub fn branches(self) -> usize {
        match self {
            Routing::BySign => 2,
            Routing::Single => 1,
        }
    }

    pub fn branch(self, logit: f64) -> usize {
        match self {
            Routing::BySign if logit > 0.0 => 0,
            Routing::BySign => 1,
            Routing::Single => 0,
        }
    }
}

/// One or more softplus-headed MLPs mapping a feature row to `T > 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemperatureNet {
    pub routing: Routing,
    pub in_dim: usize,
    pub hidden: usize,
    /// Per-feature standardization applied before the first layer.
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub params: ParamSet,
}

fn bname(b: usize, what: &str) -> String {
    format!("branch{b}.{what}")
}

impl TemperatureNet {
    pub fn init(routing: Routing, in_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if in_dim == 0 || hidden == 0 {
            return contract("temperature net dims must be positive");
        }
        let mut rng = rng_from_seed(seed);
        let mut params = ParamSet::new();
        for b in 0..routing.branches() {
            params.push(bname(b, "w1"), xavier_uniform(&mut rng, in_dim, hidden));
            params.push(bname(b, "b1"), DenseMatrix::zeros(1, hidden));
            params.push(bname(b, "w2"), xavier_uniform(&mut rng, hidden, 1));
            params.push(bname(b, "b2"), DenseMatrix::scalar(UNIT_TEMPERATURE_BIAS));
        }
        Ok(Self {
            routing,
            in_dim,
            hidden,
            input_shift: vec![0.0; in_dim],
            input_scale: vec![1.0; in_dim],
            params,
        })
    }

    /// Sets the input standardization from the rows of `features`.
    pub fn fit_standardization(&mut self, features: &DenseMatrix) -> Result<()> {
        self.check_dim(features)?;
        let m = features.rows().max(1) as f64;
        for c in 0..self.in_dim {
            let mean = (0..features.rows()).map(|r| features.get(r, c)).sum::<f64>() / m;
            let var = (0..features.rows())
                .map(|r| (features.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / m;
            let sd = var.sqrt();
            self.input_shift[c] = mean;
            self.input_scale[c] = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
        }
        Ok(())
    }

    fn check_dim(&self, features: &DenseMatrix) -> Result<()> {
        if features.cols() != self.in_dim {
            return Err(Error::Dimension {
                op: "temperature",
                left: features.shape(),
                right: (features.rows(), self.in_dim),
            });
        }
        if !features.is_finite() {
            return contract("temperature inputs must be finite");
        }
        Ok(())
    }

    fn standardize(&self, features: &DenseMatrix) -> DenseMatrix {
        let mut out = features.clone();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                *v = (*v - self.input_shift[c]) * self.input_scale[c];
            }
        }
        out
    }

    fn p(&self, b: usize, what: &str) -> &DenseMatrix {
        self.params.get(self.params.id_of(&bname(b, what)).expect("branch parameter"))
    }

    /// Temperature of a single input row routed by `logit`.
    pub fn temperature(&self, input: &[f64], logit: f64) -> Result<f64> {
        let m = DenseMatrix::new(1, input.len(), input.to_vec())?;
        Ok(self.temperatures(&m, &[logit])?[0])
    }

    /// Temperatures for stacked input rows.
    pub fn temperatures(&self, features: &DenseMatrix, logits: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(features)?;
        if features.rows() != logits.len() {
            return contract("one logit per feature row required");
        }
        let z = self.standardize(features);
        let mut out = vec![0.0; logits.len()];
        for (b, rows) in self.partition(logits).iter().enumerate() {
            if rows.is_empty() {
                continue;
            }
            let xb = z.gather_rows(rows)?;
            let hidden = xb.matmul(self.p(b, "w1"))?.add_row(self.p(b, "b1"))?.map(relu);
            let t = hidden.matmul(self.p(b, "w2"))?.add_row(self.p(b, "b2"))?.map(|o| softplus(o) + MIN_TEMPERATURE);
            for (k, &r) in rows.iter().enumerate() {
                out[r] = t.data()[k];
            }
        }
        Ok(out)
    }

    /// Row indices assigned to each branch, in ascending order.
    pub fn partition(&self, logits: &[f64]) -> Vec<Vec<usize>> {
        let mut parts = vec![Vec::new(); self.routing.branches()];
        for (i, &s) in logits.iter().enumerate() {
            parts[self.routing.branch(s)].push(i);
        }
        parts
    }
}

/// Optimizer settings shared by IN-N-OUT and the embedding-MLP ablation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TempFitConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub n_bins: usize,
}

impl Default for TempFitConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            lr: 1e-4,
            weight_decay: 5e-8,
            n_bins: DEFAULT_BINS,
        }
    }
}

/// Samples for temperature fitting, reordered branch by branch.
pub struct CalibrationBatch {
    order: Vec<usize>,
    parts: Vec<Vec<usize>>,
    logits: Arc<DenseMatrix>,
    labels: Arc<Vec<f64>>,
    cal_weights: Arc<DenseMatrix>,
}

impl CalibrationBatch {
    pub fn new(net: &TemperatureNet, logits: &[f64], labels: &[f64]) -> Result<Self> {
        if logits.len() != labels.len() || logits.is_empty() {
            return contract("calibration batch needs matching, non-empty logits and labels");
        }
        let parts = net.partition(logits);
        let order: Vec<usize> = parts.iter().flatten().copied().collect();
        let m = order.len() as f64;
        let s: Vec<f64> = order.iter().map(|&i| logits[i]).collect();
        let y: Vec<f64> = order.iter().map(|&i| labels[i]).collect();
        let w: Vec<f64> = y.iter().map(|&y| -(2.0 * y - 1.0) / m).collect();
        Ok(Self {
            order,
            parts,
            logits: Arc::new(DenseMatrix::column(&s)),
            labels: Arc::new(y),
            cal_weights: Arc::new(DenseMatrix::column(&w)),
        })
    }

    /// Original sample index of each row of the reordered batch.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }
}

/// Handles to the loss terms recorded on a tape.
pub struct LossVars {
    pub probs: Var,
    pub nll: Var,
    pub cal: Var,
    pub ece: Var,
    pub total: Var,
}

/// Records `L = L_NLL + L_Cal + λ·L_ECE` for `p̂ = σ(s / T)` on `tape`.
pub fn record_loss(
    tape: &mut Tape,
    net: &TemperatureNet,
    vars: &[Var],
    features: &DenseMatrix,
    batch: &CalibrationBatch,
    lambda: f64,
    n_bins: usize,
) -> Result<LossVars> {
    net.check_dim(features)?;
    let z = net.standardize(features);
    let mut temps: Option<Var> = None;
    for (b, rows) in batch.parts.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let var = |what: &str| vars[net.params.id_of(&bname(b, what)).expect("branch parameter").0];
        let xb = tape.constant(z.gather_rows(rows)?);
        let o = tape.mlp2(xb, var("w1"), var("b1"), var("w2"), var("b2"))?;
        let t = tape.softplus(o)?;
        let t = tape.add_scalar(t, MIN_TEMPERATURE)?;
        temps = Some(match temps {
            None => t,
            Some(prev) => tape.concat_rows(prev, t)?,
        });
    }
    let temps = temps.expect("non-empty batch");
    let s = tape.constant((*batch.logits).clone());
    let scaled = tape.div(s, temps)?;
    let probs = tape.sigmoid(scaled)?;
    let nll = tape.nll(probs, batch.labels.clone())?;
    let cal = tape.weighted_sum(probs, batch.cal_weights.clone())?;
    let ece = tape.binned_abs_residual(probs, batch.labels.clone(), n_bins)?;
    let weighted_ece = tape.scale(ece, lambda)?;
    let partial = tape.add(nll, cal)?;
    let total = tape.add(partial, weighted_ece)?;
    Ok(LossVars {
        probs,
        nll,
        cal,
        ece,
        total,
    })
}

/// Trains `net` in place with Adam on the combined calibration loss. The
/// feature rows for each epoch come from `features`, which lets callers
/// either reuse a precomputed matrix or rebuild it every epoch.
pub fn fit_temperature_net(
    net: &mut TemperatureNet,
    features: &mut dyn FnMut(usize) -> Result<DenseMatrix>,
    logits: &[f64],
    labels: &[f64],
    lambda: f64,
    cfg: &TempFitConfig,
    mut trace: Option<&mut Vec<LossBreakdown>>,
) -> Result<()> {
    if lambda.is_nan() || lambda <= 0.0 {
        return contract(format!("lambda must be positive, got {lambda}"));
    }
    if cfg.epochs == 0 {
        return contract("epochs must be at least 1");
    }
    let batch = CalibrationBatch::new(net, logits, labels)?;
    let mut adam = AdamState::new(&net.params);
    for epoch in 1..=cfg.epochs {
        let feats = features(epoch)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = net
            .params
            .iter()
            .map(|(id, _, v)| tape.param(id, v.clone()))
            .collect();
        let loss = record_loss(&mut tape, net, &vars, &feats, &batch, lambda, cfg.n_bins)?;
        let total = tape.value(loss.total).item()?;
        if !total.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite calibration loss {total}"),
            });
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(LossBreakdown {
                nll: tape.value(loss.nll).item()?,
                cal: tape.value(loss.cal).item()?,
                ece: tape.value(loss.ece).item()?,
                lambda,
                total,
            });
        }
        let grads = tape.backward(loss.total)?;
        adam_step(&mut net.params, &grads, &mut adam, cfg.lr, cfg.weight_decay)?;
    }
    Ok(())
}

/// `σ(s / T)` for each sample.
pub fn calibrated_probs(logits: &[f64], temps: &[f64]) -> Vec<f64> {
    logits.iter().zip(temps).map(|(&s, &t)| sigmoid(s / t)).collect()
}
