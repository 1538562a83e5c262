//! Link-prediction training with per-epoch negative sampling, and the
//! ranking/accuracy metrics reported before and after calibration.

use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::gnn::{GraphOperators, LinkModel, ModelConfig};
use crate::graph::{rng_from_seed, sample_negative_edges, Edge, EdgeSplit, Graph};
use crate::tensor::{adam_step, sigmoid, AdamState, DenseMatrix, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Negatives drawn per training positive each epoch.
    pub neg_ratio: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 400,
            lr: 1e-3,
            neg_ratio: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return contract("epochs must be at least 1");
        }
        if self.neg_ratio == 0 {
            return contract("negative ratio must be at least 1");
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return contract("learning rate must be positive");
        }
        Ok(())
    }
}

/// An edge with its logit and, once calibrated, its temperature and
/// calibrated probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredEdge {
    pub u: usize,
    pub v: usize,
    pub logit: f64,
    pub prob: f64,
    pub label: Option<u8>,
    pub temperature: Option<f64>,
    pub calibrated: Option<f64>,
}

impl ScoredEdge {
    pub fn new(u: usize, v: usize, logit: f64, label: Option<u8>) -> Self {
        Self {
            u,
            v,
            logit,
            prob: sigmoid(logit),
            label,
            temperature: None,
            calibrated: None,
        }
    }

    /// Predicted label. Temperatures never change the sign of the logit,
    /// so tempered edges keep `1[s > 0]`; edges recalibrated by a
    /// non-parametric map use `1[p̂ > 0.5]`.
    pub fn predicted(&self) -> u8 {
        match (self.temperature, self.calibrated) {
            (None, Some(p)) => u8::from(p > 0.5),
            _ => u8::from(self.logit > 0.0),
        }
    }

    /// Sets `T` and `p̂ = σ(s / T)`.
    pub fn set_temperature(&mut self, t: f64) -> Result<()> {
        if !t.is_finite() || t <= 0.0 {
            return contract(format!("temperature must be positive and finite, got {t}"));
        }
        self.temperature = Some(t);
        self.calibrated = Some(sigmoid(self.logit / t));
        Ok(())
    }

    /// Calibrated probability when present, raw probability otherwise.
    pub fn confidence(&self) -> f64 {
        self.calibrated.unwrap_or(self.prob)
    }

    /// Score used for ranking: the tempered logit when a temperature is
    /// known, the calibrated probability for non-parametric calibrators,
    /// and the raw logit otherwise.
    pub fn ranking_score(&self) -> f64 {
        match (self.temperature, self.calibrated) {
            (Some(t), _) => self.logit / t,
            (None, Some(p)) => p,
            (None, None) => self.logit,
        }
    }
}

pub fn score_edges(logits: &[f64], edges: &[Edge], labels: &[u8]) -> Vec<ScoredEdge> {
    edges
        .iter()
        .zip(logits)
        .zip(labels)
        .map(|((&(u, v), &s), &y)| ScoredEdge::new(u, v, s, Some(y)))
        .collect()
}

fn split_by_label(scored: &[ScoredEdge]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for e in scored {
        match e.label {
            Some(1) => pos.push(e.ranking_score()),
            Some(0) => neg.push(e.ranking_score()),
            _ => return contract(format!("edge ({}, {}) lacks a 0/1 label", e.u, e.v)),
        }
    }
    Ok((pos, neg))
}

/// Probability that a random positive outranks a random negative (ties
/// count one half), from the Mann-Whitney rank statistic.
pub fn auc_from_scores(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() || neg.is_empty() {
        return contract("auc needs both positive and negative samples");
    }
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        let n_pos = all[i..=j].iter().filter(|e| e.1).count();
        rank_sum += mid * n_pos as f64;
        i = j + 1;
    }
    let p = pos.len() as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * neg.len() as f64))
}

pub fn auc(scored: &[ScoredEdge]) -> Result<f64> {
    let (pos, neg) = split_by_label(scored)?;
    auc_from_scores(&pos, &neg)
}

/// Percentage of positives scoring strictly above the k-th highest negative.
pub fn hits_at_k_from_scores(pos: &[f64], neg: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return contract("k must be at least 1");
    }
    if neg.len() < k {
        return contract(format!("hits@{k} needs at least {k} negatives, got {}", neg.len()));
    }
    if pos.is_empty() {
        return contract("hits@k needs at least one positive");
    }
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    let hits = pos.iter().filter(|&&s| s > threshold).count();
    Ok(100.0 * hits as f64 / pos.len() as f64)
}

pub fn hits_at_k(scored: &[ScoredEdge], k: usize) -> Result<f64> {
    let (pos, neg) = split_by_label(scored)?;
    hits_at_k_from_scores(&pos, &neg, k)
}

/// Percentage of edges whose [`ScoredEdge::predicted`] label matches.
pub fn accuracy(scored: &[ScoredEdge]) -> Result<f64> {
    if scored.is_empty() {
        return contract("accuracy of an empty set");
    }
    let mut correct = 0usize;
    for e in scored {
        let y = e
            .label
            .ok_or_else(|| Error::Contract(format!("edge ({}, {}) has no label", e.u, e.v)))?;
        correct += usize::from(e.predicted() == y);
    }
    Ok(100.0 * correct as f64 / scored.len() as f64)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_auc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the best validation AUC.
    pub model: LinkModel,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    pub fn write_log<W: Write>(&self, mut out: W) -> Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Labeled evaluation edges: positives followed by negatives.
pub fn labeled(pos: &[Edge], neg: &[Edge]) -> (Vec<Edge>, Vec<u8>) {
    let edges = pos.iter().chain(neg).copied().collect();
    let labels = std::iter::repeat_n(1u8, pos.len())
        .chain(std::iter::repeat_n(0u8, neg.len()))
        .collect();
    (edges, labels)
}

/// Validation AUC of `model` with message passing over `train_graph`.
pub fn validation_auc(model: &LinkModel, train_graph: &Graph, x: &DenseMatrix, split: &EdgeSplit) -> Result<f64> {
    let h = model.encode(train_graph, x)?;
    let pos = model.logits(&h, &split.val_pos)?;
    let neg = model.logits(&h, &split.val_neg)?;
    auc_from_scores(&pos, &neg)
}

/// Full-batch training on the training positives with freshly sampled
/// negatives every epoch, minimizing mean binary cross-entropy with Adam.
pub fn train(config: ModelConfig, x: &DenseMatrix, split: &EdgeSplit, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    if split.train_pos.is_empty() || split.val_pos.is_empty() || split.val_neg.is_empty() {
        return contract("split needs training positives and validation positives/negatives");
    }
    let n = x.rows();
    let train_graph = split.train_graph(n)?;
    let ops = GraphOperators::new(&train_graph);
    let mut model = LinkModel::init(config, tc.seed)?;
    let mut adam = AdamState::new(&model.params);
    let mut rng = rng_from_seed(tc.seed ^ 0x5e_ed0f_7a1e);
    let no_exclude = HashSet::new();

    let mut best = (model.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::with_capacity(tc.epochs);
    for epoch in 1..=tc.epochs {
        let negs = sample_negative_edges(&train_graph, tc.neg_ratio * split.train_pos.len(), &mut rng, &no_exclude)?;
        let (edges, labels) = labeled(&split.train_pos, &negs);
        let labels: Vec<f64> = labels.into_iter().map(f64::from).collect();

        let mut tape = Tape::new();
        let vars = model.load_params(&mut tape);
        let xv = tape.constant(x.clone());
        let h = model.encode_taped(&mut tape, &vars, &ops, xv)?;
        let s = model.logits_taped(&mut tape, &vars, h, &edges)?;
        let loss = tape.bce_with_logits(s, Arc::new(labels))?;
        let loss_value = tape.value(loss).item()?;
        if !loss_value.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite loss {loss_value}"),
            });
        }
        let grads = tape.backward(loss)?;
        adam_step(&mut model.params, &grads, &mut adam, tc.lr, 0.0)?;
        if !model.params.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: "parameters became non-finite".into(),
            });
        }

        let val_auc = validation_auc(&model, &train_graph, x, split)?;
        log.push(EpochRecord {
            epoch,
            loss: loss_value,
            val_auc,
        });
        if val_auc > best.2 {
            best = (model.clone(), epoch, val_auc);
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_val_auc: best.2,
        log,
    })
}
