//! Per-edge temperature calibration from counterfactual embedding
//! discrepancy.
//!
//! For an edge `(u, v)` the frozen encoder is evaluated on the observed
//! graph and on the graph with `(u, v)` toggled. The discrepancy `γ` between
//! the two edge embeddings feeds one of two temperature MLPs, picked by the
//! sign of the logit, and the calibrated probability is `σ(s_uv / T_uv)`.

mod counterfactual;
mod tempnet;

pub use counterfactual::Counterfactual;
pub use tempnet::{
    calibrated_probs, fit_temperature_net, record_loss, CalibrationBatch, LossVars, Routing, TempFitConfig,
    TemperatureNet, MIN_TEMPERATURE, TEMP_HIDDEN, UNIT_TEMPERATURE_BIAS,
};

use std::collections::HashSet;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::gnn::LinkModel;
use crate::graph::{rng_from_seed, sample_negative_edges, CalibrationTriple, Edge, EdgeSplit, Graph};
use crate::linkpred::ScoredEdge;
use crate::metrics::ece;
use crate::tensor::DenseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GammaChoice {
    /// `[‖h_uv − h⁺_uv‖₂]`
    Euclidean,
    /// `h_uv − h⁺_uv`
    Difference,
}

impl GammaChoice {
    pub fn dim(self, edge_dim: usize) -> usize {
        match self {
            GammaChoice::Euclidean => 1,
            GammaChoice::Difference => edge_dim,
        }
    }
}

impl FromStr for GammaChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euclidean" => Ok(Self::Euclidean),
            "difference" => Ok(Self::Difference),
            other => contract(format!("unknown gamma '{other}' (expected euclidean|difference)")),
        }
    }
}

/// Discrepancy between an edge embedding and its counterfactual.
pub fn gamma(h_uv: &[f64], h_plus: &[f64], choice: GammaChoice) -> Result<Vec<f64>> {
    if h_uv.len() != h_plus.len() {
        return Err(Error::Dimension {
            op: "gamma",
            left: (1, h_uv.len()),
            right: (1, h_plus.len()),
        });
    }
    let diff = h_uv.iter().zip(h_plus).map(|(a, b)| a - b);
    Ok(match choice {
        GammaChoice::Euclidean => vec![diff.map(|d| d * d).sum::<f64>().sqrt()],
        GammaChoice::Difference => diff.collect(),
    })
}

/// Logits, edge embeddings and discrepancies for a list of edges.
#[derive(Clone, Debug)]
pub struct EdgeFeatures {
    pub edges: Vec<Edge>,
    pub logits: Vec<f64>,
    pub embeddings: DenseMatrix,
    pub gammas: DenseMatrix,
}

/// Evaluates every edge against its counterfactual. Edges are processed in
/// parallel; results keep the input order.
pub fn edge_features(cf: &Counterfactual<'_>, edges: &[Edge], choice: GammaChoice) -> Result<EdgeFeatures> {
    let model = cf.model();
    let edge_dim = model.config.edge_dim();
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = edges
        .par_iter()
        .map(|&(u, v)| {
            let (h_uv, h_plus) = cf.edge_pair(u, v)?;
            let g = gamma(&h_uv, &h_plus, choice)?;
            Ok((h_uv, g))
        })
        .collect::<Result<_>>()?;
    let (emb_rows, gamma_rows): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let stack = |rows: Vec<Vec<f64>>, width: usize| {
        if rows.is_empty() {
            Ok(DenseMatrix::zeros(0, width))
        } else {
            DenseMatrix::from_rows(&rows)
        }
    };
    let embeddings = stack(emb_rows, edge_dim)?;
    let gammas = stack(gamma_rows, choice.dim(edge_dim))?;
    let logits = model.score_embeddings(&embeddings)?;
    Ok(EdgeFeatures {
        edges: edges.to_vec(),
        logits,
        embeddings,
        gammas,
    })
}

/// Training positives labeled 1 plus as many fresh uniform negatives
/// labeled 0. Negatives avoid every edge of `g` and the split's evaluation
/// negatives.
pub fn build_calibration_set(g: &Graph, split: &EdgeSplit, seed: u64) -> Result<Vec<CalibrationTriple>> {
    let exclude: HashSet<Edge> = split.val_neg.iter().chain(&split.test_neg).copied().collect();
    let mut rng = rng_from_seed(seed);
    let negs = sample_negative_edges(g, split.train_pos.len(), &mut rng, &exclude)?;
    Ok(split
        .train_pos
        .iter()
        .map(|&(u, v)| CalibrationTriple { u, v, y: 1 })
        .chain(negs.into_iter().map(|(u, v)| CalibrationTriple { u, v, y: 0 }))
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InNOutConfig {
    pub gamma: GammaChoice,
    pub lambda_grid: Vec<f64>,
    pub fit: TempFitConfig,
    pub hidden: usize,
    pub seed: u64,
    /// Rebuild the discrepancy inputs every epoch instead of once. The
    /// encoder is frozen, so both paths see the same inputs.
    #[serde(default)]
    pub recompute_each_epoch: bool,
}

impl Default for InNOutConfig {
    fn default() -> Self {
        Self {
            gamma: GammaChoice::Euclidean,
            lambda_grid: vec![0.1, 0.5, 1.0, 2.0, 5.0],
            fit: TempFitConfig::default(),
            hidden: TEMP_HIDDEN,
            seed: 0,
            recompute_each_epoch: false,
        }
    }
}

/// A fitted temperature net with the λ that won validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTemperature {
    pub lambda: f64,
    /// Validation ECE (fraction) of each grid value, in grid order.
    pub val_ece: Vec<(f64, f64)>,
    pub net: TemperatureNet,
}

/// Labeled inputs for one side (fit or validation) of a temperature fit.
pub struct TempInputs<'a> {
    pub features: &'a DenseMatrix,
    pub logits: &'a [f64],
    pub labels: &'a [f64],
}

/// Trains one net per λ in the grid from a common initialization and keeps
/// the one with the lowest validation ECE (first in grid order on ties).
pub fn fit_lambda_grid(
    routing: Routing,
    fit_on: &TempInputs<'_>,
    validate_on: &TempInputs<'_>,
    cfg: &InNOutConfig,
    recompute: Option<&(dyn Fn() -> Result<DenseMatrix> + Sync)>,
) -> Result<FittedTemperature> {
    if cfg.lambda_grid.is_empty() {
        return contract("lambda grid is empty");
    }
    if let Some(l) = cfg.lambda_grid.iter().find(|l| l.is_nan() || **l <= 0.0) {
        return contract(format!("lambda values must be positive, got {l}"));
    }
    let mut base = TemperatureNet::init(routing, fit_on.features.cols(), cfg.hidden, cfg.seed)?;
    base.fit_standardization(fit_on.features)?;

    let fitted: Vec<(TemperatureNet, f64)> = cfg
        .lambda_grid
        .par_iter()
        .map(|&lambda| {
            let mut net = base.clone();
            let mut source = |_epoch: usize| match recompute {
                Some(f) => f(),
                None => Ok(fit_on.features.clone()),
            };
            fit_temperature_net(&mut net, &mut source, fit_on.logits, fit_on.labels, lambda, &cfg.fit, None)?;
            let temps = net.temperatures(validate_on.features, validate_on.logits)?;
            let probs = calibrated_probs(validate_on.logits, &temps);
            let val_ece = ece(&probs, validate_on.labels, cfg.fit.n_bins)?;
            Ok((net, val_ece))
        })
        .collect::<Result<_>>()?;

    let val_ece: Vec<(f64, f64)> = cfg.lambda_grid.iter().copied().zip(fitted.iter().map(|f| f.1)).collect();
    let best = (0..fitted.len())
        .min_by(|&a, &b| fitted[a].1.total_cmp(&fitted[b].1).then(a.cmp(&b)))
        .expect("non-empty grid");
    let (net, _) = fitted.into_iter().nth(best).expect("index in range");
    Ok(FittedTemperature {
        lambda: cfg.lambda_grid[best],
        val_ece,
        net,
    })
}

/// Fitted IN-N-OUT calibrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InNOut {
    pub gamma: GammaChoice,
    pub fitted: FittedTemperature,
}

fn to_f64(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&y| f64::from(y)).collect()
}

impl InNOut {
    /// Fits the sign-routed temperature nets. `cf` wraps the frozen encoder
    /// on the message-passing graph; `calibration` is the fit set and
    /// `(val_edges, val_labels)` selects λ.
    pub fn fit(
        cf: &Counterfactual<'_>,
        calibration: &[CalibrationTriple],
        val_edges: &[Edge],
        val_labels: &[u8],
        cfg: &InNOutConfig,
    ) -> Result<Self> {
        if calibration.is_empty() {
            return contract("calibration set is empty");
        }
        let edges: Vec<Edge> = calibration.iter().map(|t| (t.u, t.v)).collect();
        let labels: Vec<f64> = calibration.iter().map(|t| f64::from(t.y)).collect();
        let fit_feats = edge_features(cf, &edges, cfg.gamma)?;
        let val_feats = edge_features(cf, val_edges, cfg.gamma)?;
        let val_labels = to_f64(val_labels);

        let recompute = || edge_features(cf, &edges, cfg.gamma).map(|f| f.gammas);
        let recompute_ref: &(dyn Fn() -> Result<DenseMatrix> + Sync) = &recompute;
        let fitted = fit_lambda_grid(
            Routing::BySign,
            &TempInputs {
                features: &fit_feats.gammas,
                logits: &fit_feats.logits,
                labels: &labels,
            },
            &TempInputs {
                features: &val_feats.gammas,
                logits: &val_feats.logits,
                labels: &val_labels,
            },
            cfg,
            cfg.recompute_each_epoch.then_some(recompute_ref),
        )?;
        Ok(Self {
            gamma: cfg.gamma,
            fitted,
        })
    }

    pub fn net(&self) -> &TemperatureNet {
        &self.fitted.net
    }

    /// Temperatures for precomputed edge features.
    pub fn temperatures(&self, feats: &EdgeFeatures) -> Result<Vec<f64>> {
        self.fitted.net.temperatures(&feats.gammas, &feats.logits)
    }

    /// Scores `edges`, attaching `T_uv` and `p̂_uv = σ(s_uv / T_uv)`.
    pub fn calibrate(&self, cf: &Counterfactual<'_>, edges: &[Edge], labels: Option<&[u8]>) -> Result<Vec<ScoredEdge>> {
        if let Some(l) = labels {
            if l.len() != edges.len() {
                return contract("one label per edge required");
            }
        }
        let feats = edge_features(cf, edges, self.gamma)?;
        let temps = self.temperatures(&feats)?;
        edges
            .iter()
            .enumerate()
            .map(|(i, &(u, v))| {
                let mut e = ScoredEdge::new(u, v, feats.logits[i], labels.map(|l| l[i]));
                e.set_temperature(temps[i])?;
                Ok(e)
            })
            .collect()
    }
}

/// Convenience: the model's logits for `edges` on `g`, without calibration.
pub fn uncalibrated(model: &LinkModel, g: &Graph, x: &DenseMatrix, edges: &[Edge], labels: &[u8]) -> Result<Vec<ScoredEdge>> {
    let h = model.encode(g, x)?;
    let logits = model.logits(&h, edges)?;
    Ok(crate::linkpred::score_edges(&logits, edges, labels))
}
