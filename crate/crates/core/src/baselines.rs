//! Post-hoc calibrators used as baselines: global temperature scaling,
//! isotonic regression, histogram binning, BBQ and an embedding-driven
//! temperature MLP.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{contract, Result};
use crate::innout::{fit_lambda_grid, FittedTemperature, InNOutConfig, Routing, TempInputs};
use crate::linkpred::ScoredEdge;
use crate::metrics::{nll, DEFAULT_BINS};
use crate::tensor::{bin_index, sigmoid, DenseMatrix};

/// Search interval for `log T`.
pub const LOG_T_RANGE: (f64, f64) = (-4.0, 4.0);
const GOLDEN_TOL: f64 = 1e-6;

fn check_labels(labels: &[f64]) -> Result<()> {
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return contract("labels must be 0 or 1");
    }
    Ok(())
}

fn both_classes(labels: &[f64]) -> Result<()> {
    check_labels(labels)?;
    let pos = labels.iter().filter(|&&y| y == 1.0).count();
    if pos == 0 || pos == labels.len() {
        return contract("temperature scaling needs both classes");
    }
    Ok(())
}

fn tempered_nll(logits: &[f64], labels: &[f64], t: f64) -> Result<f64> {
    let p: Vec<f64> = logits.iter().map(|&s| sigmoid(s / t)).collect();
    nll(&p, labels)
}

/// `argmin_T NLL(σ(s/T), y)` by golden-section search over `log T`.
pub fn fit_temperature(logits: &[f64], labels: &[f64]) -> Result<f64> {
    if logits.len() != labels.len() {
        return contract("one label per logit required");
    }
    both_classes(labels)?;
    let f = |log_t: f64| tempered_nll(logits, labels, log_t.exp());
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = LOG_T_RANGE;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while b - a > GOLDEN_TOL {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
        }
    }
    Ok(((a + b) / 2.0).exp())
}

/// Monotone step function from pool-adjacent-violators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Isotonic {
    /// Distinct fit confidences, ascending.
    pub breakpoints: Vec<f64>,
    /// Fitted value at each breakpoint, non-decreasing.
    pub values: Vec<f64>,
}

impl Isotonic {
    /// Left-continuous step interpolation, clamped outside the fit range.
    pub fn predict(&self, c: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b < c);
        self.values[i.min(self.values.len() - 1)]
    }
}

pub fn fit_isotonic(confidences: &[f64], labels: &[f64]) -> Result<Isotonic> {
    if confidences.len() != labels.len() {
        return contract("one label per confidence required");
    }
    if confidences.len() < 2 {
        return contract("isotonic regression needs at least 2 samples");
    }
    check_labels(labels)?;
    if confidences.iter().any(|c| !c.is_finite()) {
        return contract("confidences must be finite");
    }
    let mut idx: Vec<usize> = (0..confidences.len()).collect();
    idx.sort_by(|&a, &b| confidences[a].total_cmp(&confidences[b]));

    // one block per distinct confidence: (x, sum, weight)
    let mut groups: Vec<(f64, f64, f64)> = Vec::new();
    for &i in &idx {
        match groups.last_mut() {
            Some(g) if g.0 == confidences[i] => {
                g.1 += labels[i];
                g.2 += 1.0;
            }
            _ => groups.push((confidences[i], labels[i], 1.0)),
        }
    }

    // stack of pooled blocks: (sum, weight, group count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for &(_, s, w) in &groups {
        blocks.push((s, w, 1));
        while blocks.len() >= 2 {
            let n = blocks.len();
            let (s2, w2, k2) = blocks[n - 1];
            let (s1, w1, k1) = blocks[n - 2];
            if s1 / w1 <= s2 / w2 {
                break;
            }
            blocks.truncate(n - 2);
            blocks.push((s1 + s2, w1 + w2, k1 + k2));
        }
    }
    let values = blocks
        .iter()
        .flat_map(|&(s, w, k)| std::iter::repeat_n(s / w, k))
        .collect();
    Ok(Isotonic {
        breakpoints: groups.iter().map(|g| g.0).collect(),
        values,
    })
}

/// Equal-width binning with per-bin empirical positive rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub values: Vec<f64>,
}

impl Histogram {
    pub fn n_bins(&self) -> usize {
        self.values.len()
    }

    pub fn predict(&self, c: f64) -> f64 {
        self.values[bin_index(c, self.values.len())]
    }
}

pub fn fit_histogram(confidences: &[f64], labels: &[f64], n_bins: usize) -> Result<Histogram> {
    if confidences.len() != labels.len() || confidences.is_empty() {
        return contract("histogram binning needs matching, non-empty inputs");
    }
    if n_bins == 0 {
        return contract("need at least one bin");
    }
    check_labels(labels)?;
    let mut pos = vec![0.0; n_bins];
    let mut count = vec![0.0; n_bins];
    for (&c, &y) in confidences.iter().zip(labels) {
        if !(0.0..=1.0).contains(&c) {
            return contract(format!("confidence {c} outside [0, 1]"));
        }
        let b = bin_index(c, n_bins);
        pos[b] += y;
        count[b] += 1.0;
    }
    let values = (0..n_bins)
        .map(|b| {
            if count[b] > 0.0 {
                pos[b] / count[b]
            } else {
                (b as f64 + 0.5) / n_bins as f64
            }
        })
        .collect();
    Ok(Histogram { values })
}

/// One equal-frequency binning model inside a BBQ ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BbqModel {
    /// Ascending cut points; bin `k` holds `thresholds[k-1] <= c < thresholds[k]`.
    pub thresholds: Vec<f64>,
    /// Posterior mean positive rate per bin.
    pub values: Vec<f64>,
    /// Log Beta-Bernoulli marginal likelihood of the fit data.
    pub log_score: f64,
}

impl BbqModel {
    pub fn fit(sorted: &[(f64, f64)], n_bins: usize) -> Result<Self> {
        let m = sorted.len();
        if n_bins == 0 || n_bins > m {
            return contract(format!("cannot split {m} samples into {n_bins} bins"));
        }
        let thresholds: Vec<f64> = (1..n_bins)
            .map(|k| {
                let j = k * m / n_bins;
                (sorted[j - 1].0 + sorted[j].0) / 2.0
            })
            .collect();
        let mut pos = vec![0.0; n_bins];
        let mut count = vec![0.0; n_bins];
        let mut model = Self {
            thresholds,
            values: Vec::new(),
            log_score: 0.0,
        };
        for &(c, y) in sorted {
            let b = model.bin(c);
            pos[b] += y;
            count[b] += 1.0;
        }
        model.values = pos.iter().zip(&count).map(|(p, n)| (p + 1.0) / (n + 2.0)).collect();
        model.log_score = pos
            .iter()
            .zip(&count)
            .map(|(&p, &n)| ln_gamma(p + 1.0) + ln_gamma(n - p + 1.0) - ln_gamma(n + 2.0))
            .sum();
        Ok(model)
    }

    pub fn bin(&self, c: f64) -> usize {
        self.thresholds.partition_point(|&t| t <= c)
    }

    pub fn predict(&self, c: f64) -> f64 {
        self.values[self.bin(c)]
    }
}

/// Bayesian average of equal-frequency binning models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bbq {
    pub models: Vec<BbqModel>,
    pub weights: Vec<f64>,
}

impl Bbq {
    pub fn predict(&self, c: f64) -> f64 {
        self.models.iter().zip(&self.weights).map(|(m, w)| w * m.predict(c)).sum()
    }
}

/// Bin counts spaced geometrically between `√M/2` and `2√M`.
pub fn bbq_bin_counts(m: usize) -> Vec<usize> {
    let root = (m as f64).sqrt();
    let lo = (root / 2.0).round().max(2.0);
    let hi = (2.0 * root).round().max(lo + 2.0).min(m as f64);
    let steps = 5;
    let mut counts: Vec<usize> = (0..steps)
        .map(|k| (lo * (hi / lo).powf(k as f64 / (steps - 1) as f64)).round() as usize)
        .collect();
    counts.dedup();
    counts
}

pub fn fit_bbq(confidences: &[f64], labels: &[f64]) -> Result<Bbq> {
    if confidences.len() < 10 {
        return contract("BBQ needs at least 10 samples");
    }
    fit_bbq_with_bins(confidences, labels, &bbq_bin_counts(confidences.len()))
}

/// BBQ over an explicit list of bin counts.
pub fn fit_bbq_with_bins(confidences: &[f64], labels: &[f64], bin_counts: &[usize]) -> Result<Bbq> {
    if confidences.len() != labels.len() || confidences.is_empty() {
        return contract("BBQ needs matching, non-empty inputs");
    }
    if bin_counts.is_empty() {
        return contract("BBQ needs at least one model");
    }
    check_labels(labels)?;
    let mut sorted: Vec<(f64, f64)> = confidences.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let models = bin_counts
        .iter()
        .map(|&b| BbqModel::fit(&sorted, b))
        .collect::<Result<Vec<_>>>()?;
    let top = models.iter().map(|m| m.log_score).fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = models.iter().map(|m| (m.log_score - top).exp()).collect();
    let z: f64 = raw.iter().sum();
    Ok(Bbq {
        models,
        weights: raw.iter().map(|w| w / z).collect(),
    })
}

/// Temperature MLP on the edge embedding `h_uv` alone, trained with the
/// same loss, schedule and λ selection as IN-N-OUT.
pub fn fit_emb_mlp(
    fit_on: &TempInputs<'_>,
    validate_on: &TempInputs<'_>,
    cfg: &InNOutConfig,
) -> Result<FittedTemperature> {
    fit_lambda_grid(Routing::Single, fit_on, validate_on, cfg, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum FittedCalibrator {
    Temp { t: f64 },
    Isotonic(Isotonic),
    Histogram(Histogram),
    Bbq(Bbq),
    EmbMlp(FittedTemperature),
}

impl FittedCalibrator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Temp { .. } => "temp",
            Self::Isotonic(_) => "iso",
            Self::Histogram(_) => "hist",
            Self::Bbq(_) => "bbq",
            Self::EmbMlp(_) => "embmlp",
        }
    }

    /// Checks the invariants a fitted calibrator must hold, e.g. after
    /// loading one from disk.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: &[f64]| v.iter().all(|x| (0.0..=1.0).contains(x));
        match self {
            Self::Temp { t } if !(*t > 0.0 && t.is_finite()) => contract(format!("temperature {t} is not positive")),
            Self::Isotonic(iso)
                if iso.values.is_empty()
                    || iso.values.len() != iso.breakpoints.len()
                    || iso.values.windows(2).any(|w| w[0] > w[1]) =>
            {
                contract("isotonic values must be non-empty and non-decreasing")
            }
            Self::Histogram(h) if h.values.is_empty() || !unit(&h.values) => {
                contract("histogram values must be non-empty and in [0, 1]")
            }
            Self::Bbq(b) => {
                if b.models.is_empty() || b.models.len() != b.weights.len() {
                    return contract("BBQ needs one weight per model");
                }
                if (b.weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                    return contract("BBQ weights must sum to 1");
                }
                if b.models.iter().any(|m| m.values.len() != m.thresholds.len() + 1 || !unit(&m.values)) {
                    return contract("BBQ bin values must be in [0, 1]");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn needs_embeddings(&self) -> bool {
        matches!(self, Self::EmbMlp(_))
    }

    /// Fills the calibrated probability of each edge (and the temperature
    /// for temperature-based variants). `embeddings` holds `h_uv` rows and
    /// is required for the embedding MLP only.
    pub fn apply(&self, scored: &mut [ScoredEdge], embeddings: Option<&DenseMatrix>) -> Result<()> {
        self.validate()?;
        match self {
            Self::Temp { t } => {
                for e in scored.iter_mut() {
                    e.set_temperature(*t)?;
                }
            }
            Self::Isotonic(iso) => scored.iter_mut().for_each(|e| e.calibrated = Some(iso.predict(e.prob))),
            Self::Histogram(h) => scored.iter_mut().for_each(|e| e.calibrated = Some(h.predict(e.prob))),
            Self::Bbq(b) => scored.iter_mut().for_each(|e| e.calibrated = Some(b.predict(e.prob))),
            Self::EmbMlp(f) => {
                let Some(h) = embeddings else {
                    return contract("embedding MLP needs the edge embeddings");
                };
                if h.rows() != scored.len() {
                    return contract("one embedding row per edge required");
                }
                let logits: Vec<f64> = scored.iter().map(|e| e.logit).collect();
                let temps = f.net.temperatures(h, &logits)?;
                for (e, t) in scored.iter_mut().zip(temps) {
                    e.set_temperature(t)?;
                }
            }
        }
        Ok(())
    }
}

/// Which calibrator to fit, as named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibratorKind {
    Temp,
    Iso,
    Hist,
    Bbq,
    Innout,
    Embmlp,
}

impl CalibratorKind {
    pub const ALL: [CalibratorKind; 6] = [Self::Temp, Self::Iso, Self::Hist, Self::Bbq, Self::Innout, Self::Embmlp];

    pub fn name(self) -> &'static str {
        match self {
            Self::Temp => "temp",
            Self::Iso => "iso",
            Self::Hist => "hist",
            Self::Bbq => "bbq",
            Self::Innout => "innout",
            Self::Embmlp => "embmlp",
        }
    }
}

impl std::fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CalibratorKind {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim().to_ascii_lowercase())
            .map_or_else(|| contract(format!("unknown calibrator '{s}'")), Ok)
    }
}

/// Default bin count for histogram binning.
pub const HISTOGRAM_BINS: usize = DEFAULT_BINS;
