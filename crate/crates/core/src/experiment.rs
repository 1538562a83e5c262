//! End-to-end experiments: split, train, calibrate and evaluate over a list
//! of seeds, then aggregate into a results table with per-run artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    fit_bbq, fit_emb_mlp, fit_histogram, fit_isotonic, fit_temperature, CalibratorKind, FittedCalibrator,
};
use crate::checkpoint;
use crate::data::{generate_sbm, load_dataset, SbmSpec};
use crate::error::{contract, Error, Result};
use crate::gnn::{EncoderConfig, LinkModel, ModelConfig, ScorerConfig};
use crate::graph::{split_edges, Adjacency, CalibrationTriple, Edge, EdgeSplit, Graph};
use crate::innout::{build_calibration_set, Counterfactual, InNOut, InNOutConfig, TempInputs};
use crate::linkpred::{accuracy, auc, hits_at_k, labeled, score_edges, train, ScoredEdge, TrainConfig};
use crate::metrics::{nll, reliability_diagram, ReliabilityDiagram};
use crate::tensor::{sigmoid, DenseMatrix};

pub const RESULTS_CSV_HEADER: &str =
    "dataset,model,calibrator,seed_count,ece_mean,ece_std,nll_mean,acc_mean,auc_mean,hits20_mean,hits20_std";
pub const UNCALIBRATED: &str = "uncalibrated";
pub const HITS_K: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic { sbm: SbmSpec, seed: u64 },
    Files { edges: PathBuf, features: Option<PathBuf> },
}

impl DatasetSource {
    pub fn load(&self) -> Result<(Graph, DenseMatrix)> {
        match self {
            Self::Synthetic { sbm, seed } => generate_sbm(sbm, *seed),
            Self::Files { edges, features } => load_dataset(edges, features.as_deref()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Dataset name used in the results table.
    pub name: String,
    pub dataset: DatasetSource,
    pub encoder: EncoderConfig,
    pub scorer: ScorerConfig,
    pub train: TrainConfig,
    pub calibrators: Vec<CalibratorKind>,
    pub innout: InNOutConfig,
    pub seeds: Vec<u64>,
    /// Train/validation/test fractions of the edge set.
    pub split: (f64, f64, f64),
    /// Bin count for ECE, reliability diagrams and histogram binning.
    pub bins: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "sbm".into(),
            dataset: DatasetSource::Synthetic {
                sbm: SbmSpec::default(),
                seed: 0,
            },
            encoder: EncoderConfig::default_for(crate::gnn::EncoderKind::Gcn),
            scorer: ScorerConfig::default(),
            train: TrainConfig::default(),
            calibrators: CalibratorKind::ALL.to_vec(),
            innout: InNOutConfig::default(),
            seeds: vec![0, 1, 2, 3, 4],
            split: (0.8, 0.1, 0.1),
            bins: crate::metrics::DEFAULT_BINS,
            out_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return contract("at least one seed is required");
        }
        if self.bins == 0 {
            return contract("bins must be at least 1");
        }
        self.encoder.validate()?;
        self.train.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        Ok(cfg)
    }

    fn seed_dir(&self, seed: u64) -> PathBuf {
        self.out_dir.join("runs").join(format!("seed-{seed}"))
    }
}

/// Independent seed stream `stream` derived from a run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(stream)
}

/// Test-set metrics of one calibrator on one run. ECE values are percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub ece: f64,
    pub ece10: f64,
    pub ece15: f64,
    /// Mean per-edge negative log-likelihood.
    pub nll: f64,
    pub acc: f64,
    pub auc: f64,
    pub hits20: f64,
}

pub fn confidences_and_labels(scored: &[ScoredEdge]) -> Result<(Vec<f64>, Vec<f64>)> {
    scored
        .iter()
        .map(|e| match e.label {
            Some(y) => Ok((e.confidence(), f64::from(y))),
            None => contract(format!("edge ({}, {}) has no label", e.u, e.v)),
        })
        .collect::<Result<Vec<_>>>()
        .map(|v| v.into_iter().unzip())
}

pub fn evaluate(scored: &[ScoredEdge], bins: usize) -> Result<RunMetrics> {
    let (c, y) = confidences_and_labels(scored)?;
    let ece_at = |n: usize| crate::metrics::ece(&c, &y, n).map(|e| 100.0 * e);
    Ok(RunMetrics {
        ece: ece_at(bins)?,
        ece10: ece_at(10)?,
        ece15: ece_at(15)?,
        nll: nll(&c, &y)? / c.len() as f64,
        acc: accuracy(scored)?,
        auc: auc(scored)?,
        hits20: hits_at_k(scored, HITS_K)?,
    })
}

/// A fitted calibrator of any kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Calibrator {
    Baseline { fitted: FittedCalibrator },
    Innout { fitted: InNOut },
}

impl Calibrator {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Baseline { fitted } => fitted.name(),
            Self::Innout { .. } => CalibratorKind::Innout.name(),
        }
    }

    /// Scores `edges` with the frozen model behind `cf` and calibrates them.
    pub fn apply(&self, cf: &Counterfactual<'_>, edges: &[Edge], labels: &[u8]) -> Result<Vec<ScoredEdge>> {
        match self {
            Self::Innout { fitted } => fitted.calibrate(cf, edges, Some(labels)),
            Self::Baseline { fitted } => {
                let mut scored = uncalibrated(cf, edges, labels)?;
                let emb = if fitted.needs_embeddings() {
                    Some(cf.model().edge_embeddings(cf.embeddings(), edges)?)
                } else {
                    None
                };
                fitted.apply(&mut scored, emb.as_ref())?;
                Ok(scored)
            }
        }
    }
}

/// Raw model scores for labeled edges.
pub fn uncalibrated(cf: &Counterfactual<'_>, edges: &[Edge], labels: &[u8]) -> Result<Vec<ScoredEdge>> {
    if edges.len() != labels.len() {
        return contract("one label per edge required");
    }
    let logits = cf.model().logits(cf.embeddings(), edges)?;
    Ok(score_edges(&logits, edges, labels))
}

/// Everything a calibrator is fitted on.
pub struct CalibrationData<'c, 'a> {
    pub cf: &'c Counterfactual<'a>,
    pub calibration: Vec<CalibrationTriple>,
    pub val_edges: Vec<Edge>,
    pub val_labels: Vec<u8>,
    pub innout: InNOutConfig,
    pub bins: usize,
}

impl CalibrationData<'_, '_> {
    fn calibration_edges(&self) -> (Vec<Edge>, Vec<f64>) {
        self.calibration
            .iter()
            .map(|t| ((t.u, t.v), f64::from(t.y)))
            .unzip()
    }

    pub fn fit(&self, kind: CalibratorKind) -> Result<Calibrator> {
        if kind == CalibratorKind::Innout {
            let fitted = InNOut::fit(self.cf, &self.calibration, &self.val_edges, &self.val_labels, &self.innout)?;
            return Ok(Calibrator::Innout { fitted });
        }
        let model = self.cf.model();
        let h = self.cf.embeddings();
        let (edges, labels) = self.calibration_edges();
        let logits = model.logits(h, &edges)?;
        let probs: Vec<f64> = logits.iter().map(|&s| sigmoid(s)).collect();
        let fitted = match kind {
            CalibratorKind::Temp => FittedCalibrator::Temp {
                t: fit_temperature(&logits, &labels)?,
            },
            CalibratorKind::Iso => FittedCalibrator::Isotonic(fit_isotonic(&probs, &labels)?),
            CalibratorKind::Hist => FittedCalibrator::Histogram(fit_histogram(&probs, &labels, self.bins)?),
            CalibratorKind::Bbq => FittedCalibrator::Bbq(fit_bbq(&probs, &labels)?),
            CalibratorKind::Embmlp => {
                let emb = model.edge_embeddings(h, &edges)?;
                let val_emb = model.edge_embeddings(h, &self.val_edges)?;
                let val_logits = model.logits(h, &self.val_edges)?;
                let val_labels: Vec<f64> = self.val_labels.iter().map(|&y| f64::from(y)).collect();
                FittedCalibrator::EmbMlp(fit_emb_mlp(
                    &TempInputs {
                        features: &emb,
                        logits: &logits,
                        labels: &labels,
                    },
                    &TempInputs {
                        features: &val_emb,
                        logits: &val_logits,
                        labels: &val_labels,
                    },
                    &self.innout,
                )?)
            }
            CalibratorKind::Innout => unreachable!("handled above"),
        };
        Ok(Calibrator::Baseline { fitted })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratorResult {
    pub calibrator: String,
    pub metrics: RunMetrics,
}

/// Outcome of one seed, written to `runs/seed-<s>/run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    /// Uncalibrated first, then calibrators in configuration order.
    pub results: Vec<CalibratorResult>,
    pub lambdas: BTreeMap<String, f64>,
}

impl SeedRun {
    pub fn metrics(&self, calibrator: &str) -> Option<&RunMetrics> {
        self.results.iter().find(|r| r.calibrator == calibrator).map(|r| &r.metrics)
    }
}

fn write_diagram(dir: &Path, name: &str, title: &str, diagram: &ReliabilityDiagram) -> Result<()> {
    fs::write(dir.join(format!("{name}.csv")), diagram.to_csv())?;
    fs::write(dir.join(format!("{name}.svg")), diagram.to_svg(title))?;
    Ok(())
}

/// A trained model with the split it was trained on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedRun {
    pub seed: u64,
    pub split: EdgeSplit,
    pub model: LinkModel,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

/// Splits the edges and trains the link predictor for one seed. Writes
/// `trained.json` and `train_log.jsonl` to the seed directory.
pub fn train_stage(cfg: &ExperimentConfig, g: &Graph, x: &DenseMatrix, seed: u64) -> Result<TrainedRun> {
    let split: EdgeSplit = split_edges(g, cfg.split, seed)?;
    let model_cfg = ModelConfig {
        encoder: cfg.encoder.clone(),
        scorer: cfg.scorer.clone(),
        in_dim: x.cols(),
    };
    let tc = TrainConfig {
        seed: derive_seed(seed, 1),
        ..cfg.train.clone()
    };
    let outcome = train(model_cfg, x, &split, &tc)?;
    let dir = cfg.seed_dir(seed);
    fs::create_dir_all(&dir)?;
    let mut log = Vec::new();
    outcome.write_log(&mut log)?;
    fs::write(dir.join("train_log.jsonl"), log)?;
    let run = TrainedRun {
        seed,
        split,
        model: outcome.model,
        best_epoch: outcome.best_epoch,
        best_val_auc: outcome.best_val_auc,
    };
    checkpoint::save(&dir.join("trained.json"), "trained", &run)?;
    Ok(run)
}

pub fn load_trained(cfg: &ExperimentConfig, seed: u64) -> Result<TrainedRun> {
    checkpoint::load(&cfg.seed_dir(seed).join("trained.json"), "trained")
}

pub fn load_calibrators(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<Calibrator>> {
    checkpoint::load(&cfg.seed_dir(seed).join("calibrators.json"), "calibrators")
}

/// Fits every configured calibrator on the calibration set of a trained
/// run. Writes `calibrators.json` to the seed directory.
pub fn calibrate_stage(cfg: &ExperimentConfig, g: &Graph, x: &DenseMatrix, run: &TrainedRun) -> Result<Vec<Calibrator>> {
    let train_graph = run.split.train_graph(g.node_count())?;
    let cf = Counterfactual::new(&run.model, &train_graph, x)?;
    let (val_edges, val_labels) = labeled(&run.split.val_pos, &run.split.val_neg);
    let data = CalibrationData {
        cf: &cf,
        calibration: build_calibration_set(g, &run.split, derive_seed(run.seed, 2))?,
        val_edges,
        val_labels,
        innout: InNOutConfig {
            seed: derive_seed(run.seed, 3),
            ..cfg.innout.clone()
        },
        bins: cfg.bins,
    };
    let fitted = cfg.calibrators.iter().map(|&k| data.fit(k)).collect::<Result<Vec<_>>>()?;
    let dir = cfg.seed_dir(run.seed);
    fs::create_dir_all(&dir)?;
    checkpoint::save(&dir.join("calibrators.json"), "calibrators", &fitted)?;
    Ok(fitted)
}

/// Evaluates the uncalibrated model and each calibrator on the test split.
/// Writes reliability diagrams and `run.json` to the seed directory.
pub fn evaluate_stage(
    cfg: &ExperimentConfig,
    g: &Graph,
    x: &DenseMatrix,
    run: &TrainedRun,
    calibrators: &[Calibrator],
) -> Result<SeedRun> {
    let seed = run.seed;
    let train_graph = run.split.train_graph(g.node_count())?;
    let cf = Counterfactual::new(&run.model, &train_graph, x)?;
    let (test_edges, test_labels) = labeled(&run.split.test_pos, &run.split.test_neg);
    let rel_dir = cfg.seed_dir(seed).join("reliability");
    fs::create_dir_all(&rel_dir)?;
    let title = |what: &str| format!("{} {} seed {seed}: {what}", cfg.name, cfg.encoder.kind);

    let mut results = Vec::new();
    let mut lambdas = BTreeMap::new();
    let mut record = |name: &str, scored: &[ScoredEdge]| -> Result<()> {
        let (c, y) = confidences_and_labels(scored)?;
        write_diagram(&rel_dir, name, &title(name), &reliability_diagram(&c, &y, cfg.bins)?)?;
        results.push(CalibratorResult {
            calibrator: name.into(),
            metrics: evaluate(scored, cfg.bins)?,
        });
        Ok(())
    };
    record(UNCALIBRATED, &uncalibrated(&cf, &test_edges, &test_labels)?)?;
    for cal in calibrators {
        record(cal.name(), &cal.apply(&cf, &test_edges, &test_labels)?)?;
        match cal {
            Calibrator::Innout { fitted } => {
                lambdas.insert(cal.name().to_string(), fitted.fitted.lambda);
            }
            Calibrator::Baseline {
                fitted: FittedCalibrator::EmbMlp(f),
            } => {
                lambdas.insert(cal.name().to_string(), f.lambda);
            }
            Calibrator::Baseline { .. } => {}
        }
    }
    let out = SeedRun {
        seed,
        best_epoch: run.best_epoch,
        best_val_auc: run.best_val_auc,
        results,
        lambdas,
    };
    fs::write(cfg.seed_dir(seed).join("run.json"), serde_json::to_string_pretty(&out)?)?;
    Ok(out)
}

/// Runs one seed end to end: split, train, calibrate, evaluate.
pub fn run_seed(cfg: &ExperimentConfig, g: &Graph, x: &DenseMatrix, seed: u64) -> Result<SeedRun> {
    let trained = train_stage(cfg, g, x, seed)?;
    let calibrators = calibrate_stage(cfg, g, x, &trained)?;
    evaluate_stage(cfg, g, x, &trained, &calibrators)
}

/// One aggregated row of the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub dataset: String,
    pub model: String,
    pub calibrator: String,
    pub seed_count: usize,
    pub ece_mean: f64,
    pub ece_std: f64,
    pub nll_mean: f64,
    pub nll_std: f64,
    pub acc_mean: f64,
    pub acc_std: f64,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub hits20_mean: f64,
    pub hits20_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    /// Aggregates completed runs per calibrator, in the order calibrators
    /// first appear.
    pub fn aggregate(dataset: &str, model: &str, runs: &[SeedRun]) -> Result<Self> {
        let Some(first) = runs.first() else {
            return contract("no completed runs to aggregate");
        };
        let mut rows = Vec::new();
        for r in &first.results {
            let ms: Vec<&RunMetrics> = runs.iter().filter_map(|run| run.metrics(&r.calibrator)).collect();
            let col = |f: fn(&RunMetrics) -> f64| mean_std(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
            let (ece_mean, ece_std) = col(|m| m.ece);
            let (nll_mean, nll_std) = col(|m| m.nll);
            let (acc_mean, acc_std) = col(|m| m.acc);
            let (auc_mean, auc_std) = col(|m| m.auc);
            let (hits20_mean, hits20_std) = col(|m| m.hits20);
            rows.push(ResultRow {
                dataset: dataset.into(),
                model: model.into(),
                calibrator: r.calibrator.clone(),
                seed_count: ms.len(),
                ece_mean,
                ece_std,
                nll_mean,
                nll_std,
                acc_mean,
                acc_std,
                auc_mean,
                auc_std,
                hits20_mean,
                hits20_std,
            });
        }
        Ok(Self { rows })
    }

    pub fn row(&self, calibrator: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.calibrator == calibrator)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RESULTS_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.dataset,
                r.model,
                r.calibrator,
                r.seed_count,
                r.ece_mean,
                r.ece_std,
                r.nll_mean,
                r.acc_mean,
                r.auc_mean,
                r.hits20_mean,
                r.hits20_std
            );
        }
        out
    }

    /// Parses a table written by [`ResultsTable::to_csv`]. Columns the CSV
    /// does not carry are left at zero.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == RESULTS_CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: "missing results header".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            if f.len() != 11 {
                return Err(bad(format!("expected 11 fields, found {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(format!("'{}' is not a number", f[k])));
            rows.push(ResultRow {
                dataset: f[0].into(),
                model: f[1].into(),
                calibrator: f[2].into(),
                seed_count: f[3].parse().map_err(|_| bad(format!("'{}' is not a count", f[3])))?,
                ece_mean: num(4)?,
                ece_std: num(5)?,
                nll_mean: num(6)?,
                nll_std: 0.0,
                acc_mean: num(7)?,
                acc_std: 0.0,
                auc_mean: num(8)?,
                auc_std: 0.0,
                hits20_mean: num(9)?,
                hits20_std: num(10)?,
            });
        }
        Ok(Self { rows })
    }
}

/// Completed runs and their aggregate.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub table: ResultsTable,
    pub runs: Vec<SeedRun>,
    /// Seeds that failed, with their error message.
    pub failures: Vec<(u64, String)>,
}

/// Runs every seed (concurrently) and writes `results.csv`, `run.log` and
/// per-seed artifacts under `cfg.out_dir`. A failing seed is logged and
/// left out of the table; if every seed fails the first error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (g, x) = cfg.dataset.load()?;
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;

    let outcomes: Vec<Result<SeedRun>> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, &g, &x, s)).collect();
    finish(cfg, outcomes)
}

/// Logs per-seed outcomes to `run.log` and writes the aggregated
/// `results.csv`. `outcomes` pairs with `cfg.seeds`.
pub fn finish(cfg: &ExperimentConfig, outcomes: Vec<Result<SeedRun>>) -> Result<ExperimentOutcome> {
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    let mut log = String::new();
    for (&seed, outcome) in cfg.seeds.iter().zip(outcomes) {
        match outcome {
            Ok(run) => {
                let _ = writeln!(log, "seed {seed}: ok");
                runs.push(run);
            }
            Err(e) => {
                let _ = writeln!(log, "seed {seed}: failed: {e}");
                failures.push((seed, e.to_string()));
                first_err.get_or_insert(e);
            }
        }
    }
    fs::write(cfg.out_dir.join("run.log"), &log)?;
    if runs.is_empty() {
        return Err(first_err.expect("seeds are non-empty"));
    }
    let table = ResultsTable::aggregate(&cfg.name, &cfg.encoder.kind.to_string(), &runs)?;
    fs::write(cfg.out_dir.join("results.csv"), table.to_csv())?;
    Ok(ExperimentOutcome { table, runs, failures })
}

/// Collects every `results.csv` under `dir` (recursively, sorted by path).
pub fn collect_results(dir: &Path) -> Result<ResultsTable> {
    fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(&p, found)?;
            } else if p.file_name().is_some_and(|n| n == "results.csv") {
                found.push(p);
            }
        }
        Ok(())
    }
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    let mut table = ResultsTable::default();
    for f in files {
        table.rows.extend(ResultsTable::from_csv(&fs::read_to_string(f)?)?.rows);
    }
    Ok(table)
}

/// Markdown summary: one line per (dataset, model) with mean ± std test
/// ECE per calibrator. The lowest mean ECE of each line is bold; exact ties
/// are all bold.
pub fn render_report(table: &ResultsTable) -> Result<String> {
    if table.rows.is_empty() {
        return contract("no results to report");
    }
    let mut calibrators: Vec<&str> = Vec::new();
    let mut groups: Vec<((&str, &str), Vec<&ResultRow>)> = Vec::new();
    for r in &table.rows {
        if !calibrators.contains(&r.calibrator.as_str()) {
            calibrators.push(&r.calibrator);
        }
        let key = (r.dataset.as_str(), r.model.as_str());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, rows)) => rows.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    let mut out = String::from("# Test ECE (%)\n\n| dataset | model |");
    for c in &calibrators {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(calibrators.len()));
    out.push('\n');
    for ((dataset, model), rows) in &groups {
        let best = rows.iter().map(|r| r.ece_mean).fold(f64::INFINITY, f64::min);
        let _ = write!(out, "| {dataset} | {model} |");
        for c in &calibrators {
            match rows.iter().find(|r| r.calibrator == *c) {
                Some(r) if r.ece_mean == best => {
                    let _ = write!(out, " **{:.2} ± {:.2}** |", r.ece_mean, r.ece_std);
                }
                Some(r) => {
                    let _ = write!(out, " {:.2} ± {:.2} |", r.ece_mean, r.ece_std);
                }
                None => out.push_str(" - |"),
            }
        }
        out.push('\n');
    }
    out.push_str("\nBold marks the lowest mean ECE in each row; ties are all bold.\n");
    Ok(out)
}

/// Renders the report for every results table under `dir`.
pub fn report(dir: &Path) -> Result<String> {
    if !dir.is_dir() {
        return contract(format!("{} is not a directory", dir.display()));
    }
    render_report(&collect_results(dir)?)
}
