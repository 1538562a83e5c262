use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use edgecal::data::{generate_sbm, SbmSpec};
use edgecal::experiment::{
    calibrate_stage, evaluate_stage, finish, load_calibrators, load_trained, report, run_experiment, train_stage,
    DatasetSource, ExperimentConfig,
};
use edgecal::{Adjacency, CalibratorKind, EncoderConfig, EncoderKind, Error, GammaChoice};

#[derive(Parser)]
#[command(name = "edgecal", version, about = "Train link predictors and calibrate their edge probabilities")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model graph with features.
    Synth(SynthArgs),
    /// Split edges and train the link predictor for each seed.
    Train(StageArgs),
    /// Fit calibrators on trained runs.
    Calibrate(StageArgs),
    /// Evaluate trained and calibrated runs on the test split.
    Evaluate(StageArgs),
    /// Render a markdown summary of every results table under a directory.
    Report {
        dir: PathBuf,
    },
    /// Train, calibrate and evaluate end to end.
    Run(StageArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    #[arg(long, default_value_t = 200)]
    nodes_per_block: usize,
    #[arg(long, default_value_t = 0.1)]
    p_in: f64,
    #[arg(long, default_value_t = 0.01)]
    p_out: f64,
    #[arg(long, default_value_t = 8)]
    feature_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for `edges.tsv` and `features.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StageArgs {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    encoder: Option<EncoderKind>,
    /// Comma-separated subset of temp,iso,hist,bbq,innout,embmlp.
    #[arg(long, value_delimiter = ',')]
    calibrators: Option<Vec<CalibratorKind>>,
    #[arg(long)]
    gamma: Option<GammaChoice>,
    /// Comma-separated λ values for the calibration loss.
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    #[arg(long)]
    bins: Option<usize>,
    /// Edge list file; replaces the configured dataset.
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Feature file to go with `--edges`.
    #[arg(long, requires = "edges")]
    features: Option<PathBuf>,
    /// Training epochs of the link predictor.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs of temperature-network fitting.
    #[arg(long)]
    calib_epochs: Option<usize>,
}

impl StageArgs {
    fn config(&self) -> edgecal::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seed {
            cfg.seeds = s.clone();
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(k) = self.encoder {
            if cfg.encoder.kind != k {
                cfg.encoder = EncoderConfig::default_for(k);
            }
        }
        if let Some(c) = &self.calibrators {
            cfg.calibrators = c.clone();
        }
        if let Some(g) = self.gamma {
            cfg.innout.gamma = g;
        }
        if let Some(l) = &self.lambda_grid {
            cfg.innout.lambda_grid = l.clone();
        }
        if let Some(b) = self.bins {
            cfg.bins = b;
            cfg.innout.fit.n_bins = b;
        }
        if let Some(e) = &self.edges {
            cfg.dataset = DatasetSource::Files {
                edges: e.clone(),
                features: self.features.clone(),
            };
            if let Some(stem) = e.file_stem().and_then(|s| s.to_str()) {
                cfg.name = stem.to_string();
            }
        }
        if let Some(e) = self.epochs {
            cfg.train.epochs = e;
        }
        if let Some(e) = self.calib_epochs {
            cfg.innout.fit.epochs = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_synth(args: &SynthArgs) -> edgecal::Result<()> {
    let spec = SbmSpec {
        blocks: args.blocks,
        nodes_per_block: args.nodes_per_block,
        p_in: args.p_in,
        p_out: args.p_out,
        feature_dim: args.feature_dim,
    };
    let (g, x) = generate_sbm(&spec, args.seed)?;
    fs::create_dir_all(&args.out)?;
    let mut edges = String::from("# u\tv\n");
    for (u, v) in g.edges() {
        edges.push_str(&format!("{u}\t{v}\n"));
    }
    fs::write(args.out.join("edges.tsv"), edges)?;
    let mut feats = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(f64::to_string).collect();
        feats.push_str(&row.join(","));
        feats.push('\n');
    }
    fs::write(args.out.join("features.csv"), feats)?;
    println!(
        "wrote {} nodes, {} edges, {} features to {}",
        g.node_count(),
        g.edge_count(),
        x.cols(),
        args.out.display()
    );
    Ok(())
}

fn save_config(cfg: &ExperimentConfig) -> edgecal::Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    Ok(())
}

fn print_table(out_dir: &Path) -> edgecal::Result<()> {
    print!("{}", fs::read_to_string(out_dir.join("results.csv"))?);
    Ok(())
}

fn execute(command: Command) -> Result<(), Failure> {
    match command {
        Command::Synth(args) => Ok(write_synth(&args)?),
        Command::Report { dir } => {
            let md = report(&dir).map_err(data)?;
            fs::write(dir.join("report.md"), &md).map_err(Error::from)?;
            print!("{md}");
            Ok(())
        }
        Command::Run(args) => {
            let cfg = args.config().map_err(usage)?;
            // run_experiment validates and loads before any training
            cfg.dataset.load().map_err(data)?;
            let outcome = run_experiment(&cfg).map_err(fit)?;
            for (seed, msg) in &outcome.failures {
                eprintln!("seed {seed} failed: {msg}");
            }
            Ok(print_table(&cfg.out_dir)?)
        }
        Command::Train(args) => {
            let cfg = args.config().map_err(usage)?;
            let (g, x) = cfg.dataset.load().map_err(data)?;
            save_config(&cfg)?;
            for &seed in &cfg.seeds {
                let run = train_stage(&cfg, &g, &x, seed).map_err(fit)?;
                println!(
                    "seed {seed}: best epoch {} validation AUC {:.4}",
                    run.best_epoch, run.best_val_auc
                );
            }
            Ok(())
        }
        Command::Calibrate(args) => {
            let cfg = args.config().map_err(usage)?;
            let (g, x) = cfg.dataset.load().map_err(data)?;
            for &seed in &cfg.seeds {
                let run = load_trained(&cfg, seed)?;
                let fitted = calibrate_stage(&cfg, &g, &x, &run).map_err(fit)?;
                let names: Vec<&str> = fitted.iter().map(|c| c.name()).collect();
                println!("seed {seed}: fitted {}", names.join(","));
            }
            Ok(())
        }
        Command::Evaluate(args) => {
            let cfg = args.config().map_err(usage)?;
            let (g, x) = cfg.dataset.load().map_err(data)?;
            let outcomes = cfg
                .seeds
                .iter()
                .map(|&seed| {
                    let run = load_trained(&cfg, seed)?;
                    let cals = load_calibrators(&cfg, seed)?;
                    evaluate_stage(&cfg, &g, &x, &run, &cals)
                })
                .collect();
            finish(&cfg, outcomes)?;
            Ok(print_table(&cfg.out_dir)?)
        }
    }
}

const USAGE: u8 = 1;
const DATA: u8 = 2;
const FIT: u8 = 3;

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    err: Error,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match err {
            Error::Contract(_) => USAGE,
            Error::Data(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) | Error::Dimension { .. } => DATA,
            Error::Training { .. } => FIT,
        };
        Self { code, err }
    }
}

/// A bad configuration file or flag combination is a usage error.
fn usage(err: Error) -> Failure {
    Failure { code: USAGE, err }
}

/// Any failure while reading input data is a data error.
fn data(err: Error) -> Failure {
    Failure { code: DATA, err }
}

/// Precondition failures inside training or fitting are fit failures;
/// I/O problems keep their own code.
fn fit(err: Error) -> Failure {
    match err {
        Error::Contract(_) | Error::Training { .. } | Error::Dimension { .. } => Failure { code: FIT, err },
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.err);
            ExitCode::from(f.code)
        }
    }
}
