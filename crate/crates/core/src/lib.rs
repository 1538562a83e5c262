//! Link-prediction GNNs and post-hoc calibration of their edge
//! probabilities, including per-edge temperatures learned from
//! counterfactual embedding discrepancies.

pub mod baselines;
pub mod checkpoint;
pub mod data;
pub mod experiment;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod innout;
pub mod linkpred;
pub mod metrics;
pub mod tensor;

pub use baselines::{CalibratorKind, FittedCalibrator};
pub use error::{Error, Result};
pub use gnn::{EncoderConfig, EncoderKind, LinkModel, ModelConfig, Psi, ScorerConfig};
pub use graph::{split_edges, Adjacency, CalibrationTriple, Edge, EdgeSplit, Graph};
pub use innout::{Counterfactual, GammaChoice, InNOut, InNOutConfig};
pub use linkpred::{ScoredEdge, TrainConfig};
pub use tensor::{DenseMatrix, Tape};
