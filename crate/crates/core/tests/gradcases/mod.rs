//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance suite.

use std::sync::Arc;

use edgecal::innout::{record_loss, CalibrationBatch, Routing, TemperatureNet};
use edgecal::tensor::{CsrMatrix, DenseMatrix, ParamId, Tape, Var};
use crate::oracles::{away_from_zero, check_gradients, random_matrix, rng};
use rand::Rng;

pub const INSTANCES: u64 = 20;

/// Reduces any output to a scalar with fixed random weights.
fn reduce(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let w = random_matrix(&mut rng(seed ^ 0xfeed), r, c, -1.0, 1.0);
    tape.weighted_sum(out, Arc::new(w)).unwrap()
}

/// Worst finite-difference relative error of one checked instance.
pub struct GradCheck {
    pub name: String,
    pub instance: u64,
    pub error: f64,
}

fn push(out: &mut Vec<GradCheck>, name: &str, instance: u64, error: f64) {
    out.push(GradCheck {
        name: name.to_string(),
        instance,
        error,
    });
}

pub fn binary_primitives() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let mut r = rng(seed);
        let (n, k, m) = (r.random_range(1..5), r.random_range(1..5), r.random_range(1..5));
        let a = random_matrix(&mut r, n, k, -2.0, 2.0);
        let b = random_matrix(&mut r, k, m, -2.0, 2.0);
        let err = check_gradients(&[a.clone(), b], |t, v| {
            let o = t.matmul(v[0], v[1]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "matmul", seed, err);

        let bias = random_matrix(&mut r, 1, k, -2.0, 2.0);
        let err = check_gradients(&[a.clone(), bias], |t, v| {
            let o = t.add_row_bias(v[0], v[1]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "add_row_bias", seed, err);

        let b = random_matrix(&mut r, n, k, -2.0, 2.0);
        for op in ["add", "sub", "mul", "concat_cols", "concat_rows"] {
            let err = check_gradients(&[a.clone(), b.clone()], |t, v| {
                let o = match op {
                    "add" => t.add(v[0], v[1]),
                    "sub" => t.sub(v[0], v[1]),
                    "mul" => t.mul(v[0], v[1]),
                    "concat_cols" => t.concat_cols(v[0], v[1]),
                    _ => t.concat_rows(v[0], v[1]),
                }
                .unwrap();
                reduce(t, o, seed)
            });
            push(&mut out, op, seed, err);
        }

        let den = away_from_zero(&mut r, n, k, 2.0);
        let err = check_gradients(&[a.clone(), den], |t, v| {
            let o = t.div(v[0], v[1]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "div", seed, err);

        // min/max: keep the two arguments at least 0.1 apart
        let gap = away_from_zero(&mut r, n, k, 1.0);
        let other = a.add(&gap).unwrap();
        for op in ["min", "max"] {
            let err = check_gradients(&[a.clone(), other.clone()], |t, v| {
                let o = if op == "min" { t.min(v[0], v[1]) } else { t.max(v[0], v[1]) }.unwrap();
                reduce(t, o, seed)
            });
            push(&mut out, op, seed, err);
        }

        let s = random_matrix(&mut r, 1, 1, 0.5, 2.0);
        let err = check_gradients(&[a.clone(), s], |t, v| {
            let o = t.scale_by(v[0], v[1]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "scale_by", seed, err);
    }
    out
}

pub fn unary_primitives() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let mut r = rng(100 + seed);
        let (n, k) = (r.random_range(1..6), r.random_range(1..6));
        let a = away_from_zero(&mut r, n, k, 3.0);
        for op in ["relu", "sigmoid", "softplus", "scale", "add_scalar", "row_sum", "sum", "mean"] {
            let err = check_gradients(std::slice::from_ref(&a), |t, v| {
                let o = match op {
                    "relu" => t.relu(v[0]),
                    "sigmoid" => t.sigmoid(v[0]),
                    "softplus" => t.softplus(v[0]),
                    "scale" => t.scale(v[0], -1.7),
                    "add_scalar" => t.add_scalar(v[0], 0.3),
                    "row_sum" => t.row_sum(v[0]),
                    "sum" => t.sum(v[0]),
                    _ => t.mean(v[0]),
                }
                .unwrap();
                reduce(t, o, seed)
            });
            push(&mut out, op, seed, err);
        }

        let idx: Vec<usize> = (0..7).map(|_| r.random_range(0..n)).collect();
        let err = check_gradients(std::slice::from_ref(&a), |t, v| {
            let o = t.gather_rows(v[0], Arc::new(idx.clone())).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "gather_rows", seed, err);

        let rows: Vec<Vec<(usize, f64)>> = (0..4)
            .map(|_| {
                let mut row = Vec::new();
                for c in 0..n {
                    if r.random_bool(0.5) {
                        row.push((c, r.random_range(-1.0..1.0)));
                    }
                }
                row
            })
            .collect();
        let sp = Arc::new(CsrMatrix::from_row_lists(n, rows));
        let err = check_gradients(std::slice::from_ref(&a), |t, v| {
            let o = t.spmm(sp.clone(), v[0]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "spmm", seed, err);
    }
    out
}

pub fn fused_two_layer_mlp() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let mut r = rng(200 + seed);
        let (n, d, h) = (r.random_range(1..8), r.random_range(1..5), r.random_range(1..6));
        let out_dim = if seed % 2 == 0 { 1 } else { r.random_range(2..4) };
        let inputs = [
            random_matrix(&mut r, n, d, -2.0, 2.0),
            random_matrix(&mut r, d, h, -1.0, 1.0),
            random_matrix(&mut r, 1, h, -0.5, 0.5),
            random_matrix(&mut r, h, out_dim, -1.0, 1.0),
            random_matrix(&mut r, 1, out_dim, -0.5, 0.5),
        ];
        let err = check_gradients(&inputs, |t, v| {
            let o = t.mlp2(v[0], v[1], v[2], v[3], v[4]).unwrap();
            reduce(t, o, seed)
        });
        push(&mut out, "mlp2", seed, err);

        // the fused op evaluates exactly like its composition
        let mut tape = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let fused = tape.mlp2(v[0], v[1], v[2], v[3], v[4]).unwrap();
        let h1 = tape.matmul(v[0], v[1]).unwrap();
        let h1 = tape.add_row_bias(h1, v[2]).unwrap();
        let h1 = tape.relu(h1).unwrap();
        let o = tape.matmul(h1, v[3]).unwrap();
        let composed = tape.add_row_bias(o, v[4]).unwrap();
        assert_eq!(tape.value(fused), tape.value(composed));
    }
    out
}

pub fn three_layer_mlp() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let mut r = rng(300 + seed);
        let inputs = [
            random_matrix(&mut r, 6, 3, -2.0, 2.0),
            random_matrix(&mut r, 3, 5, -1.0, 1.0),
            random_matrix(&mut r, 1, 5, -0.5, 0.5),
            random_matrix(&mut r, 5, 4, -1.0, 1.0),
            random_matrix(&mut r, 1, 4, -0.5, 0.5),
            random_matrix(&mut r, 4, 1, -1.0, 1.0),
        ];
        let labels = Arc::new((0..6).map(|i| (i % 2) as f64).collect::<Vec<_>>());
        let err = check_gradients(&inputs, |t, v| {
            let h = t.matmul(v[0], v[1]).unwrap();
            let h = t.add_row_bias(h, v[2]).unwrap();
            let h = t.relu(h).unwrap();
            let h = t.matmul(h, v[3]).unwrap();
            let h = t.add_row_bias(h, v[4]).unwrap();
            let h = t.softplus(h).unwrap();
            let s = t.matmul(h, v[5]).unwrap();
            t.bce_with_logits(s, labels.clone()).unwrap()
        });
        push(&mut out, "3-layer mlp", seed, err);
    }
    out
}

fn labels_for(r: &mut impl Rng, n: usize) -> Arc<Vec<f64>> {
    let mut y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    y[0] = 1.0;
    y[n - 1] = 0.0;
    Arc::new(y)
}

/// Probabilities at least `margin` away from every edge of `n_bins` bins.
fn interior_probs(r: &mut impl Rng, n: usize, n_bins: usize, margin: f64) -> DenseMatrix {
    let data = (0..n)
        .map(|_| loop {
            let p: f64 = r.random_range(0.02..0.98);
            let frac = (p * n_bins as f64).fract();
            if frac > margin * n_bins as f64 && frac < 1.0 - margin * n_bins as f64 {
                break p;
            }
        })
        .collect();
    DenseMatrix::new(n, 1, data).unwrap()
}

pub fn loss_primitives() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        let mut r = rng(400 + seed);
        let n = r.random_range(2..30);
        let y = labels_for(&mut r, n);
        let s = random_matrix(&mut r, n, 1, -4.0, 4.0);
        let err = check_gradients(&[s], |t, v| t.bce_with_logits(v[0], y.clone()).unwrap());
        push(&mut out, "bce_with_logits", seed, err);

        let p = interior_probs(&mut r, n, 15, 1e-3);
        let err = check_gradients(std::slice::from_ref(&p), |t, v| t.nll(v[0], y.clone()).unwrap());
        push(&mut out, "nll", seed, err);

        let w = Arc::new(random_matrix(&mut r, n, 1, -1.0, 1.0));
        let err = check_gradients(std::slice::from_ref(&p), |t, v| t.weighted_sum(v[0], w.clone()).unwrap());
        push(&mut out, "weighted_sum", seed, err);

        // binning frozen: no probability within 1e-3 of a bin edge, so the
        // finite-difference steps never move a sample between bins
        let err = check_gradients(std::slice::from_ref(&p), |t, v| t.binned_abs_residual(v[0], y.clone(), 15).unwrap());
        push(&mut out, "binned_abs_residual", seed, err);
    }
    out
}

/// A temperature net with random weights. Output weights are small and the
/// output bias large enough that `T` stays well above zero, keeping `σ(s/T)`
/// away from the probability clip.
fn random_net(seed: u64, in_dim: usize) -> TemperatureNet {
    let mut net = TemperatureNet::init(Routing::BySign, in_dim, 6, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    let params: Vec<(ParamId, String)> = net.params.iter().map(|(id, name, _)| (id, name.to_string())).collect();
    for (id, name) in params {
        let (rows, cols) = net.params.get(id).shape();
        let (lo, hi) = match name.rsplit('.').next() {
            Some("w2") => (-0.3, 0.3),
            Some("b2") => (1.0, 2.0),
            _ => (-1.0, 1.0),
        };
        *net.params.get_mut(id) = random_matrix(&mut r, rows, cols, lo, hi);
    }
    net
}

/// One calibration-loss term as a function of the net's parameters.
fn loss_term_error(seed: u64, lambda: f64, term: &str) -> f64 {
    let mut r = rng(500 + seed);
    let n = 24;
    let features = random_matrix(&mut r, n, 2, 0.0, 3.0);
    let logits: Vec<f64> = (0..n)
        .map(|i| {
            let m = r.random_range(0.2..3.0);
            if i % 2 == 0 {
                m
            } else {
                -m
            }
        })
        .collect();
    let labels: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
    let net = random_net(seed, 2);
    let batch = CalibrationBatch::new(&net, &logits, &labels).unwrap();
    let inputs: Vec<DenseMatrix> = net.params.iter().map(|(_, _, v)| v.clone()).collect();
    check_gradients(&inputs, |t, v| {
        let loss = record_loss(t, &net, v, &features, &batch, lambda, 15).unwrap();
        match term {
            "nll" => loss.nll,
            "cal" => loss.cal,
            "ece" => loss.ece,
            _ => loss.total,
        }
    })
}

/// `L_NLL`, `L_Cal` and the full loss with frozen binning, as functions of
/// the temperature net's parameters.
pub fn calibration_losses() -> Vec<GradCheck> {
    let mut out = Vec::new();
    for seed in 0..INSTANCES {
        for term in ["nll", "cal", "total"] {
            let err = loss_term_error(seed, 1.0 + seed as f64 * 0.25, term);
            push(&mut out, term, seed, err);
        }
    }
    out
}

