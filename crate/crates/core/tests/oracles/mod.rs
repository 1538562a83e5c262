//! Brute-force reference implementations shared by the integration tests.
//! None of these call into the crate's own metric or fitting code.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, VecDeque};

use edgecal::tensor::{DenseMatrix, ParamId, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// ECE written straight from its definition: each bin is found by
/// comparing against its edges, then `(1/M) Σ_n |Σ_{B_n} (y − c)|`.
pub fn ece(c: &[f64], y: &[f64], n_bins: usize) -> f64 {
    let mut total = 0.0;
    for b in 0..n_bins {
        let lo = b as f64 / n_bins as f64;
        let hi = (b + 1) as f64 / n_bins as f64;
        let last = b + 1 == n_bins;
        let mut residual = 0.0;
        for (&ci, &yi) in c.iter().zip(y) {
            if ci >= lo && (ci < hi || (last && ci <= hi)) {
                residual += yi - ci;
            }
        }
        total += residual.abs();
    }
    total / c.len() as f64
}

/// Exhaustive isotonic regression: the least-squares non-decreasing fit
/// over the distinct sorted confidences, found by trying every partition
/// into contiguous blocks. Returns the fitted value per distinct level.
pub fn isotonic_exhaustive(c: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut levels: Vec<f64> = c.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let sums: Vec<(f64, f64)> = levels
        .iter()
        .map(|&l| {
            let ys: Vec<f64> = c.iter().zip(y).filter(|(&ci, _)| ci == l).map(|(_, &yi)| yi).collect();
            (ys.iter().sum(), ys.len() as f64)
        })
        .collect();
    let k = levels.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    // bit i set: a block boundary after level i
    for mask in 0u32..(1 << (k - 1)) {
        let mut fit = vec![0.0; k];
        let mut start = 0;
        let mut means = Vec::new();
        for i in 0..k {
            if i + 1 == k || mask & (1 << i) != 0 {
                let (s, n) = sums[start..=i].iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
                let m = s / n;
                fit[start..=i].iter_mut().for_each(|f| *f = m);
                means.push(m);
                start = i + 1;
            }
        }
        if means.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let sse: f64 = c
            .iter()
            .zip(y)
            .map(|(&ci, &yi)| {
                let idx = levels.iter().position(|&l| l == ci).unwrap();
                (yi - fit[idx]).powi(2)
            })
            .sum();
        if best.as_ref().is_none_or(|(b, _)| sse < *b - 1e-12) {
            best = Some((sse, fit));
        }
    }
    (levels, best.unwrap().1)
}

/// Pairwise AUC with ties counted as one half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Percentage of positives strictly above the k-th highest negative.
pub fn hits_at_k(pos: &[f64], neg: &[f64], k: usize) -> f64 {
    let mut sorted = neg.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let threshold = sorted[k - 1];
    100.0 * pos.iter().filter(|&&p| p > threshold).count() as f64 / pos.len() as f64
}

/// Nodes reachable within `depth` hops of `u` or `v`, by plain BFS over an
/// adjacency map.
pub fn bfs_ball(adj: &HashMap<usize, Vec<usize>>, u: usize, v: usize, depth: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([u, v]);
    let mut queue = VecDeque::from([(u, 0), (v, 0)]);
    while let Some((a, d)) = queue.pop_front() {
        if d == depth {
            continue;
        }
        for &b in adj.get(&a).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.insert(b) {
                queue.push_back((b, d + 1));
            }
        }
    }
    seen
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

/// Values with magnitude in `[0.1, hi)` and random sign, away from the
/// kinks of relu, min and max.
pub fn away_from_zero<R: Rng>(rng: &mut R, rows: usize, cols: usize, hi: f64) -> DenseMatrix {
    let data = (0..rows * cols)
        .map(|_| {
            let m = rng.random_range(0.1..hi);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    DenseMatrix::new(rows, cols, data).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.data().iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / (na + nb).max(1e-12)
}

/// Compares tape gradients of a scalar function against central
/// differences. `build` records the function on a fresh tape given one
/// variable per input and returns the scalar output. Returns the worst
/// relative error over all inputs.
pub fn check_gradients<F>(inputs: &[DenseMatrix], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[DenseMatrix]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(ParamId(i), v.clone()))
            .collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item().unwrap()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, v)| tape.param(ParamId(i), v.clone()))
        .collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();

    let mut worst: f64 = 0.0;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads
            .get(ParamId(i))
            .cloned()
            .unwrap_or_else(|| DenseMatrix::zeros(input.rows(), input.cols()));
        let mut numeric = DenseMatrix::zeros(input.rows(), input.cols());
        for k in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            numeric.data_mut()[k] = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}
