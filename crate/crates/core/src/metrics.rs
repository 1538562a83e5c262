//! Calibration measurements: expected calibration error, reliability
//! diagrams, negative log-likelihood and the confidence penalty.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::tensor::{bin_index, PROB_CLIP};

/// Bin count used by the ECE training term and reported tables.
pub const DEFAULT_BINS: usize = 15;

pub const RELIABILITY_CSV_HEADER: &str = "bin_lo,bin_hi,mean_conf,frac_pos,count";

fn check_inputs(confidences: &[f64], labels: &[f64]) -> Result<()> {
    if confidences.len() != labels.len() {
        return contract(format!(
            "{} confidences but {} labels",
            confidences.len(),
            labels.len()
        ));
    }
    if confidences.is_empty() {
        return contract("calibration metrics need at least one sample");
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return contract(format!("confidence {c} outside [0, 1]"));
    }
    if let Some(y) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return contract(format!("label {y} is not 0 or 1"));
    }
    Ok(())
}

/// One equal-width confidence bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    /// Mean confidence of members; 0 when empty.
    pub mean_conf: f64,
    /// Fraction of positive labels among members; 0 when empty.
    pub frac_pos: f64,
    pub count: usize,
    /// `Σ (y − c)` over members in sample order.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityDiagram {
    pub bins: Vec<ReliabilityBin>,
    pub total: usize,
}

impl ReliabilityDiagram {
    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    /// `(1/M) Σ_b |Σ_{m∈b} (y_m − c_m)|`.
    pub fn ece(&self) -> f64 {
        self.bins.iter().map(|b| b.residual.abs()).sum::<f64>() / self.total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(RELIABILITY_CSV_HEADER);
        out.push('\n');
        for b in &self.bins {
            let _ = writeln!(out, "{},{},{},{},{}", b.lo, b.hi, b.mean_conf, b.frac_pos, b.count);
        }
        out
    }

    /// Parses the CSV form. The per-bin residual is reconstructed as
    /// `count · (frac_pos − mean_conf)`.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == RELIABILITY_CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header '{RELIABILITY_CSV_HEADER}'"),
                })
            }
        }
        let mut bins = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, got {}", fields.len())));
            }
            let num = |k: usize| {
                fields[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| parse_err(format!("field {k}: {e}")))
            };
            let count = fields[4]
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(format!("count: {e}")))?;
            let (mean_conf, frac_pos) = (num(2)?, num(3)?);
            bins.push(ReliabilityBin {
                lo: num(0)?,
                hi: num(1)?,
                mean_conf,
                frac_pos,
                count,
                residual: count as f64 * (frac_pos - mean_conf),
            });
        }
        let total = bins.iter().map(|b| b.count).sum();
        if total == 0 {
            return contract("reliability CSV holds no samples");
        }
        Ok(Self { bins, total })
    }

    /// Mean of `frac_pos − mean_conf` over non-empty bins whose range lies
    /// above 0.5. Negative means overconfident positives.
    pub fn upper_half_gap(&self) -> Option<f64> {
        let gaps: Vec<f64> = self
            .bins
            .iter()
            .filter(|b| b.count > 0 && b.lo >= 0.5)
            .map(|b| b.frac_pos - b.mean_conf)
            .collect();
        (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64)
    }

    /// Static SVG: per-bin frequency bars, mean-confidence markers and the
    /// identity reference line.
    pub fn to_svg(&self, title: &str) -> String {
        const SIZE: f64 = 400.0;
        const PAD: f64 = 50.0;
        let x = |v: f64| PAD + v * SIZE;
        let y = |v: f64| PAD + (1.0 - v) * SIZE;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
            w = SIZE + 2.0 * PAD
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
            PAD + SIZE / 2.0,
            PAD / 2.0,
            escape(title)
        );
        for b in self.bins.iter().filter(|b| b.count > 0) {
            let _ = writeln!(
                s,
                r##"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="#4c72b0" fill-opacity="0.7" stroke="#1f3d73"/>"##,
                x(b.lo),
                y(b.frac_pos),
                (b.hi - b.lo) * SIZE,
                b.frac_pos * SIZE
            );
            let _ = writeln!(
                s,
                r##"<circle cx="{:.3}" cy="{:.3}" r="3" fill="#dd8452"/>"##,
                x(b.mean_conf),
                y(b.frac_pos)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black" stroke-dasharray="6,4"/>"#,
            x(0.0),
            y(0.0),
            x(1.0),
            y(1.0)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
        );
        for k in 0..=4 {
            let v = k as f64 / 4.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="middle">{v}</text>"#,
                x(v),
                PAD + SIZE + 15.0
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="10" text-anchor="end">{v}</text>"#,
                PAD - 5.0,
                y(v) + 3.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">confidence (ECE {:.2})</text>"#,
            PAD + SIZE / 2.0,
            PAD + SIZE + 35.0,
            100.0 * self.ece()
        );
        s.push_str("</svg>\n");
        s
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn reliability_diagram(confidences: &[f64], labels: &[f64], n_bins: usize) -> Result<ReliabilityDiagram> {
    check_inputs(confidences, labels)?;
    if n_bins == 0 {
        return contract("bin count must be positive");
    }
    let mut conf_sum = vec![0.0; n_bins];
    let mut pos = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    let mut residual = vec![0.0; n_bins];
    for (&c, &y) in confidences.iter().zip(labels) {
        let b = bin_index(c, n_bins);
        conf_sum[b] += c;
        pos[b] += y as usize;
        count[b] += 1;
        residual[b] += y - c;
    }
    let bins = (0..n_bins)
        .map(|b| {
            let n = count[b];
            let (mean_conf, frac_pos) = if n == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / n as f64, pos[b] as f64 / n as f64)
            };
            ReliabilityBin {
                lo: b as f64 / n_bins as f64,
                hi: (b + 1) as f64 / n_bins as f64,
                mean_conf,
                frac_pos,
                count: n,
                residual: residual[b],
            }
        })
        .collect();
    Ok(ReliabilityDiagram {
        bins,
        total: confidences.len(),
    })
}

/// Expected calibration error over `n_bins` equal-width bins, as a fraction
/// (multiply by 100 for table units).
pub fn ece(confidences: &[f64], labels: &[f64], n_bins: usize) -> Result<f64> {
    Ok(reliability_diagram(confidences, labels, n_bins)?.ece())
}

pub(crate) fn nll_unchecked(confidences: &[f64], labels: &[f64]) -> f64 {
    confidences
        .iter()
        .zip(labels)
        .map(|(&c, &y)| {
            let p = c.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -y * p.ln() - (1.0 - y) * (1.0 - p).ln()
        })
        .sum()
}

/// Summed negative log-likelihood with confidences clipped to
/// `[1e-12, 1 − 1e-12]`.
pub fn nll(confidences: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(confidences, labels)?;
    Ok(nll_unchecked(confidences, labels))
}

/// Mean of `−(2y − 1)·p̂`: rewards confident correct predictions.
pub fn l_cal(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_inputs(probs, labels)?;
    let total: f64 = probs.iter().zip(labels).map(|(&p, &y)| -(2.0 * y - 1.0) * p).sum();
    Ok(total / probs.len() as f64)
}

/// The three calibration loss terms and their combination.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub cal: f64,
    pub ece: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(nll: f64, cal: f64, ece: f64, lambda: f64) -> Result<Self> {
        if lambda.is_nan() || lambda <= 0.0 {
            return contract(format!("lambda must be positive, got {lambda}"));
        }
        Ok(Self {
            nll,
            cal,
            ece,
            lambda,
            total: nll + cal + lambda * ece,
        })
    }

    /// Evaluates all terms from calibrated probabilities.
    pub fn from_probs(probs: &[f64], labels: &[f64], lambda: f64, n_bins: usize) -> Result<Self> {
        Self::new(nll(probs, labels)?, l_cal(probs, labels)?, ece(probs, labels, n_bins)?, lambda)
    }
}
