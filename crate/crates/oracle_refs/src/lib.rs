//! Brute-force reference implementations for tests.
//!
//! Everything here is written from the definitions with plain loops and
//! `f64`, and shares no code with the main crate.

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum RefError {
    /// The function returned a non-finite value at a perturbed point.
    NonFiniteEvaluation { index: usize, value: f64 },
    SingleClass,
}

impl fmt::Display for RefError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RefError::NonFiniteEvaluation { index, value } => {
                write!(f, "non-finite evaluation {value} at coordinate {index}")
            }
            RefError::SingleClass => write!(f, "labels contain a single class"),
        }
    }
}

impl std::error::Error for RefError {}

/// Central-difference settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiniteDiffSpec {
    pub h: f64,
    pub tolerance: f64,
}

impl Default for FiniteDiffSpec {
    fn default() -> Self {
        FiniteDiffSpec { h: 1e-5, tolerance: 1e-4 }
    }
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate.
pub fn ref_grad<F>(mut f: F, x: &[f64], spec: &FiniteDiffSpec) -> Result<Vec<f64>, RefError>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(spec.h > 0.0);
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + spec.h;
        let up = f(&point);
        point[i] = x[i] - spec.h;
        let down = f(&point);
        point[i] = x[i];
        for v in [up, down] {
            if !v.is_finite() {
                return Err(RefError::NonFiniteEvaluation { index: i, value: v });
            }
        }
        grad.push((up - down) / (2.0 * spec.h));
    }
    Ok(grad)
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for k in 0..a.len() {
        dot += a[k] * b[k];
        na += a[k] * a[k];
        nb += b[k] * b[k];
    }
    1.0 - dot / (na.sqrt() * nb.sqrt())
}

/// Temporal contrastive loss over frame features `f_1..f_T`: squared
/// distance for pairs at most `tau_p` apart, squared hinge at margin
/// `tau_m` otherwise, averaged over all pairs.
pub fn ref_contrastive(features: &[Vec<f64>], tau_p: usize, tau_m: f64) -> f64 {
    let t_len = features.len();
    let mut sum = 0.0;
    let mut count = 0usize;
    for t in 0..t_len {
        for dt in 1..t_len {
            if t + dt >= t_len {
                continue;
            }
            let d = cosine_distance(&features[t], &features[t + dt]);
            let term = if dt <= tau_p {
                d * d
            } else {
                let hinge = if tau_m - d > 0.0 { tau_m - d } else { 0.0 };
                hinge * hinge
            };
            sum += term;
            count += 1;
        }
    }
    sum / count as f64
}

/// Mean over masked patches of the per-pixel squared error.
pub fn ref_masked_mse(pred: &[Vec<f64>], target: &[Vec<f64>], masked: &[bool]) -> f64 {
    let mut sum = 0.0;
    let mut patches = 0usize;
    for k in 0..pred.len() {
        if !masked[k] {
            continue;
        }
        let mut sq = 0.0;
        for j in 0..pred[k].len() {
            let e = pred[k][j] - target[k][j];
            sq += e * e;
        }
        sum += sq / pred[k].len() as f64;
        patches += 1;
    }
    sum / patches as f64
}

/// Fraction of (positive, negative) pairs ranked correctly, ties half.
pub fn ref_auroc(scores: &[f64], labels: &[bool]) -> Result<f64, RefError> {
    let mut wins = 0.0;
    let mut pairs = 0usize;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    if pairs == 0 {
        return Err(RefError::SingleClass);
    }
    Ok(wins / pairs as f64)
}

/// `(tp, fp, tn, fn)` counts.
pub fn ref_confusion(predictions: &[bool], labels: &[bool]) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for i in 0..labels.len() {
        match (predictions[i], labels[i]) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, false) => c.2 += 1,
            (false, true) => c.3 += 1,
        }
    }
    c
}
