//! Binary reduced-EF metrics and evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Reduced EF (≤ 50 %) is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfClass {
    Reduced,
    Normal,
}

impl EfClass {
    pub fn is_positive(self) -> bool {
        self == EfClass::Reduced
    }
}

pub const EF_THRESHOLD_PERCENT: f64 = 50.0;

pub fn label_from_ef(ef_percent: f64) -> Result<EfClass> {
    if !(0.0..=100.0).contains(&ef_percent) {
        return Err(Error::OutOfRange(ef_percent));
    }
    Ok(if ef_percent <= EF_THRESHOLD_PERCENT {
        EfClass::Reduced
    } else {
        EfClass::Normal
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when `TP + FP = 0`; precision reported as 0.
    pub precision_undefined: bool,
    /// Set when `TP + FN = 0`; recall reported as 0.
    pub recall_undefined: bool,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn confusion_metrics(predictions: &[bool], labels: &[bool]) -> Result<Confusion> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch(predictions.len(), labels.len()));
    }
    if labels.is_empty() {
        return Err(Error::LengthMismatch(0, 0));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, &y) in predictions.iter().zip(labels) {
        match (p, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let (precision, precision_undefined) = ratio(tp, tp + fp);
    let (recall, recall_undefined) = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(Confusion {
        tp,
        fp,
        tn,
        fn_,
        precision,
        recall,
        f1,
        accuracy: (tp + tn) as f64 / labels.len() as f64,
        precision_undefined,
        recall_undefined,
    })
}

/// Mann–Whitney AUROC via mid-ranks: ties between a positive and a negative
/// count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::LengthMismatch(scores.len(), labels.len()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClassOnly);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::OutOfRange(f64::NAN));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of (doubled) mid-ranks of positives keeps everything integral
    let mut pos_rank2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1, doubled mid-rank = i + j + 2
        let mid2 = (i + j + 2) as u64;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        pos_rank2 += mid2 * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u64;
    let u2 = pos_rank2 - np * (np + 1);
    Ok(u2 as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub threshold: f64,
    /// Run metadata echoed as `# key = value` lines.
    pub meta: Vec<(String, String)>,
}

impl MetricsReport {
    /// Scores are probabilities of the positive (reduced) class.
    pub fn from_scores(scores: &[f64], labels: &[bool], threshold: f64) -> Result<Self> {
        let auc = auroc(scores, labels)?;
        let preds: Vec<bool> = scores.iter().map(|&s| s >= threshold).collect();
        let c = confusion_metrics(&preds, labels)?;
        let n_pos = labels.iter().filter(|&&l| l).count();
        Ok(MetricsReport {
            f1: c.f1,
            recall: c.recall,
            precision: c.precision,
            accuracy: c.accuracy,
            auroc: auc,
            n_pos,
            n_neg: labels.len() - n_pos,
            threshold,
            meta: Vec::new(),
        })
    }

    fn rows(&self) -> [(&'static str, String); 8] {
        [
            ("f1", self.f1.to_string()),
            ("recall", self.recall.to_string()),
            ("precision", self.precision.to_string()),
            ("accuracy", self.accuracy.to_string()),
            ("auroc", self.auroc.to_string()),
            ("n_pos", self.n_pos.to_string()),
            ("n_neg", self.n_neg.to_string()),
            ("threshold", self.threshold.to_string()),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# {k} = {v}");
        }
        out.push_str("metric,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn to_pretty(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k:>10}: {v}");
        }
        out
    }

    pub fn save(&self, csv_path: &Path) -> Result<()> {
        write_atomic(csv_path, self.to_csv().as_bytes())?;
        write_atomic(&csv_path.with_extension("txt"), self.to_pretty().as_bytes())
    }
}
