//! ROC curves, AUC and the model comparison report.

use std::path::Path;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("scores need at least one positive and one negative label")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score {index} is not finite")]
    NonFiniteScore { index: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive; the first point uses +∞.
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Roc {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    /// From (0, 0) to (1, 1), one point per distinct score.
    pub points: Vec<RocPoint>,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(index) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore { index });
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok((n_pos, n_neg))
}

/// AUC as the Mann–Whitney statistic with midranks: the probability that a
/// positive outscores a negative, ties counting one half.
///
/// The statistic is accumulated in half-units as an integer, so the result
/// is exact up to the final division.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<Roc, EvalError> {
    let (n_pos, n_neg) = check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    // Descending sweep: `neg_above` negatives strictly above the group.
    let mut u2: u128 = 0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (mut p, mut q) = (0usize, 0usize);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] != 0 {
                p += 1;
            } else {
                q += 1;
            }
            i += 1;
        }
        let neg_below = n_neg - fp - q;
        u2 += 2 * (p as u128) * (neg_below as u128) + (p as u128) * (q as u128);
        tp += p;
        fp += q;
        points.push(RocPoint {
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
            threshold: s,
        });
    }
    let auc = u2 as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(Roc {
        auc,
        n_pos,
        n_neg,
        points,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReportRow {
    pub model: String,
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// One row and curve per model; all models score the same buckets.
pub fn comparison_report(models: &[(&str, &[f64])], labels: &[u8]) -> Result<Vec<(ReportRow, Roc)>, EvalError> {
    models
        .iter()
        .map(|(name, scores)| {
            let roc = roc_auc(scores, labels)?;
            Ok((
                ReportRow {
                    model: name.to_string(),
                    auc: roc.auc,
                    n_pos: roc.n_pos,
                    n_neg: roc.n_neg,
                },
                roc,
            ))
        })
        .collect()
}

/// Writes `report.csv` and one `roc_<model>.csv` per row into `dir`.
pub fn write_report(dir: &Path, report: &[(ReportRow, Roc)]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(dir.join("report.csv"))?;
    for (row, _) in report {
        w.serialize(row)?;
    }
    w.flush()?;
    for (row, roc) in report {
        let mut w = csv::Writer::from_path(dir.join(format!("roc_{}.csv", row.model)))?;
        for p in &roc.points {
            w.serialize(p)?;
        }
        w.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_and_tied() {
        assert_eq!(roc_auc(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[0.1, 0.2, 0.9, 0.8], &[1, 1, 0, 0]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[0.3; 5], &[1, 0, 0, 1, 0]).unwrap().auc, 0.5);
    }

    #[test]
    fn single_class() {
        assert_eq!(roc_auc(&[0.1, 0.2], &[1, 1]), Err(EvalError::SingleClass));
    }

    #[test]
    fn staircase_ends() {
        let roc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert_eq!(roc.auc, 0.75);
        let first = roc.points[0];
        let last = *roc.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert_eq!(roc.points.len(), 5);
    }

    #[test]
    fn identical_models_identical_rows() {
        let s = [0.2, 0.9, 0.4];
        let rep = comparison_report(&[("a", &s), ("b", &s)], &[0, 1, 0]).unwrap();
        assert_eq!(rep[0].0.auc, rep[1].0.auc);
    }
}
