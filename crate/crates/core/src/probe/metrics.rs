//! Macro ROC-AUC and macro average precision over multi-label scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A macro average together with the labels left out of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroMetric {
    pub value: f64,
    pub per_label: Vec<Option<f64>>,
    /// Labels with no positive or no negative example.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub roc_auc: f64,
    pub map: f64,
    pub skipped_labels: Vec<usize>,
}

fn check(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<usize> {
    if n_labels == 0 || scores.len() != labels.len() || !scores.len().is_multiple_of(n_labels) {
        return Err(Error::Shape(format!(
            "{} scores and {} labels for {n_labels} label columns",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Numerics("NaN score".into()));
    }
    Ok(scores.len() / n_labels)
}

fn column(scores: &[f64], labels: &[u8], n_labels: usize, l: usize) -> (Vec<f64>, Vec<bool>) {
    let s = scores.iter().skip(l).step_by(n_labels).copied().collect();
    let y = labels
        .iter()
        .skip(l)
        .step_by(n_labels)
        .map(|&v| v != 0)
        .collect();
    (s, y)
}

/// Rank statistic with average ranks for ties.
pub fn roc_auc_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean over positives of the precision among all items scored at least as high.
pub fn average_precision_binary(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos = labels.iter().filter(|&&y| y).count();
    if pos == 0 || pos == labels.len() {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut seen, mut tp, mut total) = (0usize, 0usize, 0.0);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let group_pos = order[i..=j].iter().filter(|&&k| labels[k]).count();
        seen += j - i + 1;
        tp += group_pos;
        total += group_pos as f64 * tp as f64 / seen as f64;
        i = j + 1;
    }
    Some(total / pos as f64)
}

fn macro_of(
    scores: &[f64],
    labels: &[u8],
    n_labels: usize,
    f: fn(&[f64], &[bool]) -> Option<f64>,
) -> Result<MacroMetric> {
    check(scores, labels, n_labels)?;
    let per_label: Vec<Option<f64>> = (0..n_labels)
        .map(|l| {
            let (s, y) = column(scores, labels, n_labels, l);
            f(&s, &y)
        })
        .collect();
    let counted: Vec<f64> = per_label.iter().flatten().copied().collect();
    if counted.is_empty() {
        return Err(Error::DegenerateMetric);
    }
    Ok(MacroMetric {
        value: counted.iter().sum::<f64>() / counted.len() as f64,
        skipped: (0..n_labels).filter(|&l| per_label[l].is_none()).collect(),
        per_label,
    })
}

/// `scores` and `labels` are row-major `[n × n_labels]`.
pub fn roc_auc_macro(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<MacroMetric> {
    macro_of(scores, labels, n_labels, roc_auc_binary)
}

pub fn map_macro(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<MacroMetric> {
    macro_of(scores, labels, n_labels, average_precision_binary)
}

pub fn evaluate(scores: &[f64], labels: &[u8], n_labels: usize) -> Result<MetricReport> {
    let auc = roc_auc_macro(scores, labels, n_labels)?;
    let ap = map_macro(scores, labels, n_labels)?;
    Ok(MetricReport {
        roc_auc: auc.value,
        map: ap.value,
        skipped_labels: auc.skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let auc = roc_auc_macro(&[0.1, 0.9], &[0, 1], 1).unwrap();
        let ap = map_macro(&[0.1, 0.9], &[0, 1], 1).unwrap();
        assert_eq!((auc.value, ap.value), (1.0, 1.0));
        assert_eq!(roc_auc_macro(&[0.9, 0.1], &[0, 1], 1).unwrap().value, 0.0);
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(roc_auc_binary(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(
            average_precision_binary(&[0.5, 0.5], &[false, true]),
            Some(0.5)
        );
    }

    #[test]
    fn skipped_and_degenerate() {
        // second label is all-positive
        let m = roc_auc_macro(&[0.1, 0.3, 0.9, 0.4], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(m.skipped, vec![1]);
        assert_eq!(m.value, 1.0);
        assert!(matches!(
            roc_auc_macro(&[0.1, 0.2], &[1, 1], 1),
            Err(Error::DegenerateMetric)
        ));
        assert!(roc_auc_macro(&[0.1, 0.2, 0.3], &[1, 1], 1).is_err());
    }
}
