//! Ranking and correlation metrics.
//!
//! ROC-AUC is computed from the Mann-Whitney U statistic with average ranks
//! for ties, which is exact (it equals the pair-counting definition where
//! tied pairs score 1/2) and runs in `O(n log n)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredExample {
    pub score: f64,
    pub label: bool,
}

impl ScoredExample {
    pub fn new(score: f64, label: bool) -> Self {
        ScoredExample { score, label }
    }
}

/// Ranks 1..n with ties sharing their average rank.
pub(crate) fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_unstable_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .expect("rank inputs must be comparable")
    });
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Positions i..=j (0-based) share ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve; 0.5 is chance, 1.0 is a perfect ranker.
///
/// Errors with [`Error::DegenerateMetric`] when only one class is present and
/// [`Error::NonFinite`] on NaN/infinite scores.
pub fn roc_auc(examples: &[ScoredExample]) -> Result<f64> {
    let positives = examples.iter().filter(|e| e.label).count();
    let negatives = examples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateMetric(format!(
            "ROC-AUC needs both classes; got {positives} positives and {negatives} negatives"
        )));
    }
    if examples.iter().any(|e| !e.score.is_finite()) {
        return Err(Error::NonFinite("ROC-AUC scores".into()));
    }
    let scores: Vec<f64> = examples.iter().map(|e| e.score).collect();
    let ranks = average_ranks(&scores);
    let rank_sum: f64 = examples
        .iter()
        .zip(&ranks)
        .filter(|(e, _)| e.label)
        .map(|(_, r)| *r)
        .sum();
    let p = positives as f64;
    let n = negatives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * n))
}

/// Mean per-group ROC-AUC. Groups with a single class carry no ranking signal
/// and are skipped (their count is reported, not silently dropped).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupedAuc {
    pub mean: f64,
    /// Groups that contributed to the mean.
    pub used: usize,
    /// Single-class (or empty) groups that could not.
    pub skipped: usize,
}

pub fn grouped_roc_auc(groups: &[Vec<ScoredExample>]) -> Result<GroupedAuc> {
    let mut sum = 0.0;
    let mut used = 0usize;
    let mut skipped = 0usize;
    for group in groups {
        match roc_auc(group) {
            Ok(auc) => {
                sum += auc;
                used += 1;
            }
            Err(Error::DegenerateMetric(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::DegenerateMetric(
            "every group was single-class".into(),
        ));
    }
    Ok(GroupedAuc {
        mean: sum / used as f64,
        used,
        skipped,
    })
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::DegenerateMetric(
            "correlation needs at least two points".into(),
        ));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation inputs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateMetric(
            "correlation undefined for a constant input".into(),
        ));
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Spearman rank correlation: Pearson over average ranks, so ties are exact.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation inputs".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
}
