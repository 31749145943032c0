//! Grid sweeps over sampler settings: negatives-per-positive ratio and the
//! popularity-weighting coefficient.
//!
//! Every point trains a fresh model with a seed derived from the template
//! seed and the point's grid index, then evaluates against the bundle's
//! fixed test sets, so curves compare models and not data. Rows appear in
//! grid order.

use crate::error::{Error, Result};
use crate::pipelines::bundle::DataBundle;
use crate::pipelines::report::{ExperimentReport, ReportRow, ReportValue};
use crate::pipelines::train::{train, EvalSuite, LossKind, TrainConfig};
use crate::sampling::{PopularityWeightConfig, SamplerMode};
use crate::seeding;

fn annotate(point: String) -> impl FnOnce(Error) -> Error {
    move |e| Error::SweepPoint {
        point,
        source: Box::new(e),
    }
}

fn suite_row(eval: &EvalSuite) -> Result<ReportRow> {
    let mut row = ReportRow::new();
    row.insert("roc_auc".into(), ReportValue::f64(eval.sampled_auc)?);
    row.insert(
        "grouped_auc".into(),
        ReportValue::f64(eval.sampled_grouped.mean)?,
    );
    row.insert(
        "language_mismatch".into(),
        ReportValue::f64(eval.mismatch_rate)?,
    );
    row.insert(
        "popularity_pearson".into(),
        match eval.popularity_pearson {
            Some(r) => ReportValue::f64(r)?,
            None => ReportValue::na(),
        },
    );
    Ok(row)
}

/// Trains one model per negatives-per-positive ratio and tabulates ranking
/// quality on the sampled-negative test set.
pub fn sweep_negative_ratio(
    bundle: &DataBundle,
    ratios: &[usize],
    template: &TrainConfig,
) -> Result<ExperimentReport> {
    if ratios.is_empty() {
        return Err(Error::config("ratio grid is empty"));
    }
    if !ratios.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::config(format!(
            "ratio grid must be strictly ascending, got {ratios:?}"
        )));
    }
    template.validate()?;
    if template.loss != LossKind::Pointwise {
        return Err(Error::config(
            "the ratio sweep varies sampled negatives, which is pointwise training",
        ));
    }

    let sweep_seed = seeding::derive_tagged(template.seed, "ratio-sweep");
    let mut report = ExperimentReport::new("sweep-negatives", template.seed, template.echo());
    report.set_metric("grid", format!("{ratios:?}").as_str().into());
    for (i, &ratio) in ratios.iter().enumerate() {
        let mut config = template.clone();
        config.sampler.negatives_per_positive = ratio;
        config.seed = seeding::derive(sweep_seed, i as u64);
        let outcome = train(bundle, &config).map_err(annotate(format!("ratio {ratio}")))?;
        let mut row = suite_row(&outcome.eval).map_err(annotate(format!("ratio {ratio}")))?;
        row.insert("ratio".into(), ratio.into());
        row.insert(
            "final_train_loss".into(),
            ReportValue::f64(outcome.final_loss)?,
        );
        report.push_row(row);
    }
    Ok(report)
}

/// Largest grid value whose marginal gain over its predecessor falls below
/// 10% of the total sweep gain; `None` when no step qualifies (or there is
/// only one point).
pub fn elbow_t(ts: &[f64], aucs: &[f64]) -> Option<f64> {
    if ts.len() < 2 || ts.len() != aucs.len() {
        return None;
    }
    let total = aucs[aucs.len() - 1] - aucs[0];
    let mut elbow = None;
    for i in 1..ts.len() {
        if aucs[i] - aucs[i - 1] < 0.1 * total {
            elbow = Some(ts[i]);
        }
    }
    elbow
}

/// Trains one in-batch triplet model per weighting coefficient `t` and
/// tabulates retrieval popularity alignment alongside ranking quality.
pub fn sweep_popularity_t(
    bundle: &DataBundle,
    t_values: &[f64],
    template: &TrainConfig,
) -> Result<ExperimentReport> {
    if t_values.is_empty() {
        return Err(Error::config("t grid is empty"));
    }
    if !t_values.iter().all(|t| t.is_finite() && *t > 0.0) {
        return Err(Error::config(format!(
            "t values must be positive and finite, got {t_values:?}"
        )));
    }
    if !t_values.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::config(format!(
            "t grid must be strictly ascending, got {t_values:?}"
        )));
    }
    template.validate()?;
    if template.loss != LossKind::Triplet || template.sampler.mode != SamplerMode::InBatch {
        return Err(Error::config(
            "the popularity sweep weights in-batch triplets; configure triplet loss \
             with the in_batch sampler",
        ));
    }

    let sweep_seed = seeding::derive_tagged(template.seed, "popularity-sweep");
    let mut report = ExperimentReport::new("sweep-popularity", template.seed, template.echo());
    report.set_metric("grid", format!("{t_values:?}").as_str().into());
    let mut aucs = Vec::with_capacity(t_values.len());
    for (i, &t) in t_values.iter().enumerate() {
        let mut config = template.clone();
        config.popularity_weighting = Some(PopularityWeightConfig { t });
        config.seed = seeding::derive(sweep_seed, i as u64);
        let outcome = train(bundle, &config).map_err(annotate(format!("t {t}")))?;
        let mut row = suite_row(&outcome.eval).map_err(annotate(format!("t {t}")))?;
        row.insert("t".into(), ReportValue::f64(t)?);
        row.insert(
            "final_train_loss".into(),
            ReportValue::f64(outcome.final_loss)?,
        );
        aucs.push(outcome.eval.sampled_auc);
        report.push_row(row);
    }
    if let Some(elbow) = elbow_t(t_values, &aucs) {
        report.set_metric("elbow_t", ReportValue::f64(elbow)?);
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elbow_picks_last_small_step() {
        // Total gain 0.10; threshold 0.01. Steps: 0.06, 0.03, 0.01-eps, 0.006.
        let ts = [1.0, 10.0, 100.0, 1000.0, 10000.0];
        let aucs = [0.60, 0.66, 0.69, 0.6999, 0.7059];
        // Steps below threshold: the 100->1000 step (0.0099) and the
        // 1000->10000 step (0.006); the elbow is the later one.
        assert_eq!(elbow_t(&ts, &aucs), Some(10000.0));
    }

    #[test]
    fn elbow_absent_when_every_step_is_large() {
        let ts = [1.0, 2.0, 3.0];
        let aucs = [0.5, 0.6, 0.7];
        assert_eq!(elbow_t(&ts, &aucs), None);
    }

    #[test]
    fn elbow_needs_at_least_two_points() {
        assert_eq!(elbow_t(&[5.0], &[0.9]), None);
        assert_eq!(elbow_t(&[], &[]), None);
    }

    #[test]
    fn elbow_with_flat_tail() {
        // Gains taper: the flat tail steps all qualify; take the last.
        let ts = [1.0, 2.0, 3.0, 4.0];
        let aucs = [0.5, 0.7, 0.705, 0.706];
        assert_eq!(elbow_t(&ts, &aucs), Some(4.0));
    }
}
