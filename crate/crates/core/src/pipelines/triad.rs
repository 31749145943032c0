//! Three-model comparison on one shared world: a model trained only on
//! served feedback, a model trained with sampled random negatives, and the
//! random-negative model fine-tuned on the served feedback afterwards.
//!
//! The served-only model inherits the serving policy's blind spots (its
//! retrieval drifts off-language), the random-negative model fixes retrieval
//! but scores served traffic poorly, and the fine-tuned model is the
//! compromise: near the served-only model on in-policy ranking while keeping
//! mismatch close to the random-negative model.

use serde::{Deserialize, Serialize};

use crate::dataset::PolicyConfig;
use crate::error::Result;
use crate::model::TowerParams;
use crate::pipelines::bundle::{BundleConfig, DataBundle};
use crate::pipelines::report::{ExperimentReport, ReportRow, ReportValue};
use crate::pipelines::train::{
    evaluate_suite, fine_tune_params, train, train_on_implicit, EvalSuite, FineTuneOptions,
    TrainConfig,
};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriadConfig {
    pub bundle: BundleConfig,
    /// Template for the sampled-negative model; the served-only model reuses
    /// everything except the sampler.
    pub train: TrainConfig,
    pub fine_tune: FineTuneOptions,
    pub seed: u64,
}

impl Default for TriadConfig {
    fn default() -> Self {
        let mut bundle = BundleConfig::default();
        bundle.world.n_users = 2000;
        bundle.world.n_items = 20_000;
        bundle.policy = PolicyConfig {
            served_size: 50,
            ..bundle.policy
        };
        // Fine-tuning is one pass at a tenth of this rate, so the pass has
        // to count: per-example updates and a higher shared base rate let
        // the served-feedback signal actually move the towers.
        let mut train = TrainConfig::default();
        train.learning_rate = 1e-2;
        let mut fine_tune = FineTuneOptions::default();
        fine_tune.learning_rate = train.learning_rate;
        fine_tune.batch_size = 1;
        TriadConfig {
            bundle,
            train,
            fine_tune,
            seed: 0,
        }
    }
}

impl TriadConfig {
    pub fn validate(&self) -> Result<()> {
        self.bundle.validate()?;
        self.train.validate()?;
        self.fine_tune.validate()
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone)]
pub struct TriadModel {
    pub name: &'static str,
    pub params: TowerParams,
    pub final_loss: f64,
    pub eval: EvalSuite,
}

#[derive(Debug, Clone)]
pub struct TriadOutcome {
    pub implicit_only: TriadModel,
    pub random_negative: TriadModel,
    pub fine_tuned: TriadModel,
    pub report: ExperimentReport,
}

fn model_row(model: &TriadModel) -> Result<ReportRow> {
    let mut row = ReportRow::new();
    row.insert("model".into(), model.name.into());
    row.insert("implicit_auc".into(), ReportValue::f64(model.eval.implicit_auc)?);
    row.insert(
        "implicit_grouped_auc".into(),
        ReportValue::f64(model.eval.implicit_grouped.mean)?,
    );
    row.insert("sampled_auc".into(), ReportValue::f64(model.eval.sampled_auc)?);
    row.insert(
        "sampled_grouped_auc".into(),
        ReportValue::f64(model.eval.sampled_grouped.mean)?,
    );
    row.insert(
        "language_mismatch".into(),
        ReportValue::f64(model.eval.mismatch_rate)?,
    );
    row.insert(
        "popularity_pearson".into(),
        match model.eval.popularity_pearson {
            Some(r) => ReportValue::f64(r)?,
            None => ReportValue::na(),
        },
    );
    row.insert("final_loss".into(), ReportValue::f64(model.final_loss)?);
    Ok(row)
}

/// Trains all three models on one generated world and evaluates them with
/// the shared suite. Deterministic in the config.
pub fn run_model_triad(config: &TriadConfig) -> Result<TriadOutcome> {
    config.validate()?;
    let bundle = DataBundle::build(&config.bundle)?;
    run_model_triad_on(&bundle, config)
}

/// Same study on a caller-provided bundle (the bundle's own config wins over
/// `config.bundle` for data generation).
pub fn run_model_triad_on(bundle: &DataBundle, config: &TriadConfig) -> Result<TriadOutcome> {
    let implicit_config = TrainConfig {
        seed: seeding::derive_tagged(config.seed, "triad-implicit"),
        ..config.train.clone()
    };
    let implicit = train_on_implicit(bundle, &implicit_config)?;
    let implicit_only = TriadModel {
        name: "implicit_only",
        params: implicit.params,
        final_loss: implicit.final_loss,
        eval: implicit.eval,
    };

    let sampled_config = TrainConfig {
        seed: seeding::derive_tagged(config.seed, "triad-sampled"),
        ..config.train.clone()
    };
    let sampled = train(bundle, &sampled_config)?;
    let random_negative = TriadModel {
        name: "random_negative",
        params: sampled.params,
        final_loss: sampled.final_loss,
        eval: sampled.eval,
    };

    let ft_options = FineTuneOptions {
        seed: seeding::derive_tagged(config.seed, "triad-finetune"),
        ..config.fine_tune.clone()
    };
    let ft = fine_tune_params(
        &random_negative.params,
        &bundle.world,
        &bundle.train_records,
        &bundle.test_records,
        &ft_options,
    )?;
    let ft_eval = evaluate_suite(
        &ft.params,
        bundle,
        seeding::derive_tagged(config.seed, "triad-eval"),
    )?;
    let fine_tuned = TriadModel {
        name: "fine_tuned",
        params: ft.params,
        final_loss: ft.final_loss,
        eval: ft_eval,
    };

    let mut report = ExperimentReport::new("triad", config.seed, config.echo());
    let ratio = |a: f64, b: f64| -> Result<ReportValue> {
        Ok(if b > 0.0 {
            ReportValue::f64(a / b)?
        } else {
            ReportValue::na()
        })
    };
    report.set_metric(
        "mismatch_ratio_implicit_vs_sampled",
        ratio(
            implicit_only.eval.mismatch_rate,
            random_negative.eval.mismatch_rate,
        )?,
    );
    report.set_metric(
        "mismatch_ratio_finetuned_vs_sampled",
        ratio(fine_tuned.eval.mismatch_rate, random_negative.eval.mismatch_rate)?,
    );
    report.set_metric(
        "finetuned_grouped_recovery",
        ratio(
            fine_tuned.eval.implicit_grouped.mean,
            implicit_only.eval.implicit_grouped.mean,
        )?,
    );
    for model in [&implicit_only, &random_negative, &fine_tuned] {
        report.push_row(model_row(model)?);
    }

    Ok(TriadOutcome {
        implicit_only,
        random_negative,
        fine_tuned,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_sized_for_study() {
        let config = TriadConfig::default();
        config.validate().unwrap();
        assert_eq!(config.bundle.world.n_users, 2000);
        assert_eq!(config.bundle.world.n_items, 20_000);
        assert_eq!(config.bundle.policy.served_size, 50);
    }

    #[test]
    fn config_round_trips_through_toml() {
        let config = TriadConfig::default();
        let text = config.echo();
        let back: TriadConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, config);
    }
}
