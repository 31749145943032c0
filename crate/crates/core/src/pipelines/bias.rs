//! Feedback-loop study: what happens when training data is filtered by an
//! incumbent model's scores.
//!
//! A baseline classifier is trained on everything; each grid threshold then
//! keeps only examples the baseline scores above the threshold, a fresh model
//! is retrained from the identical initialization on the kept training rows,
//! and its quality is measured both on the equally-filtered test rows and on
//! the untouched full test set. Thresholds are applied to positives and
//! negatives alike.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::split_by_user;
use crate::error::{Error, Problems, Result};
use crate::eval::{roc_auc, ScoredExample};
use crate::model::{IdExample, IdMlpClassifier, IdMlpConfig};
use crate::pipelines::report::{ExperimentReport, ReportRow, ReportValue};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSimConfig {
    /// Score thresholds, strictly ascending, each in `[0, 1)`.
    pub tau_grid: Vec<f64>,
    pub classifier: IdMlpConfig,
    pub negatives_per_positive: usize,
    pub train_fraction: f64,
    /// Thresholds apply to negatives too (on by default); exposed because
    /// the filtering convention is a modeling choice.
    pub filter_negatives: bool,
    pub seed: u64,
}

impl Default for BiasSimConfig {
    fn default() -> Self {
        BiasSimConfig {
            tau_grid: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            // Extra epochs sharpen calibration, pushing cold items toward
            // score zero so low thresholds already thin the tail.
            classifier: IdMlpConfig {
                epochs: 8,
                ..IdMlpConfig::default()
            },
            negatives_per_positive: 1,
            train_fraction: 0.8,
            filter_negatives: true,
            seed: 0,
        }
    }
}

impl BiasSimConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(!self.tau_grid.is_empty(), "tau_grid is empty");
        p.require(
            self.tau_grid.iter().all(|t| (0.0..1.0).contains(t)),
            format!("tau values must lie in [0, 1), got {:?}", self.tau_grid),
        );
        p.require(
            self.tau_grid.windows(2).all(|w| w[0] < w[1]),
            "tau_grid must be strictly ascending",
        );
        p.require(
            self.negatives_per_positive >= 1,
            "negatives_per_positive must be >= 1",
        );
        p.require(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ),
        );
        p.into_result()
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// One threshold's results. `None` AUCs mean the filter left nothing usable.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasRow {
    pub tau: f64,
    pub biased_auc: Option<f64>,
    pub full_auc: Option<f64>,
    pub kept_train: usize,
    pub kept_test: usize,
    pub degenerate: bool,
    pub params_digest: String,
}

#[derive(Debug, Clone)]
pub struct BiasSimOutcome {
    pub report: ExperimentReport,
    pub baseline: IdMlpClassifier,
    pub baseline_full_auc: f64,
    pub rows: Vec<BiasRow>,
    pub train_examples: Vec<IdExample>,
    pub test_examples: Vec<IdExample>,
}

fn auc_of(model: &IdMlpClassifier, examples: &[IdExample]) -> Result<f64> {
    let scored = examples
        .iter()
        .map(|e| {
            Ok(ScoredExample {
                score: model.predict(e.user, e.item)?,
                label: e.target > 0.5,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    roc_auc(&scored)
}

const NEGATIVE_RETRIES: usize = 100;

/// Draws `ratio` uniform (user, item) pairs per positive, avoiding known
/// engagements; exhausted retries skip the draw and are counted.
fn draw_negatives(
    positives: &[(u64, u64)],
    n_users: usize,
    n_items: usize,
    ratio: usize,
    filter_known: bool,
    seed: u64,
) -> (Vec<IdExample>, usize) {
    let known: std::collections::HashSet<(u64, u64)> = positives.iter().copied().collect();
    let mut rng = seeding::rng_tagged(seed, "bias-negatives");
    let mut negatives = Vec::with_capacity(positives.len() * ratio);
    let mut skipped = 0usize;
    for _ in 0..positives.len() * ratio {
        let mut found = None;
        for _ in 0..NEGATIVE_RETRIES {
            let u = rng.random_range(0..n_users as u64);
            let i = rng.random_range(0..n_items as u64);
            if !filter_known || !known.contains(&(u, i)) {
                found = Some((u, i));
                break;
            }
        }
        match found {
            Some((u, i)) => negatives.push(IdExample {
                user: u as usize,
                item: i as usize,
                target: 0.0,
            }),
            None => skipped += 1,
        }
    }
    (negatives, skipped)
}

/// Runs the full threshold study on explicit (user, item) engagements.
pub fn run_bias_simulation(
    positives: &[(u64, u64)],
    n_users: usize,
    n_items: usize,
    config: &BiasSimConfig,
) -> Result<BiasSimOutcome> {
    config.validate()?;
    if positives.is_empty() {
        return Err(Error::EmptyInput("no positive engagements".into()));
    }
    if let Some(&(u, i)) = positives
        .iter()
        .find(|&&(u, i)| u >= n_users as u64 || i >= n_items as u64)
    {
        return Err(Error::UnknownId(if u >= n_users as u64 { u } else { i }));
    }

    let (negatives, skipped) = draw_negatives(
        positives,
        n_users,
        n_items,
        config.negatives_per_positive,
        config.filter_negatives,
        config.seed,
    );
    let mut examples: Vec<IdExample> = positives
        .iter()
        .map(|&(u, i)| IdExample {
            user: u as usize,
            item: i as usize,
            target: 1.0,
        })
        .collect();
    let n_positives = examples.len();
    let n_negatives = negatives.len();
    examples.extend(negatives);

    let (train_examples, test_examples) = split_by_user(
        &examples,
        |e: &IdExample| e.user as u64,
        config.train_fraction,
        seeding::derive_tagged(config.seed, "bias-split"),
    )?;

    // Retrain seeds derive from the config seed and the grid position, never
    // from the threshold value itself: rerunning with a different grid keeps
    // point i's initialization, and no retrain shares the baseline's weights.
    let init_root = seeding::derive_tagged(config.seed, "bias-init");
    let fit_root = seeding::derive_tagged(config.seed, "bias-fit");

    let mut baseline = IdMlpClassifier::init(
        config.classifier.clone(),
        n_users,
        n_items,
        seeding::derive_tagged(config.seed, "bias-baseline-init"),
    )?;
    baseline.fit(
        &train_examples,
        seeding::derive_tagged(config.seed, "bias-baseline-fit"),
    )?;
    let baseline_full_auc = auc_of(&baseline, &test_examples)?;

    let score_all = |model: &IdMlpClassifier, xs: &[IdExample]| -> Result<Vec<f64>> {
        xs.iter().map(|e| model.predict(e.user, e.item)).collect()
    };
    let train_scores = score_all(&baseline, &train_examples)?;
    let test_scores = score_all(&baseline, &test_examples)?;

    let mut rows = Vec::with_capacity(config.tau_grid.len());
    for (point, &tau) in config.tau_grid.iter().enumerate() {
        let kept_train: Vec<IdExample> = train_examples
            .iter()
            .zip(&train_scores)
            .filter(|(_, &s)| s > tau)
            .map(|(e, _)| *e)
            .collect();
        let kept_test: Vec<IdExample> = test_examples
            .iter()
            .zip(&test_scores)
            .filter(|(_, &s)| s > tau)
            .map(|(e, _)| *e)
            .collect();

        let mut row = BiasRow {
            tau,
            biased_auc: None,
            full_auc: None,
            kept_train: kept_train.len(),
            kept_test: kept_test.len(),
            degenerate: true,
            params_digest: String::new(),
        };
        if !kept_train.is_empty() && !kept_test.is_empty() {
            let mut model = IdMlpClassifier::init(
                config.classifier.clone(),
                n_users,
                n_items,
                seeding::derive(init_root, point as u64),
            )?;
            model.fit(&kept_train, seeding::derive(fit_root, point as u64))?;
            row.params_digest = model.params_digest()[..12].to_string();
            row.biased_auc = match auc_of(&model, &kept_test) {
                Ok(a) => Some(a),
                Err(Error::DegenerateMetric(_)) => None,
                Err(e) => return Err(e),
            };
            row.full_auc = match auc_of(&model, &test_examples) {
                Ok(a) => Some(a),
                Err(Error::DegenerateMetric(_)) => None,
                Err(e) => return Err(e),
            };
            row.degenerate = row.biased_auc.is_none() || row.full_auc.is_none();
        }
        rows.push(row);
    }

    let mut report = ExperimentReport::new("bias-sim", config.seed, config.echo());
    report.set_metric("baseline_full_auc", ReportValue::f64(baseline_full_auc)?);
    report.set_metric("baseline_digest", baseline.params_digest()[..12].to_string().as_str().into());
    report.set_metric("n_positives", n_positives.into());
    report.set_metric("n_negatives", n_negatives.into());
    report.set_metric("skipped_negatives", skipped.into());
    report.set_metric("n_train", train_examples.len().into());
    report.set_metric("n_test", test_examples.len().into());
    for r in &rows {
        let mut row = ReportRow::new();
        row.insert("tau".into(), ReportValue::f64(r.tau)?);
        let auc_cell = |a: Option<f64>| -> Result<ReportValue> {
            Ok(match a {
                Some(v) => ReportValue::f64(v)?,
                None => ReportValue::na(),
            })
        };
        row.insert("biased_auc".into(), auc_cell(r.biased_auc)?);
        row.insert("full_auc".into(), auc_cell(r.full_auc)?);
        row.insert("kept_train".into(), r.kept_train.into());
        row.insert("kept_test".into(), r.kept_test.into());
        row.insert("degenerate".into(), r.degenerate.into());
        row.insert(
            "params_sha".into(),
            if r.params_digest.is_empty() {
                ReportValue::na()
            } else {
                r.params_digest.as_str().into()
            },
        );
        report.push_row(row);
    }

    Ok(BiasSimOutcome {
        report,
        baseline,
        baseline_full_auc,
        rows,
        train_examples,
        test_examples,
    })
}

// --- synthetic engagement generator ------------------------------------------

/// Generator for id-only engagement data with user-taste and item-quality
/// structure: each user's positives are drawn without replacement in
/// proportion to `exp(affinity + quality)`.
///
/// Items come in two populations. The bulk has flat quality, so engagement
/// there is near-interchangeable and hard to rank. A small star fraction
/// draws quality from a capped Pareto tail, so star popularity spans orders
/// of magnitude: however deep a score filter cuts, the surviving items keep
/// a wide popularity spread instead of collapsing into a uniform elite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticBiasConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub latent_dim: usize,
    pub positives_per_user: usize,
    /// Scale on the user-item latent affinity.
    pub affinity_gain: f64,
    /// Scale on per-item quality spread (popularity heterogeneity).
    pub quality_gain: f64,
    /// Fraction of items drawing Pareto quality; the rest form the bulk.
    pub star_fraction: f64,
    /// Gaussian quality spread of bulk items. This is what a filtered-out
    /// long tail costs a retrained model: real but mild structure.
    pub bulk_sigma: f64,
    /// Pareto tail exponent for star quality; smaller is heavier.
    pub quality_tail: f64,
    /// Upper bound on a raw quality draw, keeping the hottest items short
    /// of engaged-by-everyone saturation.
    pub quality_cap: f64,
    pub seed: u64,
}

impl Default for SyntheticBiasConfig {
    fn default() -> Self {
        SyntheticBiasConfig {
            n_users: 2000,
            n_items: 4000,
            latent_dim: 8,
            positives_per_user: 16,
            affinity_gain: 1.0,
            quality_gain: 1.0,
            star_fraction: 0.02,
            bulk_sigma: 0.4,
            quality_tail: 1.1,
            quality_cap: 6.5,
            seed: 0,
        }
    }
}

impl SyntheticBiasConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(self.n_users >= 2, "n_users must be >= 2");
        p.require(self.n_items >= 2, "n_items must be >= 2");
        p.require(self.latent_dim >= 1, "latent_dim must be >= 1");
        p.require(
            self.positives_per_user >= 1 && self.positives_per_user <= self.n_items,
            "positives_per_user must be in 1..=n_items",
        );
        p.require(
            self.affinity_gain.is_finite() && self.quality_gain.is_finite(),
            "gains must be finite",
        );
        p.require(
            self.quality_tail.is_finite() && self.quality_tail > 0.0,
            "quality_tail must be finite and positive",
        );
        p.require(
            (0.0..=1.0).contains(&self.star_fraction),
            "star_fraction must be in [0, 1]",
        );
        p.require(
            self.bulk_sigma.is_finite() && self.bulk_sigma >= 0.0,
            "bulk_sigma must be finite and non-negative",
        );
        p.require(
            self.quality_cap.is_finite() && self.quality_cap >= 0.0,
            "quality_cap must be finite and non-negative",
        );
        p.into_result()
    }
}

/// Draws (user, item) engagements. Deterministic in the config.
pub fn synthetic_bias_records(config: &SyntheticBiasConfig) -> Result<Vec<(u64, u64)>> {
    use rand_distr::{Distribution, StandardNormal};
    config.validate()?;
    let d = config.latent_dim;
    let scale = 1.0 / (d as f64).sqrt();
    let normal = StandardNormal;
    let mut rng = seeding::rng_tagged(config.seed, "bias-world");
    let user_latent: Vec<f64> = (0..config.n_users * d)
        .map(|_| {
            let x: f64 = normal.sample(&mut rng);
            x * scale
        })
        .collect();
    let item_latent: Vec<f64> = (0..config.n_items * d)
        .map(|_| {
            let x: f64 = normal.sample(&mut rng);
            x * scale
        })
        .collect();
    let quality: Vec<f64> = (0..config.n_items)
        .map(|_| {
            let star = rng.random::<f64>() < config.star_fraction;
            let z: f64 = normal.sample(&mut rng);
            let u: f64 = rng.random();
            if !star {
                return z * config.bulk_sigma;
            }
            // Capped Pareto: (1-U)^(-1/alpha) - 1 has survival (1+q)^-alpha,
            // so exp(quality) keeps a heavy popularity tail at any depth.
            let q = (1.0 - u).max(f64::MIN_POSITIVE).powf(-1.0 / config.quality_tail) - 1.0;
            q.min(config.quality_cap) * config.quality_gain
        })
        .collect();

    let mut out = Vec::with_capacity(config.n_users * config.positives_per_user);
    for u in 0..config.n_users {
        // Gumbel-race top-k: adding Gumbel noise to log-weights and taking
        // the k largest keys samples k items without replacement in
        // proportion to exp(score).
        let mut rng = seeding::rng(seeding::derive_tagged(config.seed, "bias-gumbel"), u as u64);
        let uv = &user_latent[u * d..(u + 1) * d];
        let mut keyed: Vec<(f64, usize)> = (0..config.n_items)
            .map(|i| {
                let iv = &item_latent[i * d..(i + 1) * d];
                let affinity: f64 = uv.iter().zip(iv).map(|(a, b)| a * b).sum();
                let score = config.affinity_gain * affinity + quality[i];
                let gumbel = -(-rng.random::<f64>().max(f64::MIN_POSITIVE).ln()).ln();
                (score + gumbel, i)
            })
            .collect();
        let k = config.positives_per_user;
        keyed.select_nth_unstable_by(k - 1, |a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<u64> = keyed[..k].iter().map(|&(_, i)| i as u64).collect();
        chosen.sort_unstable();
        out.extend(chosen.into_iter().map(|i| (u as u64, i)));
    }
    Ok(out)
}
