//! Two-tower training drivers: sampler-driven training, training directly on
//! served records, and the reduced-rate fine-tuning protocol.
//!
//! Determinism contract: every run is a pure function of (bundle, config).
//! Per-epoch resampling, shuffling, and initialization all use streams
//! derived from the config seed, and the batch loop itself is sequential (the
//! parallelism lives inside the loss functions, which reduce in fixed chunk
//! order).

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{GroundTruthWorld, Interaction, Provenance};
use crate::error::{Error, Problems, Result};
use crate::eval::{grouped_roc_auc, knn_eval, roc_auc, GroupedAuc, KnnEvalConfig, ScoredExample};
use crate::model::{
    load_checkpoint, pointwise_loss_grad, triplet_loss_grad, AdamConfig, AdamState, ModelConfig,
    ModelGrads, PairBatch, PairExample, TowerParams, TripletBatch, TripletConfig, TripletExample,
};
use crate::pipelines::bundle::DataBundle;
use crate::pipelines::report::{ExperimentReport, ReportValue};
use crate::sampling::{
    in_batch_negatives, sample_frequency_negatives, sample_uniform_negatives,
    weight_triplets_by_popularity, PopularityWeightConfig, SamplerConfig, SamplerMode,
};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Pointwise,
    Triplet,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Pointwise => "pointwise",
            LossKind::Triplet => "triplet",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(LossKind::Pointwise),
            "triplet" => Ok(LossKind::Triplet),
            other => Err(Error::config(format!(
                "unknown loss {other:?} (expected pointwise or triplet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub sampler: SamplerConfig,
    pub popularity_weighting: Option<PopularityWeightConfig>,
    pub triplet: TripletConfig,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Pointwise,
            sampler: SamplerConfig::default(),
            popularity_weighting: None,
            triplet: TripletConfig::default(),
            hidden: vec![32],
            embedding_dim: 16,
            epochs: 4,
            batch_size: 256,
            learning_rate: 3e-3,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        self.triplet.validate()?;
        if let Some(w) = &self.popularity_weighting {
            w.validate()?;
        }
        let mut p = Problems::new();
        p.require(self.epochs >= 1, "epochs must be >= 1");
        p.require(self.batch_size >= 1, "batch_size must be >= 1");
        p.require(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be > 0",
        );
        p.require(self.embedding_dim >= 2, "embedding_dim must be >= 2");
        // The in-batch sampler emits ranking triples and nothing else, so the
        // two options select each other.
        let in_batch = self.sampler.mode == SamplerMode::InBatch;
        let triplet = self.loss == LossKind::Triplet;
        p.require(
            in_batch == triplet,
            "in_batch sampling and triplet loss must be used together",
        );
        p.require(
            self.popularity_weighting.is_none() || triplet,
            "popularity_weighting applies to triplet training only",
        );
        p.into_result()
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn model_config(&self, world: &GroundTruthWorld) -> ModelConfig {
        ModelConfig::symmetric(
            world.config.query_dim,
            world.config.candidate_dim,
            &self.hidden,
            self.embedding_dim,
        )
    }
}

// --- evaluation ------------------------------------------------------------

/// Global and per-query ranking quality over one labeled record set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordEval {
    pub auc: f64,
    pub grouped: GroupedAuc,
}

fn sorted_unique<I: Iterator<Item = u64>>(ids: I) -> Vec<u64> {
    let set: std::collections::BTreeSet<u64> = ids.collect();
    set.into_iter().collect()
}

/// Scores every record with the model and reports global plus grouped AUC.
pub fn evaluate_records(
    params: &TowerParams,
    world: &GroundTruthWorld,
    records: &[Interaction],
) -> Result<RecordEval> {
    if records.is_empty() {
        return Err(Error::EmptyInput("no records to evaluate".into()));
    }
    let qids = sorted_unique(records.iter().map(|r| r.query_id));
    let cids = sorted_unique(records.iter().map(|r| r.candidate_id));
    let q_embs = qids
        .par_iter()
        .map(|&q| params.embed_query(&world.query(q)?.features))
        .collect::<Result<Vec<_>>>()?;
    let c_embs = cids
        .par_iter()
        .map(|&c| params.embed_candidate(&world.candidate(c)?.features))
        .collect::<Result<Vec<_>>>()?;

    let mut groups: std::collections::BTreeMap<u64, Vec<ScoredExample>> =
        std::collections::BTreeMap::new();
    let mut all = Vec::with_capacity(records.len());
    for r in records {
        let qi = qids.binary_search(&r.query_id).expect("qid indexed");
        let ci = cids.binary_search(&r.candidate_id).expect("cid indexed");
        let ex = ScoredExample {
            score: params.score(&q_embs[qi], &c_embs[ci]),
            label: r.label,
        };
        all.push(ex);
        groups.entry(r.query_id).or_default().push(ex);
    }
    let grouped_vec: Vec<Vec<ScoredExample>> = groups.into_values().collect();
    Ok(RecordEval {
        auc: roc_auc(&all)?,
        grouped: grouped_roc_auc(&grouped_vec)?,
    })
}

/// The full post-training evaluation block shared by every driver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSuite {
    pub implicit_auc: f64,
    pub implicit_grouped: GroupedAuc,
    pub sampled_auc: f64,
    pub sampled_grouped: GroupedAuc,
    pub mismatch_rate: f64,
    pub popularity_pearson: Option<f64>,
}

fn knn_config(bundle: &DataBundle, seed: u64) -> KnnEvalConfig {
    KnnEvalConfig {
        n_queries: 1000.min(bundle.test_queries.len()),
        n_candidates: 10_000.min(bundle.world.n_items()),
        top_mismatch: 1,
        top_pearson: 5,
        seed: seeding::derive_tagged(seed, "knn-eval"),
    }
}

pub fn evaluate_suite(
    params: &TowerParams,
    bundle: &DataBundle,
    seed: u64,
) -> Result<EvalSuite> {
    let implicit = evaluate_records(params, &bundle.world, &bundle.test_records)?;
    let sampled = evaluate_records(params, &bundle.world, &bundle.sampled_test)?;
    let knn = knn_eval(
        params,
        &bundle.test_queries,
        &bundle.world.candidates,
        &knn_config(bundle, seed),
    )?;
    Ok(EvalSuite {
        implicit_auc: implicit.auc,
        implicit_grouped: implicit.grouped,
        sampled_auc: sampled.auc,
        sampled_grouped: sampled.grouped,
        mismatch_rate: knn.mismatch_rate,
        popularity_pearson: knn.popularity_pearson,
    })
}

fn suite_metrics(report: &mut ExperimentReport, eval: &EvalSuite) -> Result<()> {
    report.set_metric("implicit_auc", ReportValue::f64(eval.implicit_auc)?);
    report.set_metric(
        "implicit_grouped_auc",
        ReportValue::f64(eval.implicit_grouped.mean)?,
    );
    report.set_metric("sampled_auc", ReportValue::f64(eval.sampled_auc)?);
    report.set_metric(
        "sampled_grouped_auc",
        ReportValue::f64(eval.sampled_grouped.mean)?,
    );
    report.set_metric("language_mismatch", ReportValue::f64(eval.mismatch_rate)?);
    let pearson = match eval.popularity_pearson {
        Some(r) => ReportValue::f64(r)?,
        None => ReportValue::na(),
    };
    report.set_metric("popularity_pearson", pearson);
    Ok(())
}

// --- batch assembly ---------------------------------------------------------

/// One flattened pointwise example; features are looked up when batched.
#[derive(Debug, Clone, Copy)]
struct PairRecord {
    query_id: u64,
    candidate_id: u64,
    target: f64,
    weight: f64,
}

impl PairRecord {
    fn from_interaction(r: &Interaction) -> Self {
        PairRecord {
            query_id: r.query_id,
            candidate_id: r.candidate_id,
            target: if r.label { 1.0 } else { 0.0 },
            weight: r.weight,
        }
    }
}

fn pair_batch<'w>(world: &'w GroundTruthWorld, chunk: &[PairRecord]) -> Result<PairBatch<'w>> {
    let qids = sorted_unique(chunk.iter().map(|r| r.query_id));
    let cids = sorted_unique(chunk.iter().map(|r| r.candidate_id));
    let query_features = qids
        .iter()
        .map(|&q| Ok(world.query(q)?.features.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let candidate_features = cids
        .iter()
        .map(|&c| Ok(world.candidate(c)?.features.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let pairs = chunk
        .iter()
        .map(|r| PairExample {
            query: qids.binary_search(&r.query_id).expect("qid indexed"),
            candidate: cids.binary_search(&r.candidate_id).expect("cid indexed"),
            target: r.target,
            weight: r.weight,
        })
        .collect();
    Ok(PairBatch {
        query_features,
        candidate_features,
        pairs,
    })
}

fn triplet_batch<'w>(
    world: &'w GroundTruthWorld,
    triplets: &[crate::sampling::Triplet],
) -> Result<TripletBatch<'w>> {
    let qids = sorted_unique(triplets.iter().map(|t| t.query_id));
    let cids = sorted_unique(
        triplets
            .iter()
            .flat_map(|t| [t.positive_id, t.negative_id]),
    );
    let query_features = qids
        .iter()
        .map(|&q| Ok(world.query(q)?.features.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let candidate_features = cids
        .iter()
        .map(|&c| Ok(world.candidate(c)?.features.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let examples = triplets
        .iter()
        .map(|t| TripletExample {
            query: qids.binary_search(&t.query_id).expect("qid indexed"),
            positive: cids.binary_search(&t.positive_id).expect("pos indexed"),
            negative: cids.binary_search(&t.negative_id).expect("neg indexed"),
            weight: t.weight,
        })
        .collect();
    Ok(TripletBatch {
        query_features,
        candidate_features,
        triplets: examples,
    })
}

// --- optimization loop -------------------------------------------------------

struct Stepper {
    opt: AdamState,
    lr: f64,
    frozen: Vec<usize>,
    step: usize,
}

impl Stepper {
    fn new(adam: AdamConfig, params: &TowerParams, lr: f64, frozen: Vec<usize>) -> Result<Self> {
        Ok(Stepper {
            opt: AdamState::for_model(adam, params)?,
            lr,
            frozen,
            step: 0,
        })
    }

    fn apply(&mut self, params: &mut TowerParams, mut grads: ModelGrads) -> Result<()> {
        for &i in &self.frozen {
            grads.tensors_mut()[i].fill(0.0);
        }
        self.opt.step_model(params, &grads, self.lr)?;
        self.step += 1;
        Ok(())
    }

    fn divergence(&self, e: Error) -> Error {
        match e {
            Error::NonFinite(_) => Error::Divergence { step: self.step },
            other => other,
        }
    }
}

fn run_pointwise_epochs(
    params: &mut TowerParams,
    world: &GroundTruthWorld,
    stepper: &mut Stepper,
    make_examples: impl Fn(usize) -> Result<Vec<PairRecord>>,
    epochs: usize,
    batch_size: usize,
    shuffle_seed: u64,
) -> Result<f64> {
    let mut final_loss = f64::NAN;
    for epoch in 0..epochs {
        let mut examples = make_examples(epoch)?;
        if examples.is_empty() {
            return Err(Error::EmptyInput(format!("epoch {epoch} has no examples")));
        }
        let mut rng = seeding::rng(shuffle_seed, epoch as u64);
        examples.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for chunk in examples.chunks(batch_size) {
            let batch = pair_batch(world, chunk)?;
            let (loss, grads) =
                pointwise_loss_grad(params, &batch).map_err(|e| stepper.divergence(e))?;
            stepper.apply(params, grads)?;
            loss_sum += loss * chunk.len() as f64;
            n += chunk.len();
        }
        final_loss = loss_sum / n as f64;
    }
    Ok(final_loss)
}

fn run_in_batch_triplet_epochs(
    params: &mut TowerParams,
    world: &GroundTruthWorld,
    stepper: &mut Stepper,
    positives: &[Interaction],
    config: &TrainConfig,
) -> Result<f64> {
    let sampling_root = seeding::derive(config.seed, config.sampler.seed);
    let shuffle_seed = seeding::derive_tagged(config.seed, "shuffle");
    let mut pairs: Vec<(u64, u64)> = positives
        .iter()
        .map(|p| (p.query_id, p.candidate_id))
        .collect();
    let mut final_loss = f64::NAN;
    for epoch in 0..config.epochs {
        let mut rng = seeding::rng(shuffle_seed, epoch as u64);
        pairs.shuffle(&mut rng);
        let epoch_seed = seeding::derive(sampling_root, epoch as u64);
        let mut loss_sum = 0.0;
        let mut n = 0usize;
        for (chunk_idx, chunk) in pairs.chunks(config.batch_size).enumerate() {
            let mut triplets = in_batch_negatives(
                chunk,
                Some(config.sampler.negatives_per_positive),
                seeding::derive(epoch_seed, chunk_idx as u64),
            )?;
            if triplets.is_empty() {
                continue;
            }
            if let Some(w) = &config.popularity_weighting {
                weight_triplets_by_popularity(&mut triplets, w, |cid| {
                    Ok(world.candidate(cid)?.popularity)
                })?;
            }
            let batch = triplet_batch(world, &triplets)?;
            let (loss, grads) = triplet_loss_grad(params, &batch, &config.triplet)
                .map_err(|e| stepper.divergence(e))?;
            stepper.apply(params, grads)?;
            loss_sum += loss * triplets.len() as f64;
            n += triplets.len();
        }
        if n == 0 {
            return Err(Error::EmptyInput(format!(
                "epoch {epoch} produced no in-batch triplets; batches too small?"
            )));
        }
        final_loss = loss_sum / n as f64;
    }
    Ok(final_loss)
}

// --- drivers -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: TowerParams,
    pub final_loss: f64,
    pub eval: EvalSuite,
    pub report: ExperimentReport,
}

fn train_report(
    name: &str,
    config: &TrainConfig,
    final_loss: f64,
    eval: &EvalSuite,
    n_train: usize,
) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(name, config.seed, config.echo());
    report.set_metric("final_train_loss", ReportValue::f64(final_loss)?);
    report.set_metric("n_train_examples", n_train.into());
    suite_metrics(&mut report, eval)?;
    Ok(report)
}

/// Trains a fresh two-tower model on the bundle's explicit positives plus
/// sampler-generated negatives (resampled every epoch from derived seeds).
pub fn train(bundle: &DataBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if bundle.train_positives.is_empty() {
        return Err(Error::EmptyInput("bundle has no training positives".into()));
    }
    let world = &bundle.world;
    let mut params = TowerParams::init(
        &config.model_config(world),
        seeding::derive_tagged(config.seed, "model-init"),
    )?;
    let mut stepper = Stepper::new(config.adam, &params, config.learning_rate, Vec::new())?;

    let n_train;
    let final_loss = match config.loss {
        LossKind::Triplet => {
            n_train = bundle.train_positives.len();
            run_in_batch_triplet_epochs(
                &mut params,
                world,
                &mut stepper,
                &bundle.train_positives,
                config,
            )?
        }
        LossKind::Pointwise => {
            let sampling_root = seeding::derive(config.seed, config.sampler.seed);
            let candidate_ids = bundle.candidate_ids();
            n_train =
                bundle.train_positives.len() * (1 + config.sampler.negatives_per_positive);
            let make = |epoch: usize| -> Result<Vec<PairRecord>> {
                let sampler = SamplerConfig {
                    seed: seeding::derive(sampling_root, epoch as u64),
                    ..config.sampler.clone()
                };
                let drawn = match config.sampler.mode {
                    SamplerMode::Uniform => {
                        sample_uniform_negatives(&bundle.train_positives, &candidate_ids, &sampler)?
                    }
                    SamplerMode::Frequency => {
                        sample_frequency_negatives(&bundle.train_positives, &bundle.served, &sampler)?
                    }
                    SamplerMode::InBatch => unreachable!("validated against pointwise"),
                };
                let mut out: Vec<PairRecord> = bundle
                    .train_positives
                    .iter()
                    .map(PairRecord::from_interaction)
                    .collect();
                out.extend(drawn.negatives.iter().map(PairRecord::from_interaction));
                Ok(out)
            };
            run_pointwise_epochs(
                &mut params,
                world,
                &mut stepper,
                make,
                config.epochs,
                config.batch_size,
                seeding::derive_tagged(config.seed, "shuffle"),
            )?
        }
    };

    let eval = evaluate_suite(&params, bundle, config.seed)?;
    let mut report = train_report("train", config, final_loss, &eval, n_train)?;
    report.set_metric("sampler", config.sampler.mode.to_string().as_str().into());
    Ok(TrainOutcome {
        params,
        final_loss,
        eval,
        report,
    })
}

/// Trains pointwise on the served records exactly as logged (explicit
/// positives and implicit negatives); no negative sampling is involved.
pub fn train_on_implicit(bundle: &DataBundle, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if config.loss != LossKind::Pointwise {
        return Err(Error::config(
            "served-record training is pointwise; triplet loss needs a sampler",
        ));
    }
    let world = &bundle.world;
    let mut params = TowerParams::init(
        &config.model_config(world),
        seeding::derive_tagged(config.seed, "model-init"),
    )?;
    let mut stepper = Stepper::new(config.adam, &params, config.learning_rate, Vec::new())?;
    let examples: Vec<PairRecord> = bundle
        .train_records
        .iter()
        .map(PairRecord::from_interaction)
        .collect();
    let final_loss = run_pointwise_epochs(
        &mut params,
        world,
        &mut stepper,
        |_| Ok(examples.clone()),
        config.epochs,
        config.batch_size,
        seeding::derive_tagged(config.seed, "shuffle"),
    )?;
    let eval = evaluate_suite(&params, bundle, config.seed)?;
    let mut report = train_report("train-implicit", config, final_loss, &eval, examples.len())?;
    report.set_metric("sampler", "served".into());
    Ok(TrainOutcome {
        params,
        final_loss,
        eval,
        report,
    })
}

// --- fine-tuning ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneOptions {
    /// Multiplier on `learning_rate`; the protocol default is one tenth.
    pub lr_scale: f64,
    pub epochs: usize,
    /// Tensor groups to keep fixed: `query.N`, `candidate.N`, `calibration`,
    /// or `all`.
    pub frozen_layers: Vec<String>,
    /// The base model's rate, before scaling.
    pub learning_rate: f64,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FineTuneOptions {
    fn default() -> Self {
        FineTuneOptions {
            lr_scale: 0.1,
            epochs: 1,
            frozen_layers: Vec::new(),
            learning_rate: 3e-3,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl FineTuneOptions {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(
            self.lr_scale > 0.0 && self.lr_scale <= 1.0,
            format!("lr_scale must lie in (0, 1], got {}", self.lr_scale),
        );
        p.require(self.epochs >= 1, "epochs must be >= 1");
        p.require(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be > 0",
        );
        p.require(self.batch_size >= 1, "batch_size must be >= 1");
        p.into_result()
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    pub base_checkpoint: PathBuf,
    pub options: FineTuneOptions,
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub params: TowerParams,
    pub final_loss: f64,
    pub before: RecordEval,
    pub after: RecordEval,
    pub report: ExperimentReport,
}

fn tensor_digest(tensor: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in tensor {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Maps frozen-layer names onto canonical tensor indices (weights and bias of
/// a layer travel together).
fn frozen_tensor_indices(params: &TowerParams, names: &[String]) -> Result<Vec<usize>> {
    let nq = params.config.query.hidden.len() + 1;
    let nc = params.config.candidate.hidden.len() + 1;
    let total = 2 * nq + 2 * nc + 2;
    let mut indices = std::collections::BTreeSet::new();
    for name in names {
        if name == "all" {
            indices.extend(0..total);
            continue;
        }
        if name == "calibration" {
            indices.insert(total - 2);
            indices.insert(total - 1);
            continue;
        }
        let parse_layer = |prefix: &str, count: usize, offset: usize| -> Option<Vec<usize>> {
            let rest = name.strip_prefix(prefix)?;
            let layer: usize = rest.parse().ok()?;
            (layer < count).then(|| vec![offset + 2 * layer, offset + 2 * layer + 1])
        };
        if let Some(ix) = parse_layer("query.", nq, 0) {
            indices.extend(ix);
        } else if let Some(ix) = parse_layer("candidate.", nc, 2 * nq) {
            indices.extend(ix);
        } else {
            return Err(Error::config(format!(
                "unknown frozen layer {name:?}: expected query.0..{}, candidate.0..{}, \
                 calibration, or all",
                nq - 1,
                nc - 1
            )));
        }
    }
    Ok(indices.into_iter().collect())
}

/// Continues pointwise training of `base` on served records at a reduced
/// rate. Rejects sampled-negative rows: the protocol exists precisely to
/// expose the model to served feedback it has never seen, and mixing
/// synthetic negatives back in would dilute that.
pub fn fine_tune_params(
    base: &TowerParams,
    world: &GroundTruthWorld,
    train_records: &[Interaction],
    test_records: &[Interaction],
    options: &FineTuneOptions,
) -> Result<FineTuneOutcome> {
    options.validate()?;
    if train_records.is_empty() {
        return Err(Error::EmptyInput("fine-tuning data is empty".into()));
    }
    if let Some(bad) = train_records
        .iter()
        .position(|r| r.provenance == Provenance::SampledNegative)
    {
        return Err(Error::Provenance(format!(
            "fine-tuning data must come from served traffic; record {bad} is sampled_negative"
        )));
    }

    let before = evaluate_records(base, world, test_records)?;
    let mut params = base.clone();
    let frozen = frozen_tensor_indices(&params, &options.frozen_layers)?;
    let digests_before: Vec<String> = {
        let tensors = params.tensors();
        frozen.iter().map(|&i| tensor_digest(tensors[i])).collect()
    };

    let mut stepper = Stepper::new(
        options.adam,
        &params,
        options.learning_rate * options.lr_scale,
        frozen.clone(),
    )?;
    let examples: Vec<PairRecord> = train_records
        .iter()
        .map(PairRecord::from_interaction)
        .collect();
    let final_loss = run_pointwise_epochs(
        &mut params,
        world,
        &mut stepper,
        |_| Ok(examples.clone()),
        options.epochs,
        options.batch_size,
        seeding::derive_tagged(options.seed, "finetune-shuffle"),
    )?;

    {
        let tensors = params.tensors();
        for (pos, &i) in frozen.iter().enumerate() {
            assert_eq!(
                digests_before[pos],
                tensor_digest(tensors[i]),
                "frozen tensor {i} drifted during fine-tuning"
            );
        }
    }

    let after = evaluate_records(&params, world, test_records)?;
    let mut report = ExperimentReport::new("fine-tune", options.seed, options.echo());
    report.set_metric("final_train_loss", ReportValue::f64(final_loss)?);
    report.set_metric("lr_scale", ReportValue::f64(options.lr_scale)?);
    report.set_metric("epochs", options.epochs.into());
    report.set_metric(
        "frozen_layers",
        options.frozen_layers.join(",").as_str().into(),
    );
    report.set_metric("frozen_unchanged", true.into());
    report.set_metric("before_auc", ReportValue::f64(before.auc)?);
    report.set_metric("after_auc", ReportValue::f64(after.auc)?);
    report.set_metric("before_grouped_auc", ReportValue::f64(before.grouped.mean)?);
    report.set_metric("after_grouped_auc", ReportValue::f64(after.grouped.mean)?);
    report.set_metric(
        "delta_auc",
        ReportValue::f64(after.auc - before.auc)?,
    );
    report.set_metric(
        "delta_grouped_auc",
        ReportValue::f64(after.grouped.mean - before.grouped.mean)?,
    );
    Ok(FineTuneOutcome {
        params,
        final_loss,
        before,
        after,
        report,
    })
}

/// File-based entry point: loads the base model from `config.base_checkpoint`
/// and delegates to [`fine_tune_params`].
pub fn fine_tune(
    world: &GroundTruthWorld,
    train_records: &[Interaction],
    test_records: &[Interaction],
    config: &FineTuneConfig,
) -> Result<FineTuneOutcome> {
    let base = load_checkpoint(&config.base_checkpoint)?;
    fine_tune_params(&base, world, train_records, test_records, &config.options)
}
