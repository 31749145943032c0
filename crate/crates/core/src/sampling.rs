//! Negative sampling strategies for training on logged positives.
//!
//! Three ways to manufacture the negatives that implicit feedback never
//! provides:
//!
//! * **uniform** — pair each positive with candidates drawn uniformly from
//!   the whole corpus; cheap, but mostly produces easy negatives.
//! * **frequency** — draw candidates proportionally to how often the logging
//!   policy served them, so popular items are contrasted more often.
//! * **in-batch** — reuse the other positives inside a minibatch as
//!   negatives, the scheme that ties negative exposure to popularity most
//!   tightly.
//!
//! In-batch reuse systematically over-penalizes popular items, so it is
//! paired with a corrective weight `w = 0.5 + 0.5 * exp(-theta / t)` that
//! discounts a negative by the popularity `theta` of its candidate; the
//! temperature `t` sets how fast the discount bottoms out at 1/2.

use std::collections::HashSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Interaction, ServedLog};
use crate::error::{Error, Problems, Result};
use crate::seeding;

/// How negatives are manufactured for pointwise or triplet training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    Uniform,
    Frequency,
    InBatch,
}

impl std::fmt::Display for SamplerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SamplerMode::Uniform => "uniform",
            SamplerMode::Frequency => "frequency",
            SamplerMode::InBatch => "in_batch",
        })
    }
}

impl std::str::FromStr for SamplerMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(SamplerMode::Uniform),
            "frequency" => Ok(SamplerMode::Frequency),
            "in_batch" | "in-batch" => Ok(SamplerMode::InBatch),
            other => Err(Error::config(format!(
                "unknown sampler mode '{other}' (expected uniform, frequency, or in_batch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub mode: SamplerMode,
    /// Negatives drawn per positive (uniform/frequency), or the per-positive
    /// cap on in-batch reuse.
    pub negatives_per_positive: usize,
    /// Drop a drawn negative if that (query, candidate) pair is a known
    /// positive.
    pub filter_known_positives: bool,
    /// Add-one style smoothing mass given to never-served candidates in
    /// frequency mode.
    pub frequency_smoothing: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            mode: SamplerMode::Uniform,
            negatives_per_positive: 4,
            filter_known_positives: true,
            frequency_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(
            self.negatives_per_positive >= 1,
            "negatives_per_positive must be >= 1",
        );
        p.require(
            self.frequency_smoothing >= 0.0 && self.frequency_smoothing.is_finite(),
            "frequency_smoothing must be >= 0",
        );
        p.into_result()
    }
}

/// Popularity discount for in-batch negatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopularityWeightConfig {
    /// Temperature; larger values discount popular items less.
    pub t: f64,
}

impl PopularityWeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t > 0.0 && self.t.is_finite() {
            Ok(())
        } else {
            Err(Error::config("popularity weight temperature must be > 0"))
        }
    }
}

/// `w(theta) = 0.5 + 0.5 * exp(-theta / t)`.
///
/// Equals 1 at zero popularity, decreases strictly, and never drops below
/// 1/2, so even the most popular candidate keeps half its gradient.
pub fn popularity_weight(theta: f64, config: &PopularityWeightConfig) -> Result<f64> {
    config.validate()?;
    if !(theta >= 0.0) {
        return Err(Error::config(format!(
            "popularity must be >= 0, got {theta}"
        )));
    }
    Ok(0.5 + 0.5 * (-theta / config.t).exp())
}

/// Negatives produced by a corpus sampler, plus how many draws were abandoned
/// after exhausting their retry budget.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSample {
    pub negatives: Vec<Interaction>,
    pub skipped: usize,
}

// A draw colliding with a known positive is retried at most this many times.
const MAX_RETRIES: usize = 100;

fn known_pairs(positives: &[Interaction]) -> HashSet<(u64, u64)> {
    positives
        .iter()
        .map(|p| (p.query_id, p.candidate_id))
        .collect()
}

fn validate_positives(positives: &[Interaction]) -> Result<()> {
    if positives.is_empty() {
        return Err(Error::EmptyInput("no positives to sample against".into()));
    }
    for p in positives {
        if !p.label {
            return Err(Error::Provenance(format!(
                "negative sampling expects positives; got a negative for query {}",
                p.query_id
            )));
        }
    }
    Ok(())
}

fn sample_against<D>(
    positives: &[Interaction],
    pool: &[u64],
    config: &SamplerConfig,
    stream_tag: &str,
    dist: D,
) -> Result<NegativeSample>
where
    D: Distribution<usize>,
{
    validate_positives(positives)?;
    let known = known_pairs(positives);
    let mut rng = seeding::rng_tagged(config.seed, stream_tag);
    let mut negatives = Vec::with_capacity(positives.len() * config.negatives_per_positive);
    let mut skipped = 0usize;
    for pos in positives {
        for _ in 0..config.negatives_per_positive {
            let mut found = None;
            for _ in 0..MAX_RETRIES {
                let candidate = pool[dist.sample(&mut rng)];
                let collides = candidate == pos.candidate_id
                    || (config.filter_known_positives
                        && known.contains(&(pos.query_id, candidate)));
                if !collides {
                    found = Some(candidate);
                    break;
                }
            }
            match found {
                Some(candidate) => {
                    negatives.push(Interaction::sampled_negative(pos.query_id, candidate, 1.0)?)
                }
                None => skipped += 1,
            }
        }
    }
    if skipped > 0 {
        log::warn!("abandoned {skipped} negative draws after {MAX_RETRIES} retries each");
    }
    Ok(NegativeSample { negatives, skipped })
}

/// Pairs each positive with negatives drawn uniformly from `candidate_ids`.
pub fn sample_uniform_negatives(
    positives: &[Interaction],
    candidate_ids: &[u64],
    config: &SamplerConfig,
) -> Result<NegativeSample> {
    config.validate()?;
    if candidate_ids.is_empty() {
        return Err(Error::EmptyInput("uniform sampling needs a candidate pool".into()));
    }
    let dist = rand::distr::Uniform::new(0, candidate_ids.len())
        .map_err(|e| Error::config(e.to_string()))?;
    sample_against(positives, candidate_ids, config, "uniform-negatives", dist)
}

/// Pairs each positive with negatives drawn proportionally to how often each
/// candidate was served in `log` (plus `frequency_smoothing` everywhere).
///
/// With zero smoothing, never-served candidates are never drawn.
pub fn sample_frequency_negatives(
    positives: &[Interaction],
    log: &ServedLog,
    config: &SamplerConfig,
) -> Result<NegativeSample> {
    config.validate()?;
    let counts = log.serve_counts();
    if counts.is_empty() {
        return Err(Error::EmptyInput(
            "frequency sampling needs a non-empty served log".into(),
        ));
    }
    // BTreeMap iteration is sorted by candidate id, so the weight order (and
    // therefore every draw) is reproducible.
    let pool: Vec<u64> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts
        .values()
        .map(|&c| c as f64 + config.frequency_smoothing)
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| Error::config(e.to_string()))?;
    sample_against(positives, &pool, config, "frequency-negatives", dist)
}

/// One ranking triple produced by in-batch reuse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triplet {
    pub query_id: u64,
    pub positive_id: u64,
    pub negative_id: u64,
    /// Training weight, already in `(0, 1]`.
    pub weight: f64,
}

/// Reuses the other positives of a minibatch as negatives for each anchor.
///
/// `cap = None` emits the full cross product (every other distinct candidate
/// in the batch); `cap = Some(n)` draws at most `n` of them without
/// replacement. Pairs that are themselves positives in the batch are never
/// emitted. A single-positive batch yields nothing.
pub fn in_batch_negatives(
    batch: &[(u64, u64)],
    cap: Option<usize>,
    seed: u64,
) -> Result<Vec<Triplet>> {
    if let Some(0) = cap {
        return Err(Error::config("in-batch cap must be >= 1"));
    }
    if batch.len() <= 1 {
        log::warn!(
            "in-batch sampling over {} positive(s) yields no negatives",
            batch.len()
        );
        return Ok(Vec::new());
    }
    let known: HashSet<(u64, u64)> = batch.iter().copied().collect();
    let mut out = Vec::new();
    let mut scratch: Vec<u64> = Vec::with_capacity(batch.len() - 1);
    for (i, &(query, positive)) in batch.iter().enumerate() {
        scratch.clear();
        for (j, &(_, other)) in batch.iter().enumerate() {
            if j == i || other == positive || known.contains(&(query, other)) {
                continue;
            }
            scratch.push(other);
        }
        // Duplicates of one candidate elsewhere in the batch would otherwise
        // multiply its pushes; keep one occurrence of each.
        scratch.sort_unstable();
        scratch.dedup();
        let take = cap.unwrap_or(scratch.len()).min(scratch.len());
        if take < scratch.len() {
            let mut rng = seeding::rng(seeding::derive_tagged(seed, "in-batch"), i as u64);
            // Partial Fisher-Yates: the first `take` slots end up a uniform
            // sample without replacement.
            for k in 0..take {
                let j = rng.random_range(k..scratch.len());
                scratch.swap(k, j);
            }
            scratch.truncate(take);
            scratch.sort_unstable();
        }
        for &negative in &scratch {
            out.push(Triplet {
                query_id: query,
                positive_id: positive,
                negative_id: negative,
                weight: 1.0,
            });
        }
    }
    Ok(out)
}

/// Applies the popularity discount to a set of in-batch triplets, looking up
/// each negative's popularity via `popularity_of`.
pub fn weight_triplets_by_popularity(
    triplets: &mut [Triplet],
    config: &PopularityWeightConfig,
    mut popularity_of: impl FnMut(u64) -> Result<f64>,
) -> Result<()> {
    config.validate()?;
    for t in triplets.iter_mut() {
        t.weight = popularity_weight(popularity_of(t.negative_id)?, config)?;
    }
    Ok(())
}
