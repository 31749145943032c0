//! Synthetic ground-truth world.
//!
//! The generator produces a population of users and items with known
//! engagement probabilities, so that serving policies, training pipelines, and
//! metrics can all be checked against an oracle. Each user and item carries:
//!
//! * a language in `0..n_languages`,
//! * a unit-norm latent interest vector in `R^latent_dim`, whose leading
//!   `coarse_dims` coordinates are the "broad" interests visible to the
//!   serving policy and whose remaining coordinates only influence engagement,
//! * for items, a base appeal drawn from a bounded power law (heavy-tailed:
//!   a small share of items holds most of the appeal mass).
//!
//! Engagement probability for user u and item i is
//!
//! ```text
//! p(u, i) = match(u, i) * sigmoid(a_c * <u_c, v_c> + a_f * <u_f, v_f>
//!                                 + b + gamma * ln(1 + appeal_i))
//! ```
//!
//! where `match` is 1 when the pair is compatible and `EPS_IRRELEVANT` when it
//! is not, so that incompatible pairs are effectively never engaged while
//! Bernoulli sampling stays well-defined. Compatibility means equal language;
//! single-language worlds fall back to a latent binary attribute so the
//! "extremely irrelevant" band stays populated there too.
//!
//! Observable features expose the latents with a fixed layout:
//!
//! * query features: `[language one-hot | user latent | context noise]`
//! * candidate features: `[language one-hot | item latent | scaled ln-appeal | noise]`

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::types::{Candidate, Query};
use crate::error::{Error, Problems, Result};
use crate::seeding;
use crate::vecmath::{dot, normalize_in_place, sigmoid};

/// Engagement ceiling for incompatible (language / attribute mismatch) pairs.
pub const EPS_IRRELEVANT: f64 = 0.001;

/// Engagement floor for the "relevant and engaging" band.
pub const ENGAGING_P: f64 = 0.3;

/// Relevance band of a (query, candidate) pair, by engagement probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `p <= EPS_IRRELEVANT`: would never be engaged (e.g. wrong language).
    ExtremelyIrrelevant,
    /// `EPS_IRRELEVANT < p < ENGAGING_P`: plausible but rarely engaged.
    RelevantNotEngaging,
    /// `p >= ENGAGING_P`: both relevant and likely to be engaged.
    RelevantEngaging,
}

pub fn classify_engagement(p: f64) -> Region {
    if p <= EPS_IRRELEVANT {
        Region::ExtremelyIrrelevant
    } else if p < ENGAGING_P {
        Region::RelevantNotEngaging
    } else {
        Region::RelevantEngaging
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_languages: usize,
    /// Dimension of the latent interest vectors (`k`).
    pub latent_dim: usize,
    /// Leading latent coordinates visible to the serving policy.
    pub coarse_dims: usize,
    /// Query feature dimension; must fit the one-hot + latent layout.
    pub query_dim: usize,
    /// Candidate feature dimension; must fit one-hot + latent + appeal.
    pub candidate_dim: usize,
    /// Gain on the coarse latent dot product in the engagement logit.
    pub engage_coarse_gain: f64,
    /// Gain on the fine latent dot product in the engagement logit.
    pub engage_fine_gain: f64,
    /// Additive bias in the engagement logit.
    pub engage_bias: f64,
    /// Gain on `ln(1 + appeal)` in the engagement logit.
    pub appeal_gain: f64,
    /// Tail exponent of the bounded power-law appeal distribution.
    pub appeal_exponent: f64,
    /// Upper bound of the appeal distribution (lower bound is 1).
    pub appeal_max: f64,
    /// Standard deviation of the padding noise in feature vectors.
    pub feature_noise: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 7,
            n_users: 1000,
            n_items: 5000,
            n_languages: 5,
            latent_dim: 8,
            coarse_dims: 4,
            query_dim: 16,
            candidate_dim: 16,
            engage_coarse_gain: 6.0,
            engage_fine_gain: 6.0,
            engage_bias: -2.5,
            appeal_gain: 0.4,
            appeal_exponent: 0.5,
            appeal_max: 1e4,
            feature_noise: 0.25,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(self.n_users >= 1, "n_users must be >= 1");
        p.require(self.n_items >= 1, "n_items must be >= 1");
        p.require(
            self.n_languages >= 1 && self.n_languages <= usize::from(u16::MAX),
            "n_languages must lie in [1, 65535]",
        );
        p.require(self.latent_dim >= 1, "latent_dim must be >= 1");
        p.require(
            self.coarse_dims <= self.latent_dim,
            "coarse_dims must be <= latent_dim",
        );
        p.require(
            self.latent_dim <= self.query_dim.min(self.candidate_dim),
            "latent_dim must be <= min(query_dim, candidate_dim)",
        );
        p.require(
            self.query_dim >= self.n_languages + self.latent_dim,
            "query_dim too small for language one-hot plus latent block",
        );
        p.require(
            self.candidate_dim >= self.n_languages + self.latent_dim + 1,
            "candidate_dim too small for language one-hot, latent block, and appeal",
        );
        p.require(
            self.appeal_exponent > 0.0 && self.appeal_exponent.is_finite(),
            "appeal_exponent must be > 0",
        );
        p.require(self.appeal_max > 1.0, "appeal_max must be > 1");
        p.require(self.feature_noise >= 0.0, "feature_noise must be >= 0");
        for (name, v) in [
            ("engage_coarse_gain", self.engage_coarse_gain),
            ("engage_fine_gain", self.engage_fine_gain),
            ("engage_bias", self.engage_bias),
            ("appeal_gain", self.appeal_gain),
        ] {
            p.require(v.is_finite(), format!("{name} must be finite"));
        }
        p.into_result()
    }

    /// Number of latent classes of the hard-mismatch attribute. Multi-language
    /// worlds use language itself, single-language worlds a binary attribute.
    fn hard_classes(&self) -> u8 {
        if self.n_languages >= 2 {
            1
        } else {
            2
        }
    }
}

/// A fully materialized world: observable queries/candidates plus the hidden
/// state needed to compute true engagement probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthWorld {
    pub config: WorldConfig,
    pub user_language: Vec<u16>,
    pub item_language: Vec<u16>,
    user_hard: Vec<u8>,
    item_hard: Vec<u8>,
    /// Row-major `n_users x latent_dim`.
    user_latent: Vec<f64>,
    /// Row-major `n_items x latent_dim`.
    item_latent: Vec<f64>,
    pub item_appeal: Vec<f64>,
    /// One query per user; `queries[i].query_id == i as u64`.
    pub queries: Vec<Query>,
    /// `candidates[j].candidate_id == j as u64`.
    pub candidates: Vec<Candidate>,
}

/// Builds a world from the config. The same config (including seed) always
/// produces a bit-identical world.
pub fn generate_world(config: &WorldConfig) -> Result<GroundTruthWorld> {
    config.validate()?;
    let n_users = config.n_users;
    let n_items = config.n_items;
    let k = config.latent_dim;
    let langs = config.n_languages as u16;
    let hard_classes = config.hard_classes();

    // Independent sub-streams per component: resizing one population never
    // shifts the draws of another.
    let mut rng_user_lang = seeding::rng_tagged(config.seed, "user-language");
    let mut rng_item_lang = seeding::rng_tagged(config.seed, "item-language");
    let mut rng_user_hard = seeding::rng_tagged(config.seed, "user-hard");
    let mut rng_item_hard = seeding::rng_tagged(config.seed, "item-hard");
    let mut rng_user_latent = seeding::rng_tagged(config.seed, "user-latent");
    let mut rng_item_latent = seeding::rng_tagged(config.seed, "item-latent");
    let mut rng_appeal = seeding::rng_tagged(config.seed, "appeal");
    let mut rng_user_noise = seeding::rng_tagged(config.seed, "user-noise");
    let mut rng_item_noise = seeding::rng_tagged(config.seed, "item-noise");

    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let user_language: Vec<u16> = (0..n_users)
        .map(|_| rng_user_lang.random_range(0..langs))
        .collect();
    let item_language: Vec<u16> = (0..n_items)
        .map(|_| rng_item_lang.random_range(0..langs))
        .collect();
    let user_hard: Vec<u8> = (0..n_users)
        .map(|_| rng_user_hard.random_range(0..hard_classes))
        .collect();
    let item_hard: Vec<u8> = (0..n_items)
        .map(|_| rng_item_hard.random_range(0..hard_classes))
        .collect();

    let draw_unit_latents = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        let mut flat = vec![0.0; n * k];
        for row in flat.chunks_mut(k) {
            for x in row.iter_mut() {
                *x = std_normal.sample(rng);
            }
            normalize_in_place(row);
        }
        flat
    };
    let user_latent = draw_unit_latents(n_users, &mut rng_user_latent);
    let item_latent = draw_unit_latents(n_items, &mut rng_item_latent);

    // Bounded power law on [1, appeal_max] by inverse-CDF sampling.
    let alpha = config.appeal_exponent;
    let tail = 1.0 - config.appeal_max.powf(-alpha);
    let item_appeal: Vec<f64> = (0..n_items)
        .map(|_| {
            let u: f64 = rng_appeal.random();
            (1.0 - u * tail).powf(-1.0 / alpha)
        })
        .collect();

    let appeal_scale = (1.0 + config.appeal_max).ln();
    let noise = Normal::new(0.0, config.feature_noise.max(0.0)).expect("noise dist");

    let queries: Vec<Query> = (0..n_users)
        .map(|u| {
            let mut features = vec![0.0; config.query_dim];
            features[usize::from(user_language[u])] = 1.0;
            let latent_at = config.n_languages;
            features[latent_at..latent_at + k].copy_from_slice(&user_latent[u * k..(u + 1) * k]);
            for x in features.iter_mut().skip(latent_at + k) {
                *x = noise.sample(&mut rng_user_noise);
            }
            Query {
                query_id: u as u64,
                user_id: u as u64,
                primary_language: user_language[u],
                features,
            }
        })
        .collect();

    let candidates: Vec<Candidate> = (0..n_items)
        .map(|i| {
            let mut features = vec![0.0; config.candidate_dim];
            features[usize::from(item_language[i])] = 1.0;
            let latent_at = config.n_languages;
            features[latent_at..latent_at + k].copy_from_slice(&item_latent[i * k..(i + 1) * k]);
            features[latent_at + k] = (1.0 + item_appeal[i]).ln() / appeal_scale;
            for x in features.iter_mut().skip(latent_at + k + 1) {
                *x = noise.sample(&mut rng_item_noise);
            }
            Candidate {
                candidate_id: i as u64,
                language: item_language[i],
                features,
                popularity: item_appeal[i],
            }
        })
        .collect();

    Ok(GroundTruthWorld {
        config: config.clone(),
        user_language,
        item_language,
        user_hard,
        item_hard,
        user_latent,
        item_latent,
        item_appeal,
        queries,
        candidates,
    })
}

impl GroundTruthWorld {
    pub fn n_users(&self) -> usize {
        self.user_language.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_language.len()
    }

    pub fn user_latent(&self, user: usize) -> &[f64] {
        let k = self.config.latent_dim;
        &self.user_latent[user * k..(user + 1) * k]
    }

    pub fn item_latent(&self, item: usize) -> &[f64] {
        let k = self.config.latent_dim;
        &self.item_latent[item * k..(item + 1) * k]
    }

    /// True when the pair is compatible (same language, and for
    /// single-language worlds, same latent hard attribute).
    pub fn is_compatible(&self, user: usize, item: usize) -> bool {
        self.user_language[user] == self.item_language[item]
            && self.user_hard[user] == self.item_hard[item]
    }

    /// Coarse part of the latent interest alignment, as seen by the serving
    /// policy.
    pub fn coarse_affinity(&self, user: usize, item: usize) -> f64 {
        let c = self.config.coarse_dims;
        dot(&self.user_latent(user)[..c], &self.item_latent(item)[..c])
    }

    /// True engagement probability `p(u, i)`, always in `[0, 1]`.
    pub fn engagement_prob(&self, user: usize, item: usize) -> f64 {
        let cfg = &self.config;
        let c = cfg.coarse_dims;
        let u = self.user_latent(user);
        let v = self.item_latent(item);
        let arg = cfg.engage_coarse_gain * dot(&u[..c], &v[..c])
            + cfg.engage_fine_gain * dot(&u[c..], &v[c..])
            + cfg.engage_bias
            + cfg.appeal_gain * (1.0 + self.item_appeal[item]).ln();
        let base = sigmoid(arg);
        if self.is_compatible(user, item) {
            base
        } else {
            EPS_IRRELEVANT * base
        }
    }

    /// Fraction of all (user, item) pairs in each relevance band, by
    /// exhaustive scan. Order: extremely irrelevant, relevant-not-engaging,
    /// relevant-engaging.
    pub fn region_shares(&self) -> [f64; 3] {
        let mut counts = [0usize; 3];
        for u in 0..self.n_users() {
            for i in 0..self.n_items() {
                match classify_engagement(self.engagement_prob(u, i)) {
                    Region::ExtremelyIrrelevant => counts[0] += 1,
                    Region::RelevantNotEngaging => counts[1] += 1,
                    Region::RelevantEngaging => counts[2] += 1,
                }
            }
        }
        let total = (self.n_users() * self.n_items()) as f64;
        [
            counts[0] as f64 / total,
            counts[1] as f64 / total,
            counts[2] as f64 / total,
        ]
    }

    /// Mean engagement probability over all (user, item) pairs (exhaustive).
    pub fn mean_engagement(&self) -> f64 {
        let mut acc = 0.0;
        for u in 0..self.n_users() {
            for i in 0..self.n_items() {
                acc += self.engagement_prob(u, i);
            }
        }
        acc / (self.n_users() * self.n_items()) as f64
    }

    pub fn query(&self, query_id: u64) -> Result<&Query> {
        self.queries
            .get(query_id as usize)
            .ok_or(Error::UnknownId(query_id))
    }

    pub fn candidate(&self, candidate_id: u64) -> Result<&Candidate> {
        self.candidates
            .get(candidate_id as usize)
            .ok_or(Error::UnknownId(candidate_id))
    }
}
