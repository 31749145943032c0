//! Serving-policy simulation.
//!
//! The policy mimics a production candidate source: for each query it ranks
//! the language-matched portion of the corpus by a noisy blend of popularity
//! and the *coarse* part of interest alignment, serves the top `served_size`,
//! and records one labeled interaction per served item with the label drawn
//! from the true engagement probability. The resulting log is biased in
//! exactly the ways a real one is: language-pure, popularity-tilted, and
//! concentrated on high-affinity pairs.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataset::types::Interaction;
use crate::dataset::world::GroundTruthWorld;
use crate::error::{Problems, Result};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub seed: u64,
    /// Served set size `S` per query.
    pub served_size: usize,
    /// Ranking-noise scale, as a fraction of the per-query score std.
    pub noise: f64,
    /// Weight on normalized `ln(1 + appeal)` in the serving score.
    pub popularity_weight: f64,
    /// Weight on the coarse interest alignment in the serving score.
    pub interest_weight: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            seed: 11,
            served_size: 50,
            noise: 0.5,
            popularity_weight: 1.0,
            interest_weight: 1.0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(self.served_size >= 1, "served_size must be >= 1");
        p.require(
            self.noise >= 0.0 && self.noise.is_finite(),
            "noise must be >= 0",
        );
        p.require(
            self.popularity_weight.is_finite(),
            "popularity_weight must be finite",
        );
        p.require(
            self.interest_weight.is_finite(),
            "interest_weight must be finite",
        );
        p.into_result()
    }
}

/// The traffic produced by one simulated serving pass: every served
/// (query, candidate) pair labeled by a Bernoulli draw of the true engagement
/// probability, plus the served set per query in rank order.
#[derive(Debug, Clone, PartialEq)]
pub struct ServedLog {
    pub records: Vec<Interaction>,
    pub served: BTreeMap<u64, Vec<u64>>,
}

impl ServedLog {
    pub fn positive_rate(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let pos = self.records.iter().filter(|r| r.label).count();
        pos as f64 / self.records.len() as f64
    }

    /// Occurrence count per candidate over the whole log.
    pub fn serve_counts(&self) -> BTreeMap<u64, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.candidate_id).or_insert(0) += 1;
        }
        counts
    }
}

/// Runs the serving policy once over every query in the world.
pub fn simulate_served_traffic(
    world: &GroundTruthWorld,
    policy: &PolicyConfig,
) -> Result<ServedLog> {
    policy.validate()?;
    let appeal_scale = (1.0 + world.config.appeal_max).ln();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    // Queries are independent; each gets its own derived streams so the
    // result is identical no matter how the loop is scheduled.
    let per_query: Vec<(u64, Vec<u64>, Vec<Interaction>)> = (0..world.n_users())
        .into_par_iter()
        .map(|q| {
            let lang = world.user_language[q];
            let matched: Vec<usize> = (0..world.n_items())
                .filter(|&i| world.item_language[i] == lang)
                .collect();

            let mut scored: Vec<(f64, usize)> = matched
                .iter()
                .map(|&i| {
                    let pop = (1.0 + world.item_appeal[i]).ln() / appeal_scale;
                    let score = policy.popularity_weight * pop
                        + policy.interest_weight * world.coarse_affinity(q, i);
                    (score, i)
                })
                .collect();

            if policy.noise > 0.0 && scored.len() > 1 {
                let mean = scored.iter().map(|(s, _)| s).sum::<f64>() / scored.len() as f64;
                let var = scored
                    .iter()
                    .map(|(s, _)| (s - mean) * (s - mean))
                    .sum::<f64>()
                    / scored.len() as f64;
                let sigma = policy.noise * var.sqrt();
                let mut rng = seeding::rng(seeding::derive_tagged(policy.seed, "rank"), q as u64);
                for (s, _) in scored.iter_mut() {
                    *s += sigma * unit.sample(&mut rng);
                }
            }

            // Highest score first; ties broken by ascending item id.
            scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            scored.truncate(policy.served_size);

            let mut rng_label =
                seeding::rng(seeding::derive_tagged(policy.seed, "label"), q as u64);
            let mut served_ids = Vec::with_capacity(scored.len());
            let mut records = Vec::with_capacity(scored.len());
            for (_, i) in &scored {
                let p = world.engagement_prob(q, *i);
                let engaged = rng_label.random::<f64>() < p;
                let (qid, cid) = (q as u64, *i as u64);
                served_ids.push(cid);
                records.push(if engaged {
                    Interaction::explicit_positive(qid, cid)
                } else {
                    Interaction::implicit_negative(qid, cid)
                });
            }
            (q as u64, served_ids, records)
        })
        .collect();

    let mut served = BTreeMap::new();
    let mut records = Vec::new();
    for (qid, ids, recs) in per_query {
        served.insert(qid, ids);
        records.extend(recs);
    }
    Ok(ServedLog { records, served })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::world::{generate_world, WorldConfig};

    fn small_world() -> GroundTruthWorld {
        generate_world(&WorldConfig {
            n_users: 80,
            n_items: 300,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn log_is_language_pure_and_sized() {
        let world = small_world();
        let policy = PolicyConfig {
            served_size: 20,
            ..PolicyConfig::default()
        };
        let log = simulate_served_traffic(&world, &policy).unwrap();
        for r in &log.records {
            let q = r.query_id as usize;
            let c = r.candidate_id as usize;
            assert_eq!(world.user_language[q], world.item_language[c]);
        }
        for ids in log.served.values() {
            assert!(ids.len() <= 20);
        }
        assert_eq!(log.served.len(), world.n_users());
    }

    #[test]
    fn determinism_under_fixed_seeds() {
        let world = small_world();
        let policy = PolicyConfig::default();
        let a = simulate_served_traffic(&world, &policy).unwrap();
        let b = simulate_served_traffic(&world, &policy).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn popularity_only_policy_serves_same_set_within_language() {
        let world = small_world();
        let policy = PolicyConfig {
            noise: 0.0,
            interest_weight: 0.0,
            ..PolicyConfig::default()
        };
        let log = simulate_served_traffic(&world, &policy).unwrap();
        let mut per_lang: BTreeMap<u16, &Vec<u64>> = BTreeMap::new();
        for (qid, ids) in &log.served {
            let lang = world.user_language[*qid as usize];
            match per_lang.get(&lang) {
                None => {
                    per_lang.insert(lang, ids);
                }
                Some(first) => assert_eq!(*first, ids, "popularity-only sets must match"),
            }
        }
    }

    #[test]
    fn full_coverage_when_served_size_is_corpus() {
        let cfg = WorldConfig {
            n_users: 30,
            n_items: 40,
            n_languages: 1,
            ..WorldConfig::default()
        };
        let world = generate_world(&cfg).unwrap();
        let policy = PolicyConfig {
            served_size: 40,
            ..PolicyConfig::default()
        };
        let log = simulate_served_traffic(&world, &policy).unwrap();
        for ids in log.served.values() {
            assert_eq!(ids.len(), 40, "every item must be served");
        }
        assert_eq!(log.records.len(), 30 * 40);
    }

    #[test]
    fn log_positive_rate_beats_corpus_mean_engagement() {
        let world = small_world();
        let log = simulate_served_traffic(&world, &PolicyConfig::default()).unwrap();
        let corpus_mean = world.mean_engagement();
        assert!(
            log.positive_rate() > corpus_mean,
            "served rate {} should exceed corpus mean {}",
            log.positive_rate(),
            corpus_mean
        );
    }

    #[test]
    fn served_items_skew_popular() {
        // The served set must be a small fraction of the per-language corpus,
        // otherwise every matched item is served and counts carry no signal.
        let world = generate_world(&WorldConfig {
            n_users: 150,
            n_items: 1000,
            ..WorldConfig::default()
        })
        .unwrap();
        let policy = PolicyConfig {
            served_size: 20,
            ..PolicyConfig::default()
        };
        let log = simulate_served_traffic(&world, &policy).unwrap();
        let counts = log.serve_counts();
        // Pearson between per-item serve count (0 when never served) and
        // appeal must be clearly positive.
        let n = world.n_items();
        let xs: Vec<f64> = (0..n)
            .map(|i| counts.get(&(i as u64)).copied().unwrap_or(0) as f64)
            .collect();
        let ys = &world.item_appeal;
        let mx = xs.iter().sum::<f64>() / n as f64;
        let my = ys.iter().sum::<f64>() / n as f64;
        let cov: f64 = xs
            .iter()
            .zip(ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum::<f64>();
        let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
        let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>();
        let r = cov / (vx.sqrt() * vy.sqrt());
        assert!(r > 0.3, "serve-count/popularity correlation {r}");
    }

    #[test]
    fn extremely_irrelevant_pairs_are_rare_in_log() {
        use crate::dataset::world::{classify_engagement, Region};
        let world = small_world();
        let log = simulate_served_traffic(&world, &PolicyConfig::default()).unwrap();
        let bad = log
            .records
            .iter()
            .filter(|r| {
                classify_engagement(
                    world.engagement_prob(r.query_id as usize, r.candidate_id as usize),
                ) == Region::ExtremelyIrrelevant
            })
            .count();
        let frac = bad as f64 / log.records.len() as f64;
        assert!(frac < 0.01, "extremely-irrelevant fraction {frac}");
    }
}
