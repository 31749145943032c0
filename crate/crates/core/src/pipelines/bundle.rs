//! Assembles one experiment's data: a generated world, its served-traffic
//! log, a disjoint-user train/test split, and a fixed sampled-negative test
//! set shared by every model trained against the bundle.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    generate_world, simulate_served_traffic, split_by_user, GroundTruthWorld, Interaction,
    PolicyConfig, Query, ServedLog, WorldConfig,
};
use crate::error::{Error, Problems, Result};
use crate::sampling::{sample_uniform_negatives, SamplerConfig, SamplerMode};
use crate::seeding;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleConfig {
    pub world: WorldConfig,
    pub policy: PolicyConfig,
    /// Fraction of users whose served history becomes training data.
    pub train_fraction: f64,
    /// Uniform negatives per held-out positive in the sampled test set.
    pub test_negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            world: WorldConfig::default(),
            policy: PolicyConfig::default(),
            train_fraction: 0.8,
            test_negatives_per_positive: 16,
            seed: 0,
        }
    }
}

impl BundleConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.policy.validate()?;
        let mut p = Problems::new();
        p.require(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            ),
        );
        p.require(
            self.test_negatives_per_positive >= 1,
            "test_negatives_per_positive must be >= 1",
        );
        p.into_result()
    }
}

/// Everything a training pipeline consumes. The two test sets answer
/// different questions: `test_records` ranks within served traffic (can the
/// model order engagement among plausible candidates?), while `sampled_test`
/// mixes held-out positives with uniform corpus draws (can it reject
/// never-served junk?).
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub config: BundleConfig,
    pub world: GroundTruthWorld,
    pub served: ServedLog,
    /// Served records of training users: positives and implicit negatives.
    pub train_records: Vec<Interaction>,
    /// Served records of held-out users.
    pub test_records: Vec<Interaction>,
    /// The explicit positives within `train_records`.
    pub train_positives: Vec<Interaction>,
    /// Held-out positives plus fixed uniform sampled negatives.
    pub sampled_test: Vec<Interaction>,
    /// Queries of held-out users, ascending by id.
    pub test_queries: Vec<Query>,
}

impl DataBundle {
    pub fn build(config: &BundleConfig) -> Result<Self> {
        config.validate()?;
        let world = generate_world(&config.world)?;
        let served = simulate_served_traffic(&world, &config.policy)?;

        // query_id is the user id in generated worlds, so splitting on it
        // keeps each user's history on one side.
        let (train_records, test_records) = split_by_user(
            &served.records,
            |r: &Interaction| r.query_id,
            config.train_fraction,
            seeding::derive_tagged(config.seed, "bundle-split"),
        )?;

        let train_positives: Vec<Interaction> = train_records
            .iter()
            .filter(|r| r.label)
            .cloned()
            .collect();
        if train_positives.is_empty() {
            return Err(Error::EmptyInput(
                "served traffic produced no training positives".into(),
            ));
        }
        let test_positives: Vec<Interaction> = test_records
            .iter()
            .filter(|r| r.label)
            .cloned()
            .collect();
        if test_positives.is_empty() {
            return Err(Error::EmptyInput(
                "served traffic produced no held-out positives".into(),
            ));
        }

        let candidate_ids: Vec<u64> = (0..world.n_items() as u64).collect();
        let sampler = SamplerConfig {
            mode: SamplerMode::Uniform,
            negatives_per_positive: config.test_negatives_per_positive,
            filter_known_positives: true,
            frequency_smoothing: 0.0,
            seed: seeding::derive_tagged(config.seed, "test-negatives"),
        };
        let drawn = sample_uniform_negatives(&test_positives, &candidate_ids, &sampler)?;
        let mut sampled_test = test_positives;
        sampled_test.extend(drawn.negatives);

        let test_query_ids: BTreeSet<u64> = test_records.iter().map(|r| r.query_id).collect();
        let test_queries: Vec<Query> = test_query_ids
            .iter()
            .map(|&qid| world.query(qid).cloned())
            .collect::<Result<_>>()?;

        Ok(DataBundle {
            config: config.clone(),
            world,
            served,
            train_records,
            test_records,
            train_positives,
            sampled_test,
            test_queries,
        })
    }

    pub fn candidate_ids(&self) -> Vec<u64> {
        (0..self.world.n_items() as u64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn small_config() -> BundleConfig {
        BundleConfig {
            world: WorldConfig {
                n_users: 120,
                n_items: 400,
                ..WorldConfig::default()
            },
            policy: PolicyConfig {
                served_size: 20,
                ..PolicyConfig::default()
            },
            test_negatives_per_positive: 4,
            ..BundleConfig::default()
        }
    }

    #[test]
    fn split_users_are_disjoint_and_sets_are_coherent() {
        let bundle = DataBundle::build(&small_config()).unwrap();
        let train_users: HashSet<u64> = bundle.train_records.iter().map(|r| r.query_id).collect();
        let test_users: HashSet<u64> = bundle.test_records.iter().map(|r| r.query_id).collect();
        assert!(train_users.is_disjoint(&test_users));
        assert_eq!(
            bundle.train_records.len() + bundle.test_records.len(),
            bundle.served.records.len()
        );
        assert!(bundle.train_positives.iter().all(|r| r.label));
        // Sampled test mixes both labels and only references held-out users.
        assert!(bundle.sampled_test.iter().any(|r| r.label));
        assert!(bundle.sampled_test.iter().any(|r| !r.label));
        assert!(bundle
            .sampled_test
            .iter()
            .all(|r| test_users.contains(&r.query_id)));
        // Queries come back sorted and cover exactly the held-out users.
        let qids: Vec<u64> = bundle.test_queries.iter().map(|q| q.query_id).collect();
        let mut sorted = qids.clone();
        sorted.sort_unstable();
        assert_eq!(qids, sorted);
        assert_eq!(
            qids.iter().copied().collect::<HashSet<u64>>(),
            test_users
        );
    }

    #[test]
    fn negative_ratio_is_respected() {
        let bundle = DataBundle::build(&small_config()).unwrap();
        let pos = bundle.sampled_test.iter().filter(|r| r.label).count();
        let neg = bundle.sampled_test.len() - pos;
        // Up to a few skipped draws from retry exhaustion.
        assert!(neg <= pos * 4);
        assert!(neg >= pos * 4 - pos);
    }

    #[test]
    fn build_is_deterministic_and_seed_sensitive() {
        let config = small_config();
        let a = DataBundle::build(&config).unwrap();
        let b = DataBundle::build(&config).unwrap();
        assert_eq!(a.train_records, b.train_records);
        assert_eq!(a.sampled_test, b.sampled_test);

        let c = DataBundle::build(&BundleConfig {
            seed: 99,
            ..config
        })
        .unwrap();
        assert_ne!(a.train_records, c.train_records);
    }

    #[test]
    fn config_validation_reports_problems() {
        let bad = BundleConfig {
            train_fraction: 1.0,
            test_negatives_per_positive: 0,
            ..small_config()
        };
        let msg = DataBundle::build(&bad).unwrap_err().to_string();
        assert!(msg.contains("train_fraction"));
        assert!(msg.contains("test_negatives_per_positive"));
    }
}
