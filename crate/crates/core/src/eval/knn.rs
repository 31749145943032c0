//! Retrieval-style evaluation over exact nearest neighbors.
//!
//! Embeds a (possibly subsampled) set of queries and candidates, scans the
//! full candidate set per query, and reports:
//!
//! * **language mismatch rate** — how often the top retrieved candidates
//!   speak a different language than the query; near zero for a model that
//!   learned the hardest structural constraint, near `1 - 1/L` for a random
//!   one.
//! * **popularity-recommendation correlation** — Pearson between how often a
//!   candidate is retrieved and how popular it is, measuring how much the
//!   model's recommendations chase popularity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Candidate, Query};
use crate::error::{Error, Problems, Result};
use crate::eval::metrics::pearson;
use crate::model::{Embedding, TowerParams};
use crate::seeding;
use crate::vecmath::dot;

/// Anything that can co-embed queries and candidates into one space.
pub trait CoEmbedder: Sync {
    fn embed_query(&self, features: &[f64]) -> Result<Embedding>;
    fn embed_candidate(&self, features: &[f64]) -> Result<Embedding>;
}

impl CoEmbedder for TowerParams {
    fn embed_query(&self, features: &[f64]) -> Result<Embedding> {
        TowerParams::embed_query(self, features)
    }
    fn embed_candidate(&self, features: &[f64]) -> Result<Embedding> {
        TowerParams::embed_candidate(self, features)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnEvalConfig {
    /// Queries scanned (subsampled deterministically when more exist).
    pub n_queries: usize,
    /// Candidate pool size (subsampled deterministically when more exist).
    pub n_candidates: usize,
    /// Neighbors inspected for the mismatch rate.
    pub top_mismatch: usize,
    /// Neighbors counted for the popularity correlation.
    pub top_pearson: usize,
    pub seed: u64,
}

impl Default for KnnEvalConfig {
    fn default() -> Self {
        KnnEvalConfig {
            n_queries: 1000,
            n_candidates: 10_000,
            top_mismatch: 1,
            top_pearson: 5,
            seed: 0,
        }
    }
}

impl KnnEvalConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = Problems::new();
        p.require(self.n_queries >= 1, "n_queries must be >= 1");
        p.require(self.n_candidates >= 1, "n_candidates must be >= 1");
        p.require(self.top_mismatch >= 1, "top_mismatch must be >= 1");
        p.require(self.top_pearson >= 1, "top_pearson must be >= 1");
        p.into_result()
    }

    fn k(&self) -> usize {
        self.top_mismatch.max(self.top_pearson)
    }
}

/// Both retrieval metrics from one scan. The popularity correlation is `None`
/// when degenerate (e.g. constant retrieval counts), which is a report-worthy
/// outcome rather than an error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnEvalSummary {
    pub mismatch_rate: f64,
    pub popularity_pearson: Option<f64>,
    pub queries_scanned: usize,
    pub candidates_scanned: usize,
}

struct PreparedScan {
    query_langs: Vec<u16>,
    query_embs: Vec<Embedding>,
    cand_langs: Vec<u16>,
    cand_pops: Vec<f64>,
    cand_embs: Vec<Embedding>,
}

/// Deterministically keeps `n` of `len` indices (all of them when `len <= n`),
/// in ascending order.
fn subsample(len: usize, n: usize, rng_seed: u64, tag: &str) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if len <= n {
        return idx;
    }
    let mut rng = seeding::rng_tagged(rng_seed, tag);
    for k in 0..n {
        let j = rand::Rng::random_range(&mut rng, k..len);
        idx.swap(k, j);
    }
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

fn prepare<E: CoEmbedder>(
    embedder: &E,
    queries: &[Query],
    candidates: &[Candidate],
    config: &KnnEvalConfig,
) -> Result<PreparedScan> {
    config.validate()?;
    if queries.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyInput(
            "retrieval eval needs queries and candidates".into(),
        ));
    }
    let qi = subsample(queries.len(), config.n_queries, config.seed, "eval-queries");
    let ci = subsample(
        candidates.len(),
        config.n_candidates,
        config.seed,
        "eval-candidates",
    );
    if config.k() > ci.len() {
        return Err(Error::config(format!(
            "top-{} retrieval needs at least that many candidates; have {}",
            config.k(),
            ci.len()
        )));
    }
    let query_embs = qi
        .par_iter()
        .map(|&i| embedder.embed_query(&queries[i].features))
        .collect::<Result<Vec<_>>>()?;
    let cand_embs = ci
        .par_iter()
        .map(|&i| embedder.embed_candidate(&candidates[i].features))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedScan {
        query_langs: qi.iter().map(|&i| queries[i].primary_language).collect(),
        query_embs,
        cand_langs: ci.iter().map(|&i| candidates[i].language).collect(),
        cand_pops: ci.iter().map(|&i| candidates[i].popularity).collect(),
        cand_embs,
    })
}

/// Indices of the `k` candidates most similar to `query`, ties broken toward
/// the lower index.
fn top_k(query: &Embedding, cand_embs: &[Embedding], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = cand_embs
        .iter()
        .enumerate()
        .map(|(i, c)| (dot(query.as_slice(), c.as_slice()), i))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| {
        b.0.partial_cmp(&a.0)
            .expect("similarities are finite")
            .then(a.1.cmp(&b.1))
    };
    let k = k.min(scored.len());
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Runs one exact scan and reports both retrieval metrics.
pub fn knn_eval<E: CoEmbedder>(
    embedder: &E,
    queries: &[Query],
    candidates: &[Candidate],
    config: &KnnEvalConfig,
) -> Result<KnnEvalSummary> {
    let scan = prepare(embedder, queries, candidates, config)?;
    let k = config.k();
    let per_query: Vec<(usize, Vec<usize>)> = scan
        .query_embs
        .par_iter()
        .zip(scan.query_langs.par_iter())
        .map(|(qe, &lang)| {
            let top = top_k(qe, &scan.cand_embs, k);
            let mismatches = top[..config.top_mismatch]
                .iter()
                .filter(|&&c| scan.cand_langs[c] != lang)
                .count();
            (mismatches, top)
        })
        .collect();

    let total_slots = per_query.len() * config.top_mismatch;
    let mismatch_rate =
        per_query.iter().map(|(m, _)| *m).sum::<usize>() as f64 / total_slots as f64;

    let mut counts = vec![0.0f64; scan.cand_embs.len()];
    for (_, top) in &per_query {
        for &c in &top[..config.top_pearson] {
            counts[c] += 1.0;
        }
    }
    let popularity_pearson = match pearson(&counts, &scan.cand_pops) {
        Ok(r) => Some(r),
        Err(Error::DegenerateMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(KnnEvalSummary {
        mismatch_rate,
        popularity_pearson,
        queries_scanned: scan.query_embs.len(),
        candidates_scanned: scan.cand_embs.len(),
    })
}

/// Fraction of top-`top_mismatch` retrievals whose language differs from the
/// query's.
pub fn language_mismatch_rate<E: CoEmbedder>(
    embedder: &E,
    queries: &[Query],
    candidates: &[Candidate],
    config: &KnnEvalConfig,
) -> Result<f64> {
    Ok(knn_eval(embedder, queries, candidates, config)?.mismatch_rate)
}

/// Pearson between per-candidate retrieval count (over top-`top_pearson`
/// lists) and candidate popularity. Errors when degenerate.
pub fn popularity_recommendation_pearson<E: CoEmbedder>(
    embedder: &E,
    queries: &[Query],
    candidates: &[Candidate],
    config: &KnnEvalConfig,
) -> Result<f64> {
    knn_eval(embedder, queries, candidates, config)?
        .popularity_pearson
        .ok_or_else(|| {
            Error::DegenerateMetric("retrieval counts or popularity had zero variance".into())
        })
}

/// Baseline embedders with known retrieval behavior, useful for calibrating
/// the metrics above.
pub mod reference {
    use super::*;

    /// Maps any input to a deterministic pseudo-random direction on the unit
    /// sphere; retrieval under it is pure chance.
    pub struct RandomUnitEmbedder {
        pub dim: usize,
        pub seed: u64,
    }

    impl RandomUnitEmbedder {
        fn embed(&self, features: &[f64]) -> Result<Embedding> {
            // Fold the feature bits into one stream index.
            let mut acc = 0xcbf2_9ce4_8422_2325u64;
            for f in features {
                acc = (acc ^ f.to_bits()).wrapping_mul(0x1000_0000_01b3);
            }
            let mut rng = seeding::rng(seeding::derive_tagged(self.seed, "random-embed"), acc);
            let normal = rand_distr::StandardNormal;
            let mut v: Vec<f64> = (0..self.dim)
                .map(|_| rand_distr::Distribution::sample(&normal, &mut rng))
                .collect();
            crate::vecmath::normalize_in_place(&mut v);
            Embedding::try_from_unit(v)
        }
    }

    impl CoEmbedder for RandomUnitEmbedder {
        fn embed_query(&self, features: &[f64]) -> Result<Embedding> {
            self.embed(features)
        }
        fn embed_candidate(&self, features: &[f64]) -> Result<Embedding> {
            self.embed(features)
        }
    }

    /// Ranks candidates purely by the feature at `popularity_index` (assumed
    /// scaled into `[0, 1]`), identically for every query.
    pub struct PopularityFeatureEmbedder {
        pub popularity_index: usize,
    }

    impl CoEmbedder for PopularityFeatureEmbedder {
        fn embed_query(&self, _features: &[f64]) -> Result<Embedding> {
            Embedding::try_from_unit(vec![1.0, 0.0])
        }
        fn embed_candidate(&self, features: &[f64]) -> Result<Embedding> {
            let v = features
                .get(self.popularity_index)
                .copied()
                .ok_or(Error::DimensionMismatch {
                    expected: self.popularity_index + 1,
                    got: features.len(),
                })?
                .clamp(0.0, 1.0);
            Embedding::try_from_unit(vec![v, (1.0 - v * v).sqrt()])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::reference::*;
    use super::*;

    fn query(id: u64, lang: u16, features: Vec<f64>) -> Query {
        Query {
            query_id: id,
            user_id: id,
            primary_language: lang,
            features,
        }
    }

    fn candidate(id: u64, lang: u16, popularity: f64, features: Vec<f64>) -> Candidate {
        Candidate {
            candidate_id: id,
            language: lang,
            features,
            popularity,
        }
    }

    /// Embeds the first `langs` features (a one-hot language block).
    struct LanguageOracle {
        langs: usize,
    }

    impl CoEmbedder for LanguageOracle {
        fn embed_query(&self, features: &[f64]) -> Result<Embedding> {
            Embedding::try_from_unit(features[..self.langs].to_vec())
        }
        fn embed_candidate(&self, features: &[f64]) -> Result<Embedding> {
            Embedding::try_from_unit(features[..self.langs].to_vec())
        }
    }

    fn one_hot(lang: u16, langs: usize) -> Vec<f64> {
        let mut v = vec![0.0; langs];
        v[lang as usize] = 1.0;
        v
    }

    #[test]
    fn perfect_language_embedder_never_mismatches() {
        let langs = 5;
        let queries: Vec<Query> = (0..40)
            .map(|i| query(i, (i % 5) as u16, one_hot((i % 5) as u16, langs)))
            .collect();
        let candidates: Vec<Candidate> = (0..100)
            .map(|i| candidate(i, (i % 5) as u16, 1.0, one_hot((i % 5) as u16, langs)))
            .collect();
        let cfg = KnnEvalConfig {
            n_queries: 40,
            n_candidates: 100,
            ..Default::default()
        };
        let rate = language_mismatch_rate(&LanguageOracle { langs }, &queries, &candidates, &cfg)
            .unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn random_embedder_mismatch_matches_chance() {
        // Five equally sized languages: a random retriever picks a
        // same-language candidate 1/5 of the time, so mismatch ~ 0.8.
        let langs = 5;
        let queries: Vec<Query> = (0..400)
            .map(|i| {
                let mut f = one_hot((i % 5) as u16, langs);
                f.push(i as f64); // make every query's features unique
                query(i, (i % 5) as u16, f)
            })
            .collect();
        let candidates: Vec<Candidate> = (0..2000)
            .map(|i| {
                let mut f = one_hot((i % 5) as u16, langs);
                f.push(-(i as f64) - 1.0);
                candidate(i, (i % 5) as u16, 1.0, f)
            })
            .collect();
        let cfg = KnnEvalConfig {
            n_queries: 400,
            n_candidates: 2000,
            ..Default::default()
        };
        let embedder = RandomUnitEmbedder { dim: 16, seed: 3 };
        let rate = language_mismatch_rate(&embedder, &queries, &candidates, &cfg).unwrap();
        assert!((rate - 0.8).abs() < 0.05, "mismatch rate {rate}");
    }

    #[test]
    fn popularity_oracle_correlates_perfectly_on_two_level_popularity() {
        // 5 candidates at popularity 100, 45 at 0. The popularity embedder
        // retrieves exactly the popular five for every query, so per-item
        // retrieval counts are an exact linear function of popularity.
        let queries: Vec<Query> = (0..20).map(|i| query(i, 0, vec![0.0])).collect();
        let candidates: Vec<Candidate> = (0..50)
            .map(|i| {
                let pop = if i < 5 { 100.0 } else { 0.0 };
                candidate(i, 0, pop, vec![pop / 100.0])
            })
            .collect();
        let cfg = KnnEvalConfig {
            n_queries: 20,
            n_candidates: 50,
            ..Default::default()
        };
        let embedder = PopularityFeatureEmbedder { popularity_index: 0 };
        let r =
            popularity_recommendation_pearson(&embedder, &queries, &candidates, &cfg).unwrap();
        assert!(r > 0.999_999, "pearson {r}");

        // The same scan must also report a 100% mismatch-free rate (single
        // language corpus) via the combined summary.
        let summary = knn_eval(&embedder, &queries, &candidates, &cfg).unwrap();
        assert_eq!(summary.mismatch_rate, 0.0);
        assert_eq!(summary.queries_scanned, 20);
        assert_eq!(summary.candidates_scanned, 50);
    }

    #[test]
    fn subsampling_is_deterministic_and_seed_sensitive() {
        let langs = 3;
        let queries: Vec<Query> = (0..200)
            .map(|i| {
                let mut f = one_hot((i % 3) as u16, langs);
                f.push(i as f64);
                query(i, (i % 3) as u16, f)
            })
            .collect();
        let candidates: Vec<Candidate> = (0..300)
            .map(|i| {
                let mut f = one_hot((i % 3) as u16, langs);
                f.push(i as f64 + 0.5);
                candidate(i, (i % 3) as u16, i as f64, f)
            })
            .collect();
        let embedder = RandomUnitEmbedder { dim: 8, seed: 9 };
        let cfg = KnnEvalConfig {
            n_queries: 50,
            n_candidates: 80,
            ..Default::default()
        };
        let a = knn_eval(&embedder, &queries, &candidates, &cfg).unwrap();
        let b = knn_eval(&embedder, &queries, &candidates, &cfg).unwrap();
        assert_eq!(a, b);
        let other = KnnEvalConfig { seed: 1, ..cfg };
        let c = knn_eval(&embedder, &queries, &candidates, &other).unwrap();
        assert_eq!(c.queries_scanned, 50);
        // Different subsample: the rate will almost surely differ.
        assert_ne!(a.mismatch_rate.to_bits(), c.mismatch_rate.to_bits());
    }

    #[test]
    fn degenerate_popularity_is_reported_not_crashed() {
        // Constant popularity everywhere: correlation undefined.
        let queries: Vec<Query> = (0..5).map(|i| query(i, 0, vec![i as f64, 1.0])).collect();
        let candidates: Vec<Candidate> = (0..10)
            .map(|i| candidate(i, 0, 7.0, vec![i as f64, -1.0]))
            .collect();
        let cfg = KnnEvalConfig {
            n_queries: 5,
            n_candidates: 10,
            ..Default::default()
        };
        let embedder = RandomUnitEmbedder { dim: 4, seed: 0 };
        let summary = knn_eval(&embedder, &queries, &candidates, &cfg).unwrap();
        assert_eq!(summary.popularity_pearson, None);
        assert!(matches!(
            popularity_recommendation_pearson(&embedder, &queries, &candidates, &cfg),
            Err(Error::DegenerateMetric(_))
        ));
    }

    #[test]
    fn too_small_corpus_for_k_is_rejected() {
        let queries = vec![query(0, 0, vec![1.0])];
        let candidates: Vec<Candidate> =
            (0..3).map(|i| candidate(i, 0, 1.0, vec![1.0])).collect();
        let cfg = KnnEvalConfig {
            n_queries: 1,
            n_candidates: 3,
            top_pearson: 5,
            ..Default::default()
        };
        let embedder = RandomUnitEmbedder { dim: 4, seed: 0 };
        assert!(knn_eval(&embedder, &queries, &candidates, &cfg).is_err());
    }

    #[test]
    fn ties_break_toward_lower_candidate_index() {
        let e = |v: Vec<f64>| Embedding::try_from_unit(v).unwrap();
        let q = e(vec![1.0, 0.0]);
        let cands = vec![
            e(vec![0.0, 1.0]),
            e(vec![1.0, 0.0]),
            e(vec![1.0, 0.0]),
            e(vec![0.6, 0.8]),
        ];
        assert_eq!(top_k(&q, &cands, 3), vec![1, 2, 3]);
        assert_eq!(top_k(&q, &cands, 10), vec![1, 2, 3, 0]);
    }
}
