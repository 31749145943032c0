//! Finite-difference verification of analytic gradients.
//!
//! Central differences with step `h = 1e-5` at randomly probed parameter
//! coordinates. The relative error uses `max(1e-6, |fd|, |analytic|)` as the
//! denominator so near-zero gradients do not inflate the ratio.

use crate::error::Result;
use crate::model::tower::{ModelGrads, TowerParams};
use crate::seeding;
use rand::Rng;

const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
}

/// Compares analytic gradients from `loss_and_grad` against central finite
/// differences at `probes` seeded random coordinates.
pub fn check_gradients<L>(
    params: &TowerParams,
    loss_and_grad: L,
    probes: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    L: Fn(&TowerParams) -> Result<(f64, ModelGrads)>,
{
    let (_, grads) = loss_and_grad(params)?;
    let analytic = grads.tensors();
    let sizes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let total: usize = sizes.iter().sum();

    let mut rng = seeding::rng_tagged(seed, "gradcheck");
    let mut max_rel_err: f64 = 0.0;
    for _ in 0..probes {
        let flat = rng.random_range(0..total);
        let (ti, ei) = locate(&sizes, flat);

        let mut plus = params.clone();
        plus.tensors_mut()[ti][ei] += FD_STEP;
        let lp = loss_and_grad(&plus)?.0;

        let mut minus = params.clone();
        minus.tensors_mut()[ti][ei] -= FD_STEP;
        let lm = loss_and_grad(&minus)?.0;

        let fd = (lp - lm) / (2.0 * FD_STEP);
        let ga = analytic[ti][ei];
        let rel = (fd - ga).abs() / f64::max(1e-6, f64::max(fd.abs(), ga.abs()));
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheckReport {
        max_rel_err,
        probes,
    })
}

fn locate(sizes: &[usize], mut flat: usize) -> (usize, usize) {
    for (ti, &n) in sizes.iter().enumerate() {
        if flat < n {
            return (ti, flat);
        }
        flat -= n;
    }
    unreachable!("flat index out of range");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::loss::{
        pointwise_loss_grad, triplet_loss_grad, PairBatch, PairExample, TripletBatch,
        TripletConfig, TripletExample,
    };
    use crate::model::tower::ModelConfig;

    fn random_features(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeding::rng_tagged(seed, "gradcheck-feats");
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect()
    }

    #[test]
    fn pointwise_gradients_match_finite_differences() {
        // Hidden layers are kept wide enough that no test input collapses an
        // entire ReLU layer to zero, which would land the probe exactly on
        // the normalization kink where finite differences are meaningless.
        for seed in 0..6u64 {
            let cfg = ModelConfig::symmetric(5, 7, &[16, 12], 3);
            let params = TowerParams::init(&cfg, seed).unwrap();
            let qf = random_features(3, 5, seed * 2 + 1);
            let cf = random_features(4, 7, seed * 2 + 2);
            let batch = PairBatch {
                query_features: qf.iter().map(|f| f.as_slice()).collect(),
                candidate_features: cf.iter().map(|f| f.as_slice()).collect(),
                pairs: vec![
                    PairExample {
                        query: 0,
                        candidate: 0,
                        target: 1.0,
                        weight: 1.0,
                    },
                    PairExample {
                        query: 0,
                        candidate: 1,
                        target: 0.0,
                        weight: 0.5,
                    },
                    PairExample {
                        query: 1,
                        candidate: 2,
                        target: 0.0,
                        weight: 2.0,
                    },
                    PairExample {
                        query: 2,
                        candidate: 3,
                        target: 1.0,
                        weight: 1.0,
                    },
                ],
            };
            let report =
                check_gradients(&params, |p| pointwise_loss_grad(p, &batch), 40, seed + 100)
                    .unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: rel err {}",
                report.max_rel_err
            );
        }
    }

    #[test]
    fn triplet_gradients_match_finite_differences() {
        for seed in 0..6u64 {
            let cfg = ModelConfig::symmetric(4, 4, &[16], 3);
            let params = TowerParams::init(&cfg, seed + 50).unwrap();
            let qf = random_features(3, 4, seed * 3 + 7);
            let cf = random_features(5, 4, seed * 3 + 8);
            let batch = TripletBatch {
                query_features: qf.iter().map(|f| f.as_slice()).collect(),
                candidate_features: cf.iter().map(|f| f.as_slice()).collect(),
                triplets: vec![
                    TripletExample {
                        query: 0,
                        positive: 0,
                        negative: 1,
                        weight: 1.0,
                    },
                    TripletExample {
                        query: 1,
                        positive: 2,
                        negative: 3,
                        weight: 1.5,
                    },
                    TripletExample {
                        query: 2,
                        positive: 4,
                        negative: 0,
                        weight: 0.7,
                    },
                ],
            };
            // A wide margin keeps every triplet active, so the hinge is
            // differentiable at the probe point.
            let tc = TripletConfig { margin: 1.5 };
            let report = check_gradients(
                &params,
                |p| triplet_loss_grad(p, &batch, &tc),
                40,
                seed + 200,
            )
            .unwrap();
            assert!(
                report.max_rel_err < 1e-4,
                "seed {seed}: rel err {}",
                report.max_rel_err
            );
        }
    }
}
