//! Id-embedding classifier used by the feedback-loop simulation.
//!
//! Learns one embedding per user id and per item id plus a small MLP head on
//! their concatenation, predicting interaction probability with a sigmoid.
//! No content features at all: the model can only memorize id-level structure,
//! which is exactly what makes it sensitive to which (user, item) pairs the
//! logging policy let through.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::adam::{AdamConfig, AdamState};
use crate::model::tower::{DenseLayer, Matrix};
use crate::seeding;
use crate::vecmath::sigmoid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdMlpConfig {
    pub embedding_dim: usize,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for IdMlpConfig {
    fn default() -> Self {
        IdMlpConfig {
            embedding_dim: 32,
            hidden: vec![64],
            learning_rate: 1e-3,
            epochs: 4,
            batch_size: 256,
        }
    }
}

impl IdMlpConfig {
    pub fn validate(&self) -> Result<()> {
        let mut p = crate::error::Problems::new();
        p.require(self.embedding_dim >= 1, "embedding_dim must be >= 1");
        p.require(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be > 0",
        );
        p.require(self.epochs >= 1, "epochs must be >= 1");
        p.require(self.batch_size >= 1, "batch_size must be >= 1");
        for (i, h) in self.hidden.iter().enumerate() {
            p.require(*h >= 1, format!("hidden[{i}] must be >= 1"));
        }
        p.into_result()
    }
}

/// One labeled id pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdExample {
    pub user: usize,
    pub item: usize,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdMlpClassifier {
    pub config: IdMlpConfig,
    n_users: usize,
    n_items: usize,
    user_table: Matrix,
    item_table: Matrix,
    head: Vec<DenseLayer>,
}

impl IdMlpClassifier {
    pub fn init(config: IdMlpConfig, n_users: usize, n_items: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n_users == 0 || n_items == 0 {
            return Err(Error::config("id tables need at least one user and item"));
        }
        let d = config.embedding_dim;
        let mut rng = seeding::rng_tagged(seed, "idmlp-init");
        let table_dist = Normal::new(0.0, 0.1).expect("table init");
        let mut user_table = Matrix::zeros(n_users, d);
        for v in &mut user_table.data {
            *v = table_dist.sample(&mut rng);
        }
        let mut item_table = Matrix::zeros(n_items, d);
        for v in &mut item_table.data {
            *v = table_dist.sample(&mut rng);
        }

        let mut head = Vec::new();
        let mut prev = 2 * d;
        for &h in config.hidden.iter().chain(std::iter::once(&1)) {
            let std = (2.0 / prev as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("head init");
            let mut w = Matrix::zeros(h, prev);
            for v in &mut w.data {
                *v = dist.sample(&mut rng);
            }
            head.push(DenseLayer {
                w,
                b: vec![0.0; h],
            });
            prev = h;
        }

        Ok(IdMlpClassifier {
            config,
            n_users,
            n_items,
            user_table,
            item_table,
            head,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    fn forward(&self, user: usize, item: usize) -> (Vec<Vec<f64>>, f64) {
        let mut x: Vec<f64> = Vec::with_capacity(2 * self.config.embedding_dim);
        x.extend_from_slice(self.user_table.row(user));
        x.extend_from_slice(self.item_table.row(item));
        let mut activations = vec![x];
        let n = self.head.len();
        for layer in &self.head[..n - 1] {
            let mut z = vec![0.0; layer.w.rows];
            for (r, zr) in z.iter_mut().enumerate() {
                *zr = crate::vecmath::dot(layer.w.row(r), activations.last().unwrap()) + layer.b[r];
                if *zr < 0.0 {
                    *zr = 0.0;
                }
            }
            activations.push(z);
        }
        let out = &self.head[n - 1];
        let logit = crate::vecmath::dot(out.w.row(0), activations.last().unwrap()) + out.b[0];
        (activations, logit)
    }

    /// Predicted interaction probability for an id pair.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.n_users {
            return Err(Error::UnknownId(user as u64));
        }
        if item >= self.n_items {
            return Err(Error::UnknownId(item as u64));
        }
        Ok(sigmoid(self.forward(user, item).1))
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.user_table.data.as_slice(), self.item_table.data.as_slice()];
        for layer in &self.head {
            out.push(layer.w.data.as_slice());
            out.push(layer.b.as_slice());
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.user_table.data.as_mut_slice(),
            self.item_table.data.as_mut_slice(),
        ];
        for layer in &mut self.head {
            out.push(layer.w.data.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out
    }

    /// SHA-256 of every parameter, for cheap equality checks across runs.
    pub fn params_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for t in self.tensors() {
            for v in t {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        let mut hex = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(hex, "{byte:02x}").unwrap();
        }
        hex
    }

    /// Minibatch Adam on binary cross-entropy. Returns the mean loss of the
    /// final epoch. Non-finite loss aborts with the failing step index.
    pub fn fit(&mut self, examples: &[IdExample], seed: u64) -> Result<f64> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("id classifier training set".into()));
        }
        for (i, ex) in examples.iter().enumerate() {
            if ex.user >= self.n_users || ex.item >= self.n_items {
                return Err(Error::config(format!(
                    "example {i} references an id outside the tables"
                )));
            }
            if !(0.0..=1.0).contains(&ex.target) {
                return Err(Error::config(format!("example {i} target must lie in [0, 1]")));
            }
        }

        let sizes: Vec<usize> = self.tensors().iter().map(|t| t.len()).collect();
        let mut opt = AdamState::new(AdamConfig::default(), &sizes)?;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut grad_user = Matrix::zeros(self.n_users, self.config.embedding_dim);
        let mut grad_item = Matrix::zeros(self.n_items, self.config.embedding_dim);
        let mut grad_head: Vec<DenseLayer> = self
            .head
            .iter()
            .map(|l| DenseLayer {
                w: Matrix::zeros(l.w.rows, l.w.cols),
                b: vec![0.0; l.b.len()],
            })
            .collect();

        let mut step = 0usize;
        let mut last_epoch_loss = 0.0;
        for epoch in 0..self.config.epochs {
            let mut rng = seeding::rng(seeding::derive_tagged(seed, "idmlp-shuffle"), epoch as u64);
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut epoch_n = 0usize;
            for chunk in order.chunks(self.config.batch_size) {
                for g in &mut grad_user.data {
                    *g = 0.0;
                }
                for g in &mut grad_item.data {
                    *g = 0.0;
                }
                for layer in &mut grad_head {
                    for g in &mut layer.w.data {
                        *g = 0.0;
                    }
                    for g in &mut layer.b {
                        *g = 0.0;
                    }
                }

                let inv = 1.0 / chunk.len() as f64;
                let mut batch_loss = 0.0;
                for &idx in chunk {
                    let ex = examples[idx];
                    let (activations, logit) = self.forward(ex.user, ex.item);
                    let p = sigmoid(logit);
                    batch_loss += crate::model::loss::bce(p, ex.target);
                    let mut d_out = vec![(p - ex.target) * inv];
                    // Backprop through the head.
                    for li in (0..self.head.len()).rev() {
                        let layer = &self.head[li];
                        let input = &activations[li];
                        let g = &mut grad_head[li];
                        for (r, &dz) in d_out.iter().enumerate() {
                            g.b[r] += dz;
                            let row =
                                &mut g.w.data[r * layer.w.cols..(r + 1) * layer.w.cols];
                            for (gw, x) in row.iter_mut().zip(input) {
                                *gw += dz * x;
                            }
                        }
                        let mut d_in = vec![0.0; layer.w.cols];
                        for (r, &dz) in d_out.iter().enumerate() {
                            for (di, w) in d_in.iter_mut().zip(layer.w.row(r)) {
                                *di += dz * w;
                            }
                        }
                        if li > 0 {
                            for (di, x) in d_in.iter_mut().zip(input) {
                                if *x <= 0.0 {
                                    *di = 0.0;
                                }
                            }
                        }
                        d_out = d_in;
                    }
                    // d_out is now the gradient on [user_emb | item_emb].
                    let d = self.config.embedding_dim;
                    let urow =
                        &mut grad_user.data[ex.user * d..(ex.user + 1) * d];
                    for (g, v) in urow.iter_mut().zip(&d_out[..d]) {
                        *g += v;
                    }
                    let irow =
                        &mut grad_item.data[ex.item * d..(ex.item + 1) * d];
                    for (g, v) in irow.iter_mut().zip(&d_out[d..]) {
                        *g += v;
                    }
                }

                let batch_mean = batch_loss * inv;
                if !batch_mean.is_finite() {
                    return Err(Error::Divergence { step });
                }
                epoch_loss += batch_loss;
                epoch_n += chunk.len();

                let mut grads: Vec<&[f64]> =
                    vec![grad_user.data.as_slice(), grad_item.data.as_slice()];
                for layer in &grad_head {
                    grads.push(layer.w.data.as_slice());
                    grads.push(layer.b.as_slice());
                }
                let lr = self.config.learning_rate;
                let mut params = self.tensors_mut();
                opt.step(&mut params, &grads, lr)?;
                step += 1;
            }
            last_epoch_loss = epoch_loss / epoch_n as f64;
        }
        Ok(last_epoch_loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy_examples(n_users: usize, n_items: usize, seed: u64) -> Vec<IdExample> {
        // Planted structure: even users like even items, odd users like odd
        // items. Perfectly learnable from ids alone.
        let mut rng = seeding::rng_tagged(seed, "idmlp-test");
        let mut examples = Vec::new();
        for _ in 0..600 {
            let user = rng.random_range(0..n_users);
            let item = rng.random_range(0..n_items);
            let target = if user % 2 == item % 2 { 1.0 } else { 0.0 };
            examples.push(IdExample { user, item, target });
        }
        examples
    }

    #[test]
    fn learns_planted_id_structure() {
        let cfg = IdMlpConfig {
            embedding_dim: 8,
            hidden: vec![16],
            learning_rate: 5e-3,
            epochs: 30,
            batch_size: 64,
        };
        let mut model = IdMlpClassifier::init(cfg, 20, 30, 3).unwrap();
        let examples = toy_examples(20, 30, 1);
        let loss = model.fit(&examples, 9).unwrap();
        assert!(loss < 0.25, "final loss {loss}");
        // Check predictions follow the parity rule on seen ids.
        let mut correct = 0;
        let mut total = 0;
        for ex in &examples {
            let p = model.predict(ex.user, ex.item).unwrap();
            if (p > 0.5) == (ex.target > 0.5) {
                correct += 1;
            }
            total += 1;
        }
        assert!(correct as f64 / total as f64 > 0.9);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let cfg = IdMlpConfig {
                embedding_dim: 4,
                hidden: vec![8],
                learning_rate: 1e-2,
                epochs: 3,
                batch_size: 32,
            };
            let mut model = IdMlpClassifier::init(cfg, 10, 10, 5).unwrap();
            model.fit(&toy_examples(10, 10, 2), 11).unwrap();
            model.params_digest()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn init_is_seed_dependent_only() {
        let cfg = IdMlpConfig::default();
        let a = IdMlpClassifier::init(cfg.clone(), 5, 7, 1).unwrap();
        let b = IdMlpClassifier::init(cfg.clone(), 5, 7, 1).unwrap();
        let c = IdMlpClassifier::init(cfg, 5, 7, 2).unwrap();
        assert_eq!(a.params_digest(), b.params_digest());
        assert_ne!(a.params_digest(), c.params_digest());
    }

    #[test]
    fn out_of_range_ids_are_errors() {
        let model = IdMlpClassifier::init(IdMlpConfig::default(), 5, 7, 1).unwrap();
        assert!(matches!(model.predict(5, 0), Err(Error::UnknownId(5))));
        assert!(matches!(model.predict(0, 7), Err(Error::UnknownId(7))));
        let mut model = model;
        let bad = vec![IdExample {
            user: 9,
            item: 0,
            target: 1.0,
        }];
        assert!(model.fit(&bad, 0).is_err());
    }

    #[test]
    fn huge_learning_rate_diverges_cleanly() {
        let cfg = IdMlpConfig {
            learning_rate: 1e12,
            epochs: 8,
            ..Default::default()
        };
        let mut model = IdMlpClassifier::init(cfg, 10, 10, 1).unwrap();
        match model.fit(&toy_examples(10, 10, 3), 1) {
            Err(e) => assert!(e.is_numerical(), "unexpected error {e}"),
            // Adam's per-coordinate normalization can survive even absurd
            // rates; if it does, the loss must at least still be finite.
            Ok(loss) => assert!(loss.is_finite()),
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let mut model = IdMlpClassifier::init(IdMlpConfig::default(), 3, 3, 1).unwrap();
        assert!(matches!(
            model.fit(&[], 0),
            Err(Error::EmptyInput(_))
        ));
    }
}
