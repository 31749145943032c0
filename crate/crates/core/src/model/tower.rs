//! Two-tower co-embedding model.
//!
//! Each tower is a fully connected ReLU network whose last linear output is
//! L2-normalized onto the unit sphere, so query/candidate affinity is exactly
//! the cosine of the two embeddings. A learnable calibration pair `(s0, b0)`
//! maps cosine onto a probability: `score = sigmoid(s0 * cos + b0)`. Without
//! it a plain `sigmoid(cos)` could only produce values in
//! `[sigmoid(-1), sigmoid(1)]`, far too narrow to calibrate against binary
//! labels.
//!
//! All math is `f64`, all loops run in a fixed order, and initialization is
//! seeded, so identical configs reproduce identical parameters and outputs.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Problems, Result};
use crate::seeding;
use crate::vecmath::{dot, sigmoid, EPS_NORM};

/// Shape of one tower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TowerConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub embedding_dim: usize,
}

impl TowerConfig {
    pub fn new(input_dim: usize, hidden: Vec<usize>, embedding_dim: usize) -> Self {
        TowerConfig {
            input_dim,
            hidden,
            embedding_dim,
        }
    }

    pub fn validate(&self, tower: &str) -> Result<()> {
        let mut p = Problems::new();
        p.require(
            self.input_dim >= 1,
            format!("{tower}.input_dim must be >= 1"),
        );
        p.require(
            self.embedding_dim >= 2,
            format!("{tower}.embedding_dim must be >= 2"),
        );
        for (i, h) in self.hidden.iter().enumerate() {
            p.require(*h >= 1, format!("{tower}.hidden[{i}] must be >= 1"));
        }
        p.into_result()
    }

    /// Layer dimensions: `input -> hidden... -> embedding`.
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden {
            dims.push((h, prev));
            prev = h;
        }
        dims.push((self.embedding_dim, prev));
        dims
    }
}

/// Full model shape: both towers plus the calibration initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub query: TowerConfig,
    pub candidate: TowerConfig,
    /// Initial value of the calibration scale `s0`; must be > 0.
    #[serde(default = "default_scale_init")]
    pub calibration_scale_init: f64,
    /// Initial value of the calibration bias `b0`.
    #[serde(default)]
    pub calibration_bias_init: f64,
}

fn default_scale_init() -> f64 {
    5.0
}

pub const DEFAULT_HIDDEN: [usize; 2] = [128, 64];
pub const DEFAULT_EMBEDDING_DIM: usize = 32;

impl ModelConfig {
    /// Both towers share hidden sizes and embedding dim; only inputs differ.
    pub fn symmetric(
        query_dim: usize,
        candidate_dim: usize,
        hidden: &[usize],
        embedding_dim: usize,
    ) -> Self {
        ModelConfig {
            query: TowerConfig::new(query_dim, hidden.to_vec(), embedding_dim),
            candidate: TowerConfig::new(candidate_dim, hidden.to_vec(), embedding_dim),
            calibration_scale_init: default_scale_init(),
            calibration_bias_init: 0.0,
        }
    }

    pub fn with_defaults(query_dim: usize, candidate_dim: usize) -> Self {
        Self::symmetric(
            query_dim,
            candidate_dim,
            &DEFAULT_HIDDEN,
            DEFAULT_EMBEDDING_DIM,
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.query.validate("query")?;
        self.candidate.validate("candidate")?;
        let mut p = Problems::new();
        p.require(
            self.query.embedding_dim == self.candidate.embedding_dim,
            "towers must share embedding_dim",
        );
        p.require(
            self.calibration_scale_init > 0.0 && self.calibration_scale_init.is_finite(),
            "calibration_scale_init must be > 0",
        );
        p.require(
            self.calibration_bias_init.is_finite(),
            "calibration_bias_init must be finite",
        );
        p.into_result()
    }
}

/// A unit-norm embedding (`||e||_2 = 1` within 1e-6).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub(crate) Vec<f64>);

impl Embedding {
    /// Wraps a vector after checking the unit-norm invariant.
    pub fn try_from_unit(v: Vec<f64>) -> Result<Self> {
        let deviation = (crate::vecmath::norm(&v) - 1.0).abs();
        if deviation > 1e-6 {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(Embedding(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn cosine(&self, other: &Embedding) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `y = W x + b`
    fn affine(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        let mut y = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            y.push(dot(self.row(r), x) + b[r]);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// One tower's parameters: hidden ReLU layers followed by a linear projection
/// whose output is L2-normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerNet {
    pub layers: Vec<DenseLayer>,
}

impl TowerNet {
    pub fn zeros(config: &TowerConfig) -> Self {
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(out, inp)| DenseLayer {
                w: Matrix::zeros(out, inp),
                b: vec![0.0; out],
            })
            .collect();
        TowerNet { layers }
    }

    /// He-style initialization: `W ~ N(0, 2 / fan_in)`, biases zero.
    fn init(config: &TowerConfig, seed: u64) -> Self {
        let mut rng = seeding::rng_tagged(seed, "tower-init");
        let mut net = Self::zeros(config);
        for layer in &mut net.layers {
            let std = (2.0 / layer.w.cols as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("he init");
            for w in &mut layer.w.data {
                *w = dist.sample(&mut rng);
            }
        }
        net
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.data.len() + l.b.len())
            .sum()
    }
}

/// Cached intermediate state of one forward pass, consumed by `backward`.
pub struct TowerCache {
    /// `activations[0]` is the input; `activations[i]` the output of hidden
    /// layer `i` after ReLU.
    activations: Vec<Vec<f64>>,
    /// True norm of the final linear output (before the `EPS_NORM` floor).
    norm: f64,
    pub embedding: Vec<f64>,
}

pub fn forward_tower(net: &TowerNet, input: &[f64]) -> TowerCache {
    let n_layers = net.layers.len();
    let mut activations = Vec::with_capacity(n_layers);
    activations.push(input.to_vec());
    for layer in &net.layers[..n_layers - 1] {
        let mut z = layer.w.affine(activations.last().unwrap(), &layer.b);
        for v in &mut z {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        activations.push(z);
    }
    let last = &net.layers[n_layers - 1];
    let prenorm = last.w.affine(activations.last().unwrap(), &last.b);
    let norm = crate::vecmath::norm(&prenorm);
    let div = norm.max(EPS_NORM);
    let embedding: Vec<f64> = prenorm.iter().map(|v| v / div).collect();
    TowerCache {
        activations,
        norm,
        embedding,
    }
}

/// Backpropagates `d_embedding` through the tower, accumulating parameter
/// gradients into `grads` (shaped by [`TowerNet::zeros`]).
pub fn backward_tower(net: &TowerNet, cache: &TowerCache, d_embedding: &[f64], grads: &mut TowerNet) {
    // Through the normalization y = z / max(||z||, eps):
    // above the floor dz = (dy - y <y, dy>) / ||z||, below it dz = dy / eps.
    let mut d_z: Vec<f64> = if cache.norm > EPS_NORM {
        let y_dot = dot(&cache.embedding, d_embedding);
        cache
            .embedding
            .iter()
            .zip(d_embedding)
            .map(|(y, dy)| (dy - y * y_dot) / cache.norm)
            .collect()
    } else {
        d_embedding.iter().map(|dy| dy / EPS_NORM).collect()
    };

    // Walk layers backwards. The final layer is linear; hidden layers gate
    // through ReLU (derivative 0 at exactly 0).
    for (li, layer) in net.layers.iter().enumerate().rev() {
        let input = &cache.activations[li];
        let g = &mut grads.layers[li];
        for r in 0..layer.w.rows {
            let dzr = d_z[r];
            g.b[r] += dzr;
            let grow = &mut g.w.data[r * layer.w.cols..(r + 1) * layer.w.cols];
            for (gw, x) in grow.iter_mut().zip(input) {
                *gw += dzr * x;
            }
        }
        if li == 0 {
            break;
        }
        // d_input = W^T d_z, gated by the ReLU that produced `input`.
        let mut d_in = vec![0.0; layer.w.cols];
        for r in 0..layer.w.rows {
            let dzr = d_z[r];
            let row = layer.w.row(r);
            for (di, w) in d_in.iter_mut().zip(row) {
                *di += dzr * w;
            }
        }
        for (di, x) in d_in.iter_mut().zip(input) {
            if *x <= 0.0 {
                *di = 0.0;
            }
        }
        d_z = d_in;
    }
}

/// Full model parameters: both towers plus the learnable calibration pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TowerParams {
    pub config: ModelConfig,
    pub query: TowerNet,
    pub candidate: TowerNet,
    /// Calibration scale on cosine; initialized > 0.
    pub s0: f64,
    /// Calibration bias.
    pub b0: f64,
}

impl TowerParams {
    /// Seeded initialization. The two towers draw from independent streams.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(TowerParams {
            query: TowerNet::init(&config.query, seeding::derive_tagged(seed, "query")),
            candidate: TowerNet::init(&config.candidate, seeding::derive_tagged(seed, "candidate")),
            s0: config.calibration_scale_init,
            b0: config.calibration_bias_init,
            config: config.clone(),
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.config.query.embedding_dim
    }

    fn embed(&self, net: &TowerNet, expected_dim: usize, features: &[f64]) -> Result<Embedding> {
        if features.len() != expected_dim {
            return Err(Error::DimensionMismatch {
                expected: expected_dim,
                got: features.len(),
            });
        }
        Ok(Embedding(forward_tower(net, features).embedding))
    }

    pub fn embed_query(&self, features: &[f64]) -> Result<Embedding> {
        self.embed(&self.query, self.config.query.input_dim, features)
    }

    pub fn embed_candidate(&self, features: &[f64]) -> Result<Embedding> {
        self.embed(&self.candidate, self.config.candidate.input_dim, features)
    }

    /// Engagement probability for a pair of embeddings:
    /// `sigmoid(s0 * cos + b0)`.
    pub fn score(&self, query: &Embedding, candidate: &Embedding) -> f64 {
        sigmoid(self.s0 * query.cosine(candidate) + self.b0)
    }

    pub fn n_params(&self) -> usize {
        self.query.n_params() + self.candidate.n_params() + 2
    }

    /// All parameter tensors in canonical order: query layers (weights then
    /// bias, input to output), candidate layers, then calibration `[s0, b0]`
    /// as two singleton tensors. The optimizer and the checkpoint format both
    /// fix this order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.query.layers.iter().chain(&self.candidate.layers) {
            out.push(layer.w.data.as_slice());
            out.push(layer.b.as_slice());
        }
        out.push(std::slice::from_ref(&self.s0));
        out.push(std::slice::from_ref(&self.b0));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self
            .query
            .layers
            .iter_mut()
            .chain(self.candidate.layers.iter_mut())
        {
            out.push(layer.w.data.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out.push(std::slice::from_mut(&mut self.s0));
        out.push(std::slice::from_mut(&mut self.b0));
        out
    }
}

/// Gradient (or moment) container shaped like [`TowerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub query: TowerNet,
    pub candidate: TowerNet,
    pub s0: f64,
    pub b0: f64,
}

impl ModelGrads {
    pub fn zeros_like(params: &TowerParams) -> Self {
        ModelGrads {
            query: TowerNet::zeros(&params.config.query),
            candidate: TowerNet::zeros(&params.config.candidate),
            s0: 0.0,
            b0: 0.0,
        }
    }

    /// Same canonical tensor order as [`TowerParams::tensors`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for layer in self.query.layers.iter().chain(&self.candidate.layers) {
            out.push(layer.w.data.as_slice());
            out.push(layer.b.as_slice());
        }
        out.push(std::slice::from_ref(&self.s0));
        out.push(std::slice::from_ref(&self.b0));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for layer in self
            .query
            .layers
            .iter_mut()
            .chain(self.candidate.layers.iter_mut())
        {
            out.push(layer.w.data.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out.push(std::slice::from_mut(&mut self.s0));
        out.push(std::slice::from_mut(&mut self.b0));
        out
    }

    /// Accumulates `other` into `self`.
    pub fn add_assign(&mut self, other: &ModelGrads) {
        let others = other.tensors();
        for (mine, theirs) in self.tensors_mut().into_iter().zip(others) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += *t;
            }
        }
    }

    /// Multiplies every gradient by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for g in t.iter_mut() {
                *g *= factor;
            }
        }
    }
}
