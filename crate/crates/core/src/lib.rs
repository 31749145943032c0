//! Deterministic laboratory for studying presentation bias in two-tower
//! candidate generation.
//!
//! The crate builds a synthetic engagement world with known ground truth,
//! replays a logging policy over it, trains two-tower co-embedding models on
//! the logged data under different negative-sampling schemes, and measures
//! how far each model drifts from the truth. Every stage is seeded and every
//! parallel reduction runs in a fixed order, so identical configs produce
//! bit-identical artifacts.

pub mod ann;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod pipelines;
pub mod sampling;
pub mod seeding;
pub mod vecmath;

pub use ann::{HnswConfig, HnswIndex};
pub use dataset::{
    Candidate, GroundTruthWorld, Interaction, PolicyConfig, Provenance, Query, ServedLog,
    WorldConfig,
};
pub use error::{Error, Result};
pub use model::{
    Embedding, ModelConfig, TowerConfig, TowerParams, TripletConfig,
};
pub use pipelines::{
    BiasSimConfig, BundleConfig, DataBundle, ExperimentReport, FineTuneConfig, FineTuneOptions,
    LossKind, TrainConfig, TriadConfig,
};
pub use sampling::{PopularityWeightConfig, SamplerConfig, SamplerMode, Triplet};
