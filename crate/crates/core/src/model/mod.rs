//! Model layer: the two-tower network, its objectives, optimization, and
//! persistence, plus the id-only classifier used by the feedback-loop study.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod idmlp;
pub mod loss;
pub mod tower;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use gradcheck::{check_gradients, GradCheckReport};
pub use idmlp::{IdExample, IdMlpClassifier, IdMlpConfig};
pub use loss::{
    bce, bce_logit_grad, pointwise_loss, pointwise_loss_grad, triplet_loss, triplet_loss_grad,
    PairBatch, PairExample, TripletBatch, TripletConfig, TripletExample,
};
pub use tower::{
    Embedding, ModelConfig, ModelGrads, TowerConfig, TowerParams, DEFAULT_EMBEDDING_DIM,
    DEFAULT_HIDDEN,
};
