//! Model quality measurement: ranking metrics over labeled scores and
//! retrieval metrics over exact nearest-neighbor scans.

pub mod knn;
pub mod metrics;

pub use knn::{
    knn_eval, language_mismatch_rate, popularity_recommendation_pearson, reference, CoEmbedder,
    KnnEvalConfig, KnnEvalSummary,
};
pub use metrics::{grouped_roc_auc, pearson, roc_auc, spearman, GroupedAuc, ScoredExample};
