//! End-to-end experiment drivers: data bundling, training, fine-tuning,
//! grid sweeps, the feedback-loop study, and the three-model comparison.
//!
//! Every driver consumes a validated config, runs deterministically from its
//! seed, and returns an [`ExperimentReport`](report::ExperimentReport) whose
//! serialized form is byte-identical across reruns.

pub mod bias;
pub mod bundle;
pub mod report;
pub mod sweeps;
pub mod train;
pub mod triad;

pub use bias::{
    run_bias_simulation, synthetic_bias_records, BiasRow, BiasSimConfig, BiasSimOutcome,
    SyntheticBiasConfig,
};
pub use bundle::{BundleConfig, DataBundle};
pub use report::{ExperimentReport, ReportRow, ReportValue};
pub use sweeps::{elbow_t, sweep_negative_ratio, sweep_popularity_t};
pub use train::{
    evaluate_records, evaluate_suite, fine_tune, fine_tune_params, train, train_on_implicit,
    EvalSuite, FineTuneConfig, FineTuneOptions, FineTuneOutcome, LossKind, RecordEval,
    TrainConfig, TrainOutcome,
};
pub use triad::{run_model_triad, run_model_triad_on, TriadConfig, TriadModel, TriadOutcome};
