//! Overlap metrics, benchmark runs and ablation tables.

pub mod ablation;
pub mod benchmark;
pub mod metrics;

pub use ablation::{
    ablation_report, mean_sd, train_and_evaluate, AblationReport, AblationRow, AblationSetup, ModelSizes,
};
pub use benchmark::{
    run_benchmark, write_overlay, BenchmarkReport, CandidateScorer, IouOracle, ModelScorer, RunLabel, SceneResult,
};
pub use metrics::{acc_at_k, iou, AccAtK, IOU_THRESHOLD};
