//! Classification metrics, cross-validated experiments, significance tests
//! and error analyses.

mod analysis;
mod cv;
mod metrics;
mod stats;

pub use analysis::{
    distance_bucket_accuracy, group_analysis, intra_inter_ratio, BucketAccuracy, GroupReport,
};
pub use cv::{
    evaluate, fit_and_evaluate, plan_folds, run_cv, CVResult, Evaluation, FoldPlan, FoldSummary,
    RunRecord,
};
pub use metrics::{binary_auc, compute_metrics, ClassMetrics, Metrics, Scores};
pub use stats::{
    compare_models, mann_whitney_u, midranks, paired_t, MannWhitney, TestMethod, EXACT_LIMIT,
};
