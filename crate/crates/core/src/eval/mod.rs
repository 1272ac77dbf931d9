//! Cross-validation, error metrics, clustering and cohort statistics.

pub mod cv;
pub mod folds;
pub mod kmeans;
pub mod metrics;
pub mod report;
pub mod stats;

pub use cv::{causal_history, run_cv, CvConfig, EvalReport, FoldResult};
pub use folds::{kfold_split, FoldPlan};
pub use kmeans::{kmeans, KMeansResult};
pub use metrics::{classification_metrics, mae, ClassificationMetrics, Confusion, Summary};
pub use stats::{group_stats, window_diff_stats, GroupStats, TrajectoryPoint, WindowDiffStats};
