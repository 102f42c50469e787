//! Leakage-safe temporal feature engineering for hour-resolution
//! impression/click logs.
//!
//! Every feature for a row in hour `H` is computed from history strictly
//! before `H`. Rows of the same hour never see each other's labels.

pub mod error;
pub mod evalreport;
pub mod featurize;
pub mod folds;
pub mod ingest;
pub mod learner;
pub mod matrix;
pub mod metrics;
pub mod synthgen;
pub mod te;
pub mod timeagg;

pub use error::{Error, Result};
pub use evalreport::{report, run_sweep, CellSpec, ReportOptions, SpecGrid, SweepSummary};
pub use featurize::{expected_feature_count, feature_names, featurize_fold, FeatureConfig};
pub use folds::{build_fold, FoldAssignment, HourRange, Split, SplitStats};
pub use ingest::{DayIndex, EventLog, HourIndex, ImpressionEvent, LogSchema, LogStats};
pub use learner::{fit, FittedModel, LearnerConfig};
pub use matrix::{FeatureMatrix, SplitTag};
pub use metrics::{pr_auc, roc_auc, Interval, Metric, Predictions};
pub use te::{te_pass, Counts, TeFeatures, TeParams};
pub use synthgen::{generate, SynthConfig, SynthLog};
pub use timeagg::{Shape, TimeAggConfig, TimeAggEngine, WindowSpec};
