//! Correlation metrics, experiment sweeps and report rendering.

pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{run_experiment, ExperimentConfig, HeadModelSpec, SessionSpec};
pub use metrics::pearson_cv;
pub use report::{emit_report, AggregateRow, AxisStats, CellFailure, CvResult, Domain, ModelKind, ReportTable};
