//! Training loop, evaluation, γ sweeps, reports and the command-line front end.

pub mod cli;
mod eval;
mod report;
mod sweep;
mod train;

pub use eval::{evaluate, kl_divergence, predict_split, report_from_predictions, EvalReport, QtypeReport};
pub use report::{emit_report, read_report, ReportFormat, ReportSet, RunRecord, CSV_COLUMNS};
pub use sweep::{sweep_gamma, sweep_records, train_and_evaluate, SplitSet, SweepRow};
pub use train::{argmax, train, ComponentGradients, EpochLog, RunLog, TrainConfig, Trainer};
