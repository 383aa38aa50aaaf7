//! End-to-end pipelines behind the command line: training runs, sweeps,
//! gradient-check suites and the reports they leave behind.

mod gradcheck;
mod report;
mod run;
mod sweep;

pub use gradcheck::{
    gradcheck_suite, CheckCase, GradcheckSummary, ModuleCoverage, WorstEntry, GRADCHECK_TOLERANCE, MODULES,
};
pub use report::{epoch_table, metrics_table, sweep_table, write_report, ReportPaths};
pub use run::{
    eval_run, git_describe, train_run, Ablation, RunConfig, RunReport, SplitSizes, TrainedRun, FULL_LABEL, NO_GNN_LABEL,
};
pub use sweep::{run_sweep, CellOutcome, SweepAxis, SweepCell, SweepGrid, SweepReport};
