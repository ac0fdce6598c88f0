//! Seeded simulation studies: plans, execution, metrics and CSV outputs.

mod metrics;
mod output;
mod plan;
mod run;

pub use metrics::{group_metrics, in_sample_delta, summarize, GroupMetrics, SummaryRow};
pub use output::{
    emit_outputs, plot_rows, read_table, write_summary, write_table, CsvRecord, PlotRow, FAILURES_FILE,
    RESULTS_FILE, SUMMARY_FILE, TIMINGS_FILE,
};
pub use plan::{
    ExperimentPlan, MdcSettings, Method, MethodSettings, MfSettings, MiSettings, MiwaeSettings, NuisanceSettings,
    Scenario, ScenarioGrid, REGULARIZED_LAMBDA_PER_ROW,
};
pub use run::{
    check_output_dir, evaluate_dataset, run_plan, FailureRow, MethodEstimate, MethodOutcome, ResultRow, RunOutput,
    TimingRow,
};
