//! Scenario files, experiment runs, metrics and CSV output.

mod metrics;
mod run;
mod scenario;
mod train;

pub use metrics::{
    across_runs, fct, goodput, goodput_series, jain_index, latency_violation, start_time, summarize, FlowTime,
    MetricLog, MetricRow, MetricsError, Summary, CSV_HEADER,
};
pub use run::{run_scenario, RunError, RunOutput};
pub use scenario::{
    emit_scenario, load_scenario, parse_scenario, Algorithm, Competitor, RewardOverrides, Scenario, ScenarioError,
    Sweep, SweepParam,
};
pub use train::{train, train_from, TrainOutcome};
