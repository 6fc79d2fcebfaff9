//! Scenario files, scene generation, suites and trend reports.
mod scenario;
mod scene;

pub use scenario::{ObjectSpec, Relocation, RobotSpec, Scenario, ScenarioError, Seeds, WorldSpec, SCENARIO_VERSION};
pub use scene::{failure_seed, generate_scene, GenerationError, SceneParams, TaskTemplate, ROOMS, ROOM_SIZE, TEAM};
mod suite;

pub use suite::{
    aggregate, bar_chart, rows_from_csv, rows_to_csv, run_suite, write_suite, Cell, CellAggregate, EpisodeRow, Matrix, SuiteError,
    SuiteResult, AGGREGATES_FILE, CSV_FILE,
};
mod trend;

pub use trend::{
    evaluate, registered_trends, sign_test, trend_report, Hypothesis, HypothesisOutcome, Metric, SignTest, Trend, TrendOutcome,
    TrendStatus, ALPHA, MIN_SEEDS,
};
