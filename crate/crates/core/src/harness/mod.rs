//! Experiment orchestration: sweeps over schemes, SNRs and seeds, cost
//! accounting, and report emission.

mod cost;
mod plan;
mod report;
mod sweep;

pub use cost::{
    estimate_complexity, estimate_energy, measure_latency, ComplexityParams, LatencyStats,
};
pub use plan::{BUNDLE_FILES, bytes_hash, json_hash, DataSource, ExperimentPlan, LatencySettings, TrainSettings};
pub use report::{
    emit_report, metrics_csv, ReportFiles, F1_PLOT, METRICS_COLUMNS, METRICS_FILE, RE_PLOT,
    SUMMARY_FILE,
};
pub use sweep::{
    build_predictor, evaluate_cell, load_cells, obtain_checkpoint, prepare_data, raw_dir,
    regenerate_report, run_sweep, scheme_config, sort_cells, train_scheme, training_seconds, CellRecord,
    ObservedCell, PreparedData, Provenance, ReportRow, SchemeConfig,
};
