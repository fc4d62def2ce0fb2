//! Configuration, full pipeline runs, and ablation grids.

mod config;
mod grid;
mod run;

pub use config::{is_known_key, parse_ini, ConfigError, DatasetSource, ExperimentConfig, ToySpec};
pub use grid::{run_grid, AblationGrid, Axis, Cell, GridRow, GRID_SUMMARY_FILE};
pub use run::{
    balance_clients, balance_config, fed_config, load_data, noise_generator, partition_clients,
    run_experiment, run_pipeline, supplement_targets, ExperimentError, ExperimentResult,
    LoadedData, METRICS_FILE, SUMMARY_FILE, SUMMARY_HEADER,
};
