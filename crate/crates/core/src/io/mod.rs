//! Data ingestion, synthetic data, configuration and output writers.

mod config;
mod simulate;
mod table;

pub use config::{
    AnalysisConfig, CompareSection, DataSource, Engine, MlSection, ModelEntry, OutputSection, PriorOverrides,
    SensitivitySection, SimulateSection, DEFAULT_SEED,
};
pub use simulate::{default_scenario, simulate, TrueParams, DEFAULT_GROUP_SIZES, INCOME_COLUMN, SIZE_COLUMN, SIZE_LEVELS};
pub use table::{dataset_to_csv, load_csv, marginal_to_csv, parse_csv, write_atomic, DataConfig};
