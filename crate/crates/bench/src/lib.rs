//! Monte Carlo RMSE sweeps, timing comparisons and CSV output for the
//! JARVE estimators.

pub mod output;
pub mod spec;
pub mod sweep;
pub mod timing;

pub use output::{emit_csv, emit_dat, emit_timing_csv, read_csv, CSV_HEADER, TIMING_HEADER};
pub use spec::{Estimator, RunSpec, SmoothingChoice};
pub use sweep::{failure_excess, run_sweep, RmseRow};
pub use timing::{run_timing, TimingRow};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] jarve_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, BenchError>;
