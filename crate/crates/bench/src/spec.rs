use std::fmt;
use std::str::FromStr;

use jarve_core::music2d::LmSettings;
use jarve_core::pipeline::{DftOptions, PipelineOptions};
use jarve_core::scenario::{validate, Scenario, SmoothingConfig, SystemConfig};

use crate::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Estimator {
    Pi2dMusic,
    Dft3d,
    /// Exhaustive 3D-MUSIC search in a box around each true target.
    GridOracle,
}

impl Estimator {
    pub const ALL: [Estimator; 3] = [Estimator::Pi2dMusic, Estimator::Dft3d, Estimator::GridOracle];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::Pi2dMusic => "pi2dmusic",
            Estimator::Dft3d => "dft3d",
            Estimator::GridOracle => "grid_oracle",
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Estimator {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s.trim())
            .ok_or_else(|| BenchError::Config(format!("unknown estimator {s:?} (pi2dmusic, dft3d, grid_oracle)")))
    }
}

/// Window sizes for the smoothing, possibly derived from the array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SmoothingChoice {
    /// (6, 40, 25).
    Rmse,
    /// (3L/4, N/10, 3M/8).
    Timing,
    Explicit(SmoothingConfig),
}

impl SmoothingChoice {
    pub fn resolve(&self, config: &SystemConfig) -> SmoothingConfig {
        match self {
            SmoothingChoice::Rmse => SmoothingConfig::rmse_preset(),
            SmoothingChoice::Timing => SmoothingConfig::timing_preset(config),
            SmoothingChoice::Explicit(c) => *c,
        }
    }
}

impl FromStr for SmoothingChoice {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "rmse" => Ok(SmoothingChoice::Rmse),
            "timing" => Ok(SmoothingChoice::Timing),
            other => {
                let parts: Vec<usize> = other
                    .split(',')
                    .map(|p| p.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| BenchError::Config(format!("smoothing {other:?}: expected rmse, timing or L,N,M")))?;
                match parts[..] {
                    [l, n, m] => Ok(SmoothingChoice::Explicit(SmoothingConfig::new(l, n, m))),
                    _ => Err(BenchError::Config(format!("smoothing {other:?}: expected three window sizes"))),
                }
            }
        }
    }
}

/// Parses `a,b,c` or `start:stop:step` (inclusive) into a sorted SNR list.
pub fn parse_snr_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || BenchError::Config(format!("snr grid {s:?}: expected a,b,c or start:stop:step"));
    let num = |p: &str| p.trim().parse::<f64>().map_err(|_| bad());
    let grid = if s.contains(':') {
        let parts: Vec<f64> = s.split(':').map(num).collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else { return Err(bad()) };
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|i| start + step * i as f64).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<f64>>>()?
    };
    Ok(grid)
}

/// One Monte Carlo experiment.
#[derive(Debug, Clone)]
pub struct RunSpec {
    /// Targets and array; its own SNR is replaced by each grid value.
    pub scenario: Scenario,
    pub estimators: Vec<Estimator>,
    pub snr_grid_db: Vec<f64>,
    pub trials: usize,
    pub master_seed: u64,
    pub smoothing: SmoothingChoice,
    pub pipeline: PipelineOptions,
    pub dft: DftOptions,
    /// Oracle box half-width in Rayleigh cells and grid points per cell.
    pub oracle_half_width: f64,
    pub oracle_points_per_cell: usize,
    /// Worker threads; 0 uses the rayon default.
    pub workers: usize,
    /// Record mean wall times. Off keeps the CSV independent of the
    /// machine and the worker count.
    pub record_time: bool,
    /// Failure fraction above which the CLI exits with status 3.
    pub max_failure_fraction: f64,
}

impl RunSpec {
    pub fn new(scenario: Scenario) -> Self {
        RunSpec {
            scenario,
            estimators: vec![Estimator::Pi2dMusic, Estimator::Dft3d],
            snr_grid_db: vec![-10.0, 0.0, 10.0],
            trials: 200,
            master_seed: 1,
            smoothing: SmoothingChoice::Rmse,
            pipeline: PipelineOptions::default(),
            dft: DftOptions::default(),
            oracle_half_width: 0.5,
            oracle_points_per_cell: 20,
            workers: 0,
            record_time: false,
            max_failure_fraction: 0.05,
        }
    }

    pub fn lm(&self) -> &LmSettings {
        &self.pipeline.lm
    }

    pub fn smoothing_config(&self) -> SmoothingConfig {
        self.smoothing.resolve(&self.scenario.config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(BenchError::Config("trials must be at least 1".into()));
        }
        if self.snr_grid_db.is_empty() {
            return Err(BenchError::Config("empty SNR grid".into()));
        }
        if !self.snr_grid_db.windows(2).all(|w| w[0] < w[1]) {
            return Err(BenchError::Config("SNR grid must be strictly increasing".into()));
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return Err(BenchError::Config("SNR grid contains NaN".into()));
        }
        if self.estimators.is_empty() {
            return Err(BenchError::Config("no estimators selected".into()));
        }
        if !(self.oracle_half_width > 0.0) || self.oracle_points_per_cell == 0 {
            return Err(BenchError::Config("oracle box must be non-empty".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_fraction) {
            return Err(BenchError::Config("failure fraction limit must lie in [0, 1]".into()));
        }
        self.pipeline.lm.validate()?;
        let sm = self.smoothing_config();
        validate(&self.scenario, Some(&sm)).into_result()?;
        Ok(())
    }
}
