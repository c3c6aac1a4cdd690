use std::time::Instant;

use rayon::prelude::*;

use jarve_core::crb::crb_single_closed_form;
use jarve_core::pipeline::{associate, estimate_3d_dft, linear_grid, run_pi2dmusic, EstimateSet, MusicOracle};
use jarve_core::scenario::{Axis, Scenario, SmoothingConfig};
use jarve_core::signal::{synthesize, trial_seed, Observation};

use crate::spec::{Estimator, RunSpec};
use crate::{BenchError, Result};

/// One (estimator, SNR) cell of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct RmseRow {
    pub estimator: Estimator,
    pub snr_db: f64,
    pub rmse_theta_deg: f64,
    pub rmse_range_m: f64,
    pub rmse_velocity_mps: f64,
    pub rcrb_theta_deg: f64,
    pub rcrb_range_m: f64,
    pub rcrb_velocity_mps: f64,
    /// Mean estimator time per successful trial, synthesis excluded.
    pub mean_wall_time_s: Option<f64>,
    pub trials_used: usize,
    pub failures: usize,
}

impl RmseRow {
    pub fn rmse(&self) -> [f64; 3] {
        [self.rmse_theta_deg, self.rmse_range_m, self.rmse_velocity_mps]
    }

    pub fn rcrb(&self) -> [f64; 3] {
        [self.rcrb_theta_deg, self.rcrb_range_m, self.rcrb_velocity_mps]
    }

    pub fn failure_fraction(&self) -> f64 {
        self.failures as f64 / (self.trials_used + self.failures).max(1) as f64
    }
}

/// Largest failure fraction over `rows` if it exceeds `limit`.
pub fn failure_excess(rows: &[RmseRow], limit: f64) -> Option<f64> {
    let worst = rows.iter().map(RmseRow::failure_fraction).fold(0.0, f64::max);
    (worst > limit).then_some(worst)
}

/// Single-target bounds of each target at its own SNR, combined in the
/// root-mean-square sense; azimuth in degrees. NaN where the closed form
/// does not apply.
pub fn rcrb_rms(scenario: &Scenario) -> [f64; 3] {
    let c = &scenario.config;
    let applies = c.dims().iter().all(|&d| d >= 2)
        && c.noise_power > 0.0
        && scenario.targets.iter().all(|t| t.azimuth_deg.abs() < 90.0);
    if !applies || scenario.targets.is_empty() {
        return [f64::NAN; 3];
    }
    let mut acc = [0.0; 3];
    for t in &scenario.targets {
        let gamma = t.backscatter.norm_sqr() / c.noise_power;
        let crb = crb_single_closed_form(c, t, gamma);
        for k in 0..3 {
            acc[k] += crb[k];
        }
    }
    let u = scenario.targets.len() as f64;
    let r = acc.map(|x| (x / u).sqrt());
    [r[0].to_degrees(), r[1], r[2]]
}

/// Exhaustive search in a box of `half_width` Rayleigh cells around each
/// true target, one peak per box.
pub fn oracle_estimates(
    obs: &Observation,
    u: usize,
    smoothing: &SmoothingConfig,
    truth: &[[f64; 3]],
    half_width: f64,
    points_per_cell: usize,
) -> jarve_core::Result<EstimateSet> {
    let oracle = MusicOracle::new(obs, u, smoothing)?;
    let points = (2.0 * half_width * points_per_cell as f64).round() as usize + 1;
    let mut estimates = Vec::with_capacity(truth.len());
    for t in truth {
        let grids = Axis::ALL.map(|axis| {
            let h = half_width * obs.config.rayleigh(axis);
            let (mut lo, mut hi) = (t[axis.index()] - h, t[axis.index()] + h);
            if axis == Axis::Antenna {
                lo = lo.max(-89.999);
                hi = hi.min(89.999);
            }
            linear_grid(lo, hi, points)
        });
        estimates.push(oracle.search(&grids, 1)?[0]);
    }
    let n = estimates.len();
    Ok(EstimateSet {
        estimates,
        provenance: (0..n).map(|i| [i; 3]).collect(),
        flags: vec![Default::default(); n],
        diagnostics: None,
    })
}

/// Runs one estimator on one observation.
pub fn run_estimator(
    estimator: Estimator,
    obs: &Observation,
    spec: &RunSpec,
    smoothing: &SmoothingConfig,
    truth: &[[f64; 3]],
) -> jarve_core::Result<EstimateSet> {
    let u = truth.len();
    match estimator {
        Estimator::Pi2dMusic => run_pi2dmusic(obs, u, smoothing, &spec.pipeline),
        Estimator::Dft3d => estimate_3d_dft(obs, u, &spec.dft),
        Estimator::GridOracle => {
            oracle_estimates(obs, u, smoothing, truth, spec.oracle_half_width, spec.oracle_points_per_cell)
        }
    }
}

/// Per-parameter squared error summed over targets and divided by U, after
/// optimal association.
pub fn squared_errors(estimates: &[[f64; 3]], truth: &[[f64; 3]]) -> jarve_core::Result<[f64; 3]> {
    let p = associate(estimates, truth)?;
    let u = truth.len() as f64;
    let mut out = [0.0; 3];
    for (i, t) in truth.iter().enumerate() {
        for k in 0..3 {
            out[k] += (estimates[p[i]][k] - t[k]).powi(2) / u;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum Outcome {
    Done { sq: [f64; 3], secs: f64 },
    Failed,
}

/// Monte Carlo RMSE for every (estimator, SNR), rows ordered by estimator
/// as listed and then by SNR. Trials run on a pool of `spec.workers`
/// threads; every trial has its own seed and results are merged in trial
/// order, so rows do not depend on the worker count.
pub fn run_sweep(spec: &RunSpec) -> Result<Vec<RmseRow>> {
    spec.validate()?;
    let smoothing = spec.smoothing_config();
    let truth: Vec<[f64; 3]> = spec.scenario.targets.iter().map(|t| t.params()).collect();
    let items: Vec<(usize, usize)> =
        (0..spec.snr_grid_db.len()).flat_map(|g| (0..spec.trials).map(move |w| (g, w))).collect();
    let trial = |&(g, w): &(usize, usize)| -> Vec<Outcome> {
        let scenario = spec.scenario.with_snr_db(spec.snr_grid_db[g]);
        let obs = synthesize(&scenario, trial_seed(spec.master_seed, g as u64, w as u64));
        spec.estimators
            .iter()
            .map(|&e| {
                let start = Instant::now();
                let result = run_estimator(e, &obs, spec, &smoothing, &truth);
                let secs = start.elapsed().as_secs_f64();
                match result.and_then(|set| squared_errors(&set.estimates, &truth)) {
                    Ok(sq) if sq.iter().all(|x| x.is_finite()) => Outcome::Done { sq, secs },
                    _ => Outcome::Failed,
                }
            })
            .collect()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| BenchError::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Vec<Outcome>> = pool.install(|| items.par_iter().map(trial).collect());

    let mut rows = Vec::new();
    for (ei, &estimator) in spec.estimators.iter().enumerate() {
        for (g, &snr_db) in spec.snr_grid_db.iter().enumerate() {
            let mut sum = [0.0; 3];
            let mut secs = 0.0;
            let (mut used, mut failures) = (0, 0);
            for w in 0..spec.trials {
                match outcomes[g * spec.trials + w][ei] {
                    Outcome::Done { sq, secs: s } => {
                        used += 1;
                        secs += s;
                        for k in 0..3 {
                            sum[k] += sq[k];
                        }
                    }
                    Outcome::Failed => failures += 1,
                }
            }
            let rmse = sum.map(|s| if used > 0 { (s / used as f64).sqrt() } else { f64::NAN });
            let rcrb = rcrb_rms(&spec.scenario.with_snr_db(snr_db));
            rows.push(RmseRow {
                estimator,
                snr_db,
                rmse_theta_deg: rmse[0],
                rmse_range_m: rmse[1],
                rmse_velocity_mps: rmse[2],
                rcrb_theta_deg: rcrb[0],
                rcrb_range_m: rcrb[1],
                rcrb_velocity_mps: rcrb[2],
                mean_wall_time_s: (spec.record_time && used > 0).then(|| secs / used as f64),
                trials_used: used,
                failures,
            });
        }
    }
    Ok(rows)
}
