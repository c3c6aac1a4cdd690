use std::time::Instant;

use jarve_core::pipeline::{estimate_3d_dft, linear_grid, run_pi2dmusic, MusicOracle};
use jarve_core::scenario::{validate, Axis, Scenario, SmoothingConfig};
use jarve_core::signal::{synthesize, trial_seed, Observation};

use crate::spec::{Estimator, RunSpec};
use crate::sweep::rcrb_rms;
use crate::Result;

/// Repetitions per measurement; the median is reported.
pub const REPETITIONS: usize = 5;

/// Largest 3D smoothing dimension the oracle is timed at.
pub const ORACLE_MAX_DIM: usize = 6000;

/// Grid points per axis the oracle actually evaluates when timed.
pub const ORACLE_TIMED_POINTS_PER_AXIS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub dims: [usize; 3],
    pub smoothing: [usize; 3],
    pub estimator: Estimator,
    /// Median wall time of one run. For the oracle this covers the
    /// subspace and a capped grid, so it is a lower bound on the search at
    /// the requested grid.
    pub median_s: Option<f64>,
    /// `median_s` over the PI-2DMUSIC median at the same dims.
    pub ratio_to_pi2dmusic: Option<f64>,
    /// Grid points for a step of a quarter of the RCRB over the whole
    /// unambiguous parameter space (oracle only).
    pub requested_grid_points: Option<f64>,
    /// Oracle time extrapolated linearly to the requested grid.
    pub extrapolated_s: Option<f64>,
    /// Reason a row was skipped.
    pub note: String,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn time_it(mut f: impl FnMut() -> jarve_core::Result<()>) -> jarve_core::Result<f64> {
    let mut times = Vec::with_capacity(REPETITIONS);
    for _ in 0..REPETITIONS {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64());
    }
    Ok(median(times))
}

/// Search extent per axis: the whole unambiguous interval.
fn extents(scenario: &Scenario) -> [(f64, f64); 3] {
    let c = &scenario.config;
    [(-90.0, 90.0), (0.0, c.max_range()), (-c.max_speed(), c.max_speed())]
}

struct OracleTiming {
    median_s: f64,
    requested: f64,
    extrapolated_s: f64,
}

fn time_oracle(
    obs: &Observation,
    scenario: &Scenario,
    smoothing: &SmoothingConfig,
) -> jarve_core::Result<OracleTiming> {
    let u = scenario.targets.len();
    let steps = rcrb_rms(scenario).map(|r| r / 4.0);
    let ext = extents(scenario);
    let requested: f64 = (0..3).map(|k| ((ext[k].1 - ext[k].0) / steps[k]).ceil().max(1.0)).product();
    let grids: [Vec<f64>; 3] = Axis::ALL.map(|a| {
        let (lo, hi) = ext[a.index()];
        let wanted = ((hi - lo) / steps[a.index()]).ceil().max(1.0);
        let n = (wanted as usize).min(ORACLE_TIMED_POINTS_PER_AXIS);
        // Stay inside the open azimuth interval.
        let pad = if a == Axis::Antenna { 1e-3 } else { 0.0 };
        linear_grid(lo + pad, hi - pad, n)
    });
    let timed_points = grids.iter().map(Vec::len).product::<usize>() as f64;
    let mut subspace = Vec::new();
    let mut search = Vec::new();
    for _ in 0..REPETITIONS {
        let start = Instant::now();
        let oracle = MusicOracle::new(obs, u, smoothing)?;
        let mid = Instant::now();
        oracle.search(&grids, u)?;
        subspace.push((mid - start).as_secs_f64());
        search.push(mid.elapsed().as_secs_f64());
    }
    let totals: Vec<f64> = subspace.iter().zip(&search).map(|(a, b)| a + b).collect();
    let (sub, srch) = (median(subspace), median(search));
    Ok(OracleTiming { median_s: median(totals), requested, extrapolated_s: sub + srch * requested / timed_points })
}

/// Median-of-five wall times per estimator for each array size. The
/// scenario's targets are kept, its SNR is the highest finite value of the
/// SNR grid, and the smoothing choice is resolved per size.
pub fn run_timing(spec: &RunSpec, dims_grid: &[[usize; 3]]) -> Result<Vec<TimingRow>> {
    let snr = spec.snr_grid_db.iter().rev().copied().find(|s| s.is_finite()).unwrap_or(10.0);
    let mut rows = Vec::new();
    for (gi, &dims) in dims_grid.iter().enumerate() {
        let mut scenario = spec.scenario.with_snr_db(snr);
        scenario.config.n_antennas = dims[0];
        scenario.config.n_subcarriers = dims[1];
        scenario.config.n_symbols = dims[2];
        let smoothing = spec.smoothing.resolve(&scenario.config);
        let blank = |estimator, note: String| TimingRow {
            dims,
            smoothing: smoothing.sizes(),
            estimator,
            median_s: None,
            ratio_to_pi2dmusic: None,
            requested_grid_points: None,
            extrapolated_s: None,
            note,
        };
        if let Err(e) = validate(&scenario, Some(&smoothing)).into_result() {
            rows.extend(spec.estimators.iter().map(|&e2| blank(e2, format!("invalid: {e}"))));
            continue;
        }
        let obs = synthesize(&scenario, trial_seed(spec.master_seed, 1_000_000 + gi as u64, 0));
        let u = scenario.targets.len();
        let mut group: Vec<TimingRow> = Vec::new();
        for &estimator in &spec.estimators {
            let mut row = blank(estimator, String::new());
            let measured = match estimator {
                Estimator::Pi2dMusic => time_it(|| run_pi2dmusic(&obs, u, &smoothing, &spec.pipeline).map(|_| ())),
                Estimator::Dft3d => time_it(|| estimate_3d_dft(&obs, u, &spec.dft).map(|_| ())),
                Estimator::GridOracle => {
                    let d: usize = smoothing.sizes().iter().product();
                    if d > ORACLE_MAX_DIM {
                        row.note = format!("skipped: 3D smoothing dimension {d} exceeds {ORACLE_MAX_DIM}");
                        group.push(row);
                        continue;
                    }
                    time_oracle(&obs, &scenario, &smoothing).map(|t| {
                        row.requested_grid_points = Some(t.requested);
                        row.extrapolated_s = Some(t.extrapolated_s);
                        t.median_s
                    })
                }
            };
            match measured {
                Ok(t) => row.median_s = Some(t),
                Err(e) => row.note = format!("failed: {e}"),
            }
            group.push(row);
        }
        let pi = group.iter().find(|r| r.estimator == Estimator::Pi2dMusic).and_then(|r| r.median_s);
        for r in &mut group {
            if r.estimator != Estimator::Pi2dMusic {
                r.ratio_to_pi2dmusic = r.median_s.zip(pi).map(|(a, b)| a / b);
            }
        }
        rows.extend(group);
    }
    Ok(rows)
}
