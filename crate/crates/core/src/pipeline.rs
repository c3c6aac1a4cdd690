//! Full estimator: initialization, three concurrent 2D slices and 3D
//! re-matching. Also hosts the 3D-DFT baseline, an exhaustive grid-MUSIC
//! oracle and the estimate-to-truth association used for RMSE.

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::init1d::{permutations, run_algorithm1, InitialTriplets};
use crate::music2d::{run_isu2dmusic, LmSettings, Pair2DEstimates, StopReason, SubspaceUpdate};
use crate::scenario::{wrap_phase, Axis, SmoothingConfig, SystemConfig};
use crate::signal::{steering_vector, Observation};
use crate::smoothing::smooth_3d;
use crate::subspace::{covariance, dot, eig_split};

/// The three 2D slices in re-matching order: (azimuth, velocity),
/// (azimuth, range), (range, velocity).
pub const SLICES: [[Axis; 2]; 3] =
    [[Axis::Antenna, Axis::Symbol], [Axis::Antenna, Axis::Subcarrier], [Axis::Subcarrier, Axis::Symbol]];

const SLICE_NAMES: [&str; 3] = ["azimuth-velocity", "azimuth-range", "range-velocity"];

/// Distance ties closer than this are flagged.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Largest grid a single oracle search may evaluate.
pub const ORACLE_GRID_LIMIT: usize = 10_000_000;

/// Distance used to match range-velocity pairs.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub enum RematchMetric {
    /// `|dr| + |dv|` in metres and metres per second.
    #[default]
    Verbatim,
    /// `|dr| / range_scale + |dv| / velocity_scale`.
    Normalized { range_scale: f64, velocity_scale: f64 },
}

impl RematchMetric {
    /// Normalization by the Rayleigh cells of `config`.
    pub fn rayleigh(config: &SystemConfig) -> Self {
        RematchMetric::Normalized {
            range_scale: config.rayleigh(Axis::Subcarrier),
            velocity_scale: config.rayleigh(Axis::Symbol),
        }
    }

    fn distance(&self, dr: f64, dv: f64) -> f64 {
        match *self {
            RematchMetric::Verbatim => dr.abs() + dv.abs(),
            RematchMetric::Normalized { range_scale, velocity_scale } => {
                dr.abs() / range_scale + dv.abs() / velocity_scale
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct PipelineOptions {
    pub lm: LmSettings,
    pub update: SubspaceUpdate,
    pub metric: RematchMetric,
    /// Run the three slices on separate threads.
    pub parallel: bool,
}

/// Per-target notes from re-matching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TargetFlags {
    /// Another unused azimuth-range pair was equally close in azimuth.
    pub azimuth_tie: bool,
    /// Another unused range-velocity pair was equally close.
    pub range_velocity_tie: bool,
    /// Parameter taken from one slice only because the other hit the
    /// iteration limit (azimuth, range, velocity).
    pub single_slice: [bool; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PiDiagnostics {
    pub initial: InitialTriplets,
    /// Slice results in [`SLICES`] order.
    pub slices: [Pair2DEstimates; 3],
}

/// Estimated targets with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSet {
    /// (azimuth deg, range m, velocity m/s) per target.
    pub estimates: Vec<[f64; 3]>,
    /// Indices `(i, j, k)` of the pairs used from each slice.
    pub provenance: Vec<[usize; 3]>,
    pub flags: Vec<TargetFlags>,
    pub diagnostics: Option<Box<PiDiagnostics>>,
}

impl EstimateSet {
    fn plain(estimates: Vec<[f64; 3]>) -> Self {
        let n = estimates.len();
        EstimateSet {
            estimates,
            provenance: (0..n).map(|i| [i; 3]).collect(),
            flags: vec![TargetFlags::default(); n],
            diagnostics: None,
        }
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }
}

/// Index of the smallest `dist` over unused entries, and whether another
/// unused entry ties it.
fn argmin_unused(used: &[bool], dist: impl Fn(usize) -> f64) -> (usize, bool) {
    let mut best: Option<(usize, f64)> = None;
    let mut tie = false;
    for k in (0..used.len()).filter(|&k| !used[k]) {
        let d = dist(k);
        match best {
            None => best = Some((k, d)),
            Some((_, b)) if d < b - TIE_TOLERANCE => {
                best = Some((k, d));
                tie = false;
            }
            Some((_, b)) if (d - b).abs() <= TIE_TOLERANCE => tie = true,
            _ => {}
        }
    }
    (best.expect("at least one unused entry").0, tie)
}

fn stalled(p: &Pair2DEstimates, i: usize) -> bool {
    p.diagnostics.get(i).is_some_and(|d| d.stop == StopReason::MaxIterations)
}

fn combine(a: f64, a_stalled: bool, b: f64, b_stalled: bool) -> (f64, bool) {
    match (a_stalled, b_stalled) {
        (false, true) => (a, true),
        (true, false) => (b, true),
        _ => (0.5 * (a + b), false),
    }
}

/// Minimum-distance re-matching of the three slice sequences into 3D
/// estimates. Argmins run over indices not yet taken, in the order of the
/// azimuth-velocity sequence; ties go to the smallest index.
pub fn rematch(
    tv: &Pair2DEstimates,
    tr: &Pair2DEstimates,
    rv: &Pair2DEstimates,
    metric: RematchMetric,
) -> Result<EstimateSet> {
    let u = tv.pairs.len();
    if tr.pairs.len() != u || rv.pairs.len() != u {
        return Err(Error::Dimension(format!(
            "slice lengths {}, {}, {} differ",
            tv.pairs.len(),
            tr.pairs.len(),
            rv.pairs.len()
        )));
    }
    let mut used_j = vec![false; u];
    let mut used_k = vec![false; u];
    let mut out = EstimateSet {
        estimates: Vec::with_capacity(u),
        provenance: Vec::with_capacity(u),
        flags: Vec::with_capacity(u),
        diagnostics: None,
    };
    for i in 0..u {
        let [theta_i, v_i] = tv.pairs[i];
        let (j, azimuth_tie) = argmin_unused(&used_j, |j| (theta_i - tr.pairs[j][0]).abs());
        used_j[j] = true;
        let r_j = tr.pairs[j][1];
        let (k, range_velocity_tie) =
            argmin_unused(&used_k, |k| metric.distance(r_j - rv.pairs[k][0], v_i - rv.pairs[k][1]));
        used_k[k] = true;

        let (theta, s0) = combine(theta_i, stalled(tv, i), tr.pairs[j][0], stalled(tr, j));
        let (range, s1) = combine(r_j, stalled(tr, j), rv.pairs[k][0], stalled(rv, k));
        let (velocity, s2) = combine(v_i, stalled(tv, i), rv.pairs[k][1], stalled(rv, k));
        out.estimates.push([theta, range, velocity]);
        out.provenance.push([i, j, k]);
        out.flags.push(TargetFlags { azimuth_tie, range_velocity_tie, single_slice: [s0, s1, s2] });
    }
    Ok(out)
}

/// PI-2DMUSIC: root-MUSIC initialization and pairing, the three 2D slices,
/// then re-matching.
pub fn run_pi2dmusic(
    obs: &Observation,
    u: usize,
    smoothing: &SmoothingConfig,
    options: &PipelineOptions,
) -> Result<EstimateSet> {
    options.lm.validate()?;
    let a1 = run_algorithm1(obs, u, smoothing)?;
    let run = |s: usize| {
        run_isu2dmusic(obs, u, SLICES[s], smoothing, &a1.initial, &a1.polynomials, &options.lm, options.update)
            .map_err(|e| Error::Slice { slice: SLICE_NAMES[s], source: Box::new(e) })
    };
    let results: Vec<Result<Pair2DEstimates>> = if options.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..3).map(|s| scope.spawn(move || run(s))).collect();
            handles.into_iter().map(|h| h.join().expect("slice thread panicked")).collect()
        })
    } else {
        (0..3).map(run).collect()
    };
    let mut slices = Vec::with_capacity(3);
    for r in results {
        slices.push(r?);
    }
    let slices: [Pair2DEstimates; 3] = slices.try_into().expect("three slices");
    let mut set = rematch(&slices[0], &slices[1], &slices[2], options.metric)?;
    set.diagnostics = Some(Box::new(PiDiagnostics { initial: a1.initial, slices }));
    Ok(set)
}

/// 3D-DFT baseline settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DftOptions {
    /// Zero-padding factor per axis.
    pub pad: usize,
    /// Parabolic refinement of each peak along every axis.
    pub interpolate: bool,
}

impl Default for DftOptions {
    fn default() -> Self {
        DftOptions { pad: 1, interpolate: false }
    }
}

fn fft_axis(data: &mut [Complex64], dims: [usize; 3], axis: usize, planner: &mut FftPlanner<f64>) {
    let n = dims[axis];
    if n == 1 {
        return;
    }
    let fft = planner.plan_fft_forward(n);
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for (k, x) in line.iter_mut().enumerate() {
                *x = data[base + k * stride];
            }
            fft.process(&mut line);
            for (k, x) in line.iter().enumerate() {
                data[base + k * stride] = *x;
            }
        }
    }
}

/// Strict local maxima of a 3D array under a 26-neighbourhood; equal
/// neighbours are broken by flat index. `wrap` makes every axis circular.
fn local_maxima(values: &[f64], dims: [usize; 3], wrap: bool) -> Vec<usize> {
    let mut out = Vec::new();
    let idx = |a: usize, b: usize, c: usize| (a * dims[1] + b) * dims[2] + c;
    let step = |x: usize, d: isize, n: usize| -> Option<usize> {
        let y = x as isize + d;
        if wrap {
            Some(y.rem_euclid(n as isize) as usize)
        } else if y < 0 || y >= n as isize {
            None
        } else {
            Some(y as usize)
        }
    };
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            'point: for c in 0..dims[2] {
                let p = idx(a, b, c);
                for da in -1..=1isize {
                    for db in -1..=1isize {
                        for dc in -1..=1isize {
                            let (Some(x), Some(y), Some(z)) =
                                (step(a, da, dims[0]), step(b, db, dims[1]), step(c, dc, dims[2]))
                            else {
                                continue;
                            };
                            let q = idx(x, y, z);
                            if q == p {
                                continue;
                            }
                            if values[q] > values[p] || (values[q] == values[p] && q < p) {
                                continue 'point;
                            }
                        }
                    }
                }
                out.push(p);
            }
        }
    }
    out
}

/// The `u` largest local maxima, strongest first, ties by index.
fn top_peaks(values: &[f64], dims: [usize; 3], wrap: bool, u: usize) -> Result<Vec<usize>> {
    let mut peaks = local_maxima(values, dims, wrap);
    if peaks.len() < u {
        return Err(Error::TooFewPeaks { wanted: u, found: peaks.len() });
    }
    peaks.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    peaks.truncate(u);
    Ok(peaks)
}

fn parabolic_offset(ym: f64, y0: f64, yp: f64) -> f64 {
    let den = ym - 2.0 * y0 + yp;
    if den.abs() <= f64::EPSILON * y0.abs() || !den.is_finite() {
        0.0
    } else {
        (0.5 * (ym - yp) / den).clamp(-0.5, 0.5)
    }
}

/// Periodogram baseline: 3D FFT of the zero-padded observation,
/// the `u` strongest local maxima, bins mapped back to parameters.
pub fn estimate_3d_dft(obs: &Observation, u: usize, options: &DftOptions) -> Result<EstimateSet> {
    if options.pad == 0 {
        return Err(Error::InvalidScenario("DFT pad factor must be at least 1".into()));
    }
    let [l, n, m] = obs.dims();
    let dims = [l * options.pad, n * options.pad, m * options.pad];
    let total = dims.iter().product::<usize>();
    let mut data = vec![Complex64::new(0.0, 0.0); total];
    for a in 0..l {
        for b in 0..n {
            for c in 0..m {
                data[(a * dims[1] + b) * dims[2] + c] = obs.get(a, b, c);
            }
        }
    }
    let mut planner = FftPlanner::new();
    for axis in 0..3 {
        fft_axis(&mut data, dims, axis, &mut planner);
    }
    let power: Vec<f64> = data.iter().map(|z| z.norm()).collect();
    let peaks = top_peaks(&power, dims, true, u)?;
    let mut estimates = Vec::with_capacity(u);
    for p in peaks {
        let bin = [p / (dims[1] * dims[2]), (p / dims[2]) % dims[1], p % dims[2]];
        let mut out = [0.0; 3];
        for axis in Axis::ALL {
            let i = axis.index();
            let mut k = bin[i] as f64;
            if options.interpolate && dims[i] >= 3 {
                let neighbour = |d: isize| {
                    let mut b = bin;
                    b[i] = (b[i] as isize + d).rem_euclid(dims[i] as isize) as usize;
                    power[(b[0] * dims[1] + b[1]) * dims[2] + b[2]]
                };
                k += parabolic_offset(neighbour(-1), power[p], neighbour(1));
            }
            let phase = wrap_phase(2.0 * std::f64::consts::PI * k / dims[i] as f64);
            out[i] = obs.config.param_from_phase(axis, phase)?;
        }
        estimates.push(out);
    }
    Ok(EstimateSet::plain(estimates))
}

/// Exhaustive 3D-MUSIC spectrum search on the full 3D smoothing.
#[derive(Debug, Clone)]
pub struct MusicOracle {
    config: SystemConfig,
    windows: [usize; 3],
    /// Signal eigenvectors, each laid out as a (antenna, subcarrier,
    /// symbol) window tensor with symbol fastest.
    signal: Vec<Vec<Complex64>>,
}

impl MusicOracle {
    pub fn new(obs: &Observation, u: usize, smoothing: &SmoothingConfig) -> Result<Self> {
        let sm = smooth_3d(obs, smoothing)?;
        let split = eig_split(&covariance(&sm), u)?;
        let d = split.signal.nrows();
        let signal = (0..u).map(|c| (0..d).map(|r| split.signal[(r, c)]).collect()).collect();
        Ok(MusicOracle { config: obs.config, windows: smoothing.sizes(), signal })
    }

    fn steering(&self, axis: Axis, value: f64) -> Vec<Complex64> {
        steering_vector(self.config.phase(axis, value), self.windows[axis.index()])
    }

    /// MUSIC spectrum `1 / (a^H E_n E_n^H a)` at one point.
    pub fn spectrum(&self, point: [f64; 3]) -> f64 {
        let a = crate::signal::kron(
            &crate::signal::kron(&self.steering(Axis::Antenna, point[0]), &self.steering(Axis::Subcarrier, point[1])),
            &self.steering(Axis::Symbol, point[2]),
        );
        let norm: f64 = a.iter().map(|x| x.norm_sqr()).sum();
        let captured: f64 = self.signal.iter().map(|e| dot(e, &a).norm_sqr()).sum();
        1.0 / (norm - captured).max(f64::MIN_POSITIVE)
    }

    /// Spectrum over the full grid `grids[0] x grids[1] x grids[2]`,
    /// velocity fastest.
    pub fn spectrum_grid(&self, grids: &[Vec<f64>; 3]) -> Result<Vec<f64>> {
        let points = grids.iter().map(Vec::len).try_fold(1usize, |acc, n| acc.checked_mul(n)).unwrap_or(usize::MAX);
        if points > ORACLE_GRID_LIMIT {
            return Err(Error::GridTooLarge { points, limit: ORACLE_GRID_LIMIT });
        }
        if points == 0 {
            return Ok(Vec::new());
        }
        let [wl, wn, wm] = self.windows;
        let [gt, gr, gv] = [grids[0].len(), grids[1].len(), grids[2].len()];
        let at: Vec<Vec<Complex64>> = grids[0].iter().map(|&x| self.steering(Axis::Antenna, x)).collect();
        let ar: Vec<Vec<Complex64>> = grids[1].iter().map(|&x| self.steering(Axis::Subcarrier, x)).collect();
        let av: Vec<Vec<Complex64>> = grids[2].iter().map(|&x| self.steering(Axis::Symbol, x)).collect();
        let mut g = vec![(wl * wn * wm) as f64; points];
        let zero = Complex64::new(0.0, 0.0);
        for e in &self.signal {
            // t1[l][n][v] = sum_m conj(e[l,n,m]) a_v[m]
            let mut t1 = vec![zero; wl * wn * gv];
            for ln in 0..wl * wn {
                let row = &e[ln * wm..(ln + 1) * wm];
                for (iv, a) in av.iter().enumerate() {
                    t1[ln * gv + iv] = dot(row, a);
                }
            }
            // t2[l][r][v] = sum_n a_r[n] t1[l][n][v]
            let mut t2 = vec![zero; wl * gr * gv];
            for l in 0..wl {
                for (ir, a) in ar.iter().enumerate() {
                    let out = &mut t2[(l * gr + ir) * gv..(l * gr + ir + 1) * gv];
                    for (nn, w) in a.iter().enumerate() {
                        let src = &t1[(l * wn + nn) * gv..(l * wn + nn + 1) * gv];
                        for (o, s) in out.iter_mut().zip(src) {
                            *o += w * s;
                        }
                    }
                }
            }
            let mut c = vec![zero; gr * gv];
            for (it, a) in at.iter().enumerate() {
                c.iter_mut().for_each(|x| *x = zero);
                for (l, w) in a.iter().enumerate() {
                    let src = &t2[l * gr * gv..(l + 1) * gr * gv];
                    for (o, s) in c.iter_mut().zip(src) {
                        *o += w * s;
                    }
                }
                for (dst, x) in g[it * gr * gv..(it + 1) * gr * gv].iter_mut().zip(&c) {
                    *dst -= x.norm_sqr();
                }
            }
        }
        let _ = gt;
        Ok(g.into_iter().map(|x| 1.0 / x.max(f64::MIN_POSITIVE)).collect())
    }

    /// The `n_peaks` strongest local maxima of the spectrum on the grid.
    pub fn search(&self, grids: &[Vec<f64>; 3], n_peaks: usize) -> Result<Vec<[f64; 3]>> {
        let spec = self.spectrum_grid(grids)?;
        let dims = [grids[0].len(), grids[1].len(), grids[2].len()];
        let peaks = top_peaks(&spec, dims, false, n_peaks)?;
        Ok(peaks
            .into_iter()
            .map(|p| [grids[0][p / (dims[1] * dims[2])], grids[1][(p / dims[2]) % dims[1]], grids[2][p % dims[2]]])
            .collect())
    }
}

/// Exhaustive 3D-MUSIC search returning the `u` strongest grid peaks.
pub fn grid_music_oracle(
    obs: &Observation,
    u: usize,
    smoothing: &SmoothingConfig,
    grids: &[Vec<f64>; 3],
) -> Result<EstimateSet> {
    let oracle = MusicOracle::new(obs, u, smoothing)?;
    Ok(EstimateSet::plain(oracle.search(grids, u)?))
}

/// Evenly spaced grid from `start` to `stop` inclusive.
pub fn linear_grid(start: f64, stop: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![start],
        _ => (0..points).map(|i| start + (stop - start) * i as f64 / (points - 1) as f64).collect(),
    }
}

/// Permutation `p` minimizing `sum_i ||estimates[p[i]] - truth[i]||^2`;
/// the first in lexicographic order wins ties.
pub fn associate(estimates: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<Vec<usize>> {
    if estimates.len() != truth.len() {
        return Err(Error::Dimension(format!("{} estimates for {} targets", estimates.len(), truth.len())));
    }
    let cost = |p: &[usize]| -> f64 {
        p.iter().zip(truth).map(|(&e, t)| (0..3).map(|k| (estimates[e][k] - t[k]).powi(2)).sum::<f64>()).sum()
    };
    let mut best: Option<(f64, Vec<usize>)> = None;
    for p in permutations(truth.len()) {
        let c = cost(&p);
        if best.as_ref().is_none_or(|(b, _)| c < *b) {
            best = Some((c, p));
        }
    }
    Ok(best.map(|(_, p)| p).unwrap_or_default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::music2d::LmDiagnostics;
    use crate::scenario::{Scenario, Target};
    use crate::signal::synthesize;

    fn pairs(axes: [Axis; 2], pairs: Vec<[f64; 2]>) -> Pair2DEstimates {
        let n = pairs.len();
        Pair2DEstimates {
            axes,
            augmented_pairs: pairs.clone(),
            pairs,
            order: (0..n).collect(),
            diagnostics: Vec::new(),
            augmentation_failed: vec![false; n],
            near_degenerate: false,
        }
    }

    fn truth_slices(targets: &[[f64; 3]]) -> [Pair2DEstimates; 3] {
        SLICES.map(|axes| pairs(axes, targets.iter().map(|t| axes.map(|a| t[a.index()])).collect()))
    }

    #[test]
    fn identical_pairs_give_inputs() {
        let t = [[20.0, 39.73, -10.0], [-23.16, 60.5, 29.61], [-10.6, 80.21, 10.11]];
        let [tv, tr, rv] = truth_slices(&t);
        let set = rematch(&tv, &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert_eq!(set.estimates, t.to_vec());
        assert_eq!(set.provenance, vec![[0, 0, 0], [1, 1, 1], [2, 2, 2]]);
        assert!(set.flags.iter().all(|f| *f == TargetFlags::default()));
    }

    #[test]
    fn shuffled_slices_reassociate() {
        let t = [[20.0, 39.73, -10.0], [-23.16, 60.5, 29.61], [-10.6, 80.21, 10.11]];
        let [tv, mut tr, mut rv] = truth_slices(&t);
        tr.pairs = vec![tr.pairs[2], tr.pairs[0], tr.pairs[1]];
        rv.pairs = vec![rv.pairs[1], rv.pairs[2], rv.pairs[0]];
        let set = rematch(&tv, &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert_eq!(set.estimates, t.to_vec());
        assert_eq!(set.provenance, vec![[0, 1, 2], [1, 2, 0], [2, 0, 1]]);
        // Brute force over all matchings: the greedy one is the unique best.
        let mut best = Vec::new();
        for pj in permutations(3) {
            for pk in permutations(3) {
                let cost: f64 = (0..3)
                    .map(|i| {
                        (tv.pairs[i][0] - tr.pairs[pj[i]][0]).abs()
                            + (tr.pairs[pj[i]][1] - rv.pairs[pk[i]][0]).abs()
                            + (tv.pairs[i][1] - rv.pairs[pk[i]][1]).abs()
                    })
                    .sum();
                if cost < 1e-12 {
                    best.push((pj.clone(), pk));
                }
            }
        }
        assert_eq!(best.len(), 1);
        assert_eq!(best[0].0, vec![1, 2, 0]);
    }

    #[test]
    fn near_duplicate_azimuths_flag_a_tie() {
        let t = [[10.0, 30.0, 5.0], [10.0 + 1e-13, 60.0, -5.0]];
        let [tv, tr, rv] = truth_slices(&t);
        let set = rematch(&tv, &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert!(set.flags[0].azimuth_tie);
        let mut used: Vec<usize> = set.provenance.iter().map(|p| p[1]).collect();
        used.sort();
        assert_eq!(used, vec![0, 1]);
    }

    #[test]
    fn stalled_slice_is_dropped() {
        let t = [[10.0, 30.0, 5.0]];
        let [mut tv, tr, rv] = truth_slices(&t);
        tv.pairs[0] = [11.0, 6.0];
        let diag = |stop| LmDiagnostics {
            iterations: 100,
            final_g: 0.0,
            converged: false,
            stop,
            grad_inf: 1.0,
            g_history: vec![],
        };
        tv.diagnostics = vec![diag(StopReason::MaxIterations)];
        let set = rematch(&tv, &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert_eq!(set.estimates[0], [10.0, 30.0, 5.0]);
        assert_eq!(set.flags[0].single_slice, [true, false, true]);
        let unflagged = rematch(&truth_slices(&[[11.0, 30.0, 6.0]])[0], &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert_eq!(unflagged.estimates[0], [10.5, 30.0, 5.5]);
        assert!(rematch(&tv, &pairs(SLICES[1], vec![]), &rv, RematchMetric::Verbatim).is_err());
    }

    #[test]
    fn normalized_metric_changes_the_match() {
        // In raw units the 3 m range gap of the first candidate is the
        // smaller total; with a 10 m/s velocity cell the second one wins.
        let tv = pairs(SLICES[0], vec![[0.0, 0.0], [30.0, 90.0]]);
        let tr = pairs(SLICES[1], vec![[0.0, 50.0], [30.0, 200.0]]);
        let rv = pairs(SLICES[2], vec![[53.0, 0.5], [50.5, 5.0]]);
        let v = rematch(&tv, &tr, &rv, RematchMetric::Verbatim).unwrap();
        assert_eq!(v.provenance[0][2], 0);
        let n = rematch(&tv, &tr, &rv, RematchMetric::Normalized { range_scale: 1.0, velocity_scale: 10.0 }).unwrap();
        assert_eq!(n.provenance[0][2], 1);
    }

    #[test]
    fn noiseless_reference_is_exact() {
        let s = Scenario::reference(8, 32, 16, f64::INFINITY);
        let obs = synthesize(&s, 4);
        let sm = SmoothingConfig::new(4, 12, 8);
        let set = run_pi2dmusic(&obs, 3, &sm, &PipelineOptions::default()).unwrap();
        let truth: Vec<[f64; 3]> = s.targets.iter().map(Target::params).collect();
        let p = associate(&set.estimates, &truth).unwrap();
        for (i, t) in truth.iter().enumerate() {
            for k in 0..3 {
                assert!((set.estimates[p[i]][k] - t[k]).abs() < 1e-6, "{:?} vs {t:?}", set.estimates[p[i]]);
            }
        }
    }

    #[test]
    fn parallel_and_serial_agree_bitwise() {
        let s = Scenario::reference(8, 32, 16, 10.0);
        let obs = synthesize(&s, 8);
        let sm = SmoothingConfig::new(4, 12, 8);
        let serial = run_pi2dmusic(&obs, 3, &sm, &PipelineOptions::default()).unwrap();
        let parallel = run_pi2dmusic(&obs, 3, &sm, &PipelineOptions { parallel: true, ..Default::default() }).unwrap();
        assert_eq!(serial, parallel);
    }

    #[test]
    fn target_order_does_not_matter() {
        let s = Scenario::reference(8, 32, 16, f64::INFINITY);
        let mut rev = s.clone();
        rev.targets.reverse();
        let sm = SmoothingConfig::new(4, 12, 8);
        let mut a = run_pi2dmusic(&synthesize(&s, 0), 3, &sm, &PipelineOptions::default()).unwrap().estimates;
        let mut b = run_pi2dmusic(&synthesize(&rev, 0), 3, &sm, &PipelineOptions::default()).unwrap().estimates;
        a.sort_by(|x, y| x[0].total_cmp(&y[0]));
        b.sort_by(|x, y| x[0].total_cmp(&y[0]));
        for (x, y) in a.iter().zip(&b) {
            for k in 0..3 {
                assert!((x[k] - y[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn slice_failure_names_the_slice() {
        let s = Scenario::reference(8, 32, 16, 10.0);
        let obs = synthesize(&s, 0);
        let lm = LmSettings { q_max: 0, ..Default::default() };
        let err =
            run_pi2dmusic(&obs, 3, &SmoothingConfig::new(4, 12, 8), &PipelineOptions { lm, ..Default::default() });
        assert!(err.is_err());
        // An initialization that succeeds but a slice whose window is too
        // small for the targets.
        let s1 = Scenario::new(SystemConfig::nr_fr2(4, 16, 8), vec![Target::new(0.0, 30.0, 0.0)], 20.0);
        let obs1 = synthesize(&s1, 0);
        let err = run_isu2dmusic(
            &obs1,
            2,
            SLICES[0],
            &SmoothingConfig::new(1, 6, 1),
            &InitialTriplets { triplets: vec![[0.0; 3]; 2], alpha_hat: vec![], residual: 0.0, ambiguous: false },
            &run_algorithm1(&obs1, 1, &SmoothingConfig::new(2, 6, 2)).unwrap().polynomials,
            &LmSettings::default(),
            SubspaceUpdate::Polished,
        );
        assert!(err.is_err());
    }

    fn on_grid_config() -> SystemConfig {
        SystemConfig::nr_fr2(8, 16, 8)
    }

    #[test]
    fn dft_recovers_on_grid_target() {
        let c = on_grid_config();
        // Phases on the native bins: 2 pi k / len.
        let tau = 2.0 * std::f64::consts::PI;
        let theta = c.param_from_phase(Axis::Antenna, tau * 1.0 / 8.0).unwrap();
        let range = c.param_from_phase(Axis::Subcarrier, -tau * 3.0 / 16.0).unwrap();
        let vel = c.param_from_phase(Axis::Symbol, -tau * 2.0 / 8.0).unwrap();
        let s = Scenario::new(c, vec![Target::new(theta, range, vel)], f64::INFINITY);
        let set = estimate_3d_dft(&synthesize(&s, 0), 1, &DftOptions::default()).unwrap();
        let e = set.estimates[0];
        assert!((e[0] - theta).abs() < 1e-9 && (e[1] - range).abs() < 1e-9 && (e[2] - vel).abs() < 1e-9, "{e:?}");
    }

    #[test]
    fn dft_off_grid_error_within_half_bin() {
        let c = on_grid_config();
        for pad in [1, 4] {
            for &frac in &[0.1, 0.37, 0.49] {
                let bin = 2.0 * std::f64::consts::PI / (16 * pad) as f64;
                let range = c.param_from_phase(Axis::Subcarrier, -(5.0 + frac) * bin).unwrap();
                let s = Scenario::new(c, vec![Target::new(0.0, range, 0.0)], f64::INFINITY);
                let set = estimate_3d_dft(&synthesize(&s, 0), 1, &DftOptions { pad, interpolate: false }).unwrap();
                let half = 0.5 * c.rayleigh(Axis::Subcarrier) / pad as f64;
                assert!((set.estimates[0][1] - range).abs() <= half + 1e-9);
            }
        }
    }

    #[test]
    fn dft_interpolation_helps() {
        let c = SystemConfig::nr_fr2(16, 32, 16);
        let s = Scenario::new(c, vec![Target::new(13.0, 41.3, 7.7)], f64::INFINITY);
        let obs = synthesize(&s, 0);
        let plain = estimate_3d_dft(&obs, 1, &DftOptions { pad: 4, interpolate: false }).unwrap().estimates[0];
        let fine = estimate_3d_dft(&obs, 1, &DftOptions { pad: 4, interpolate: true }).unwrap().estimates[0];
        assert!((fine[1] - 41.3).abs() <= (plain[1] - 41.3).abs());
        assert!(estimate_3d_dft(&obs, 1, &DftOptions { pad: 0, interpolate: false }).is_err());
    }

    #[test]
    fn dft_reports_missing_peaks() {
        let c = SystemConfig::nr_fr2(2, 2, 2);
        let s = Scenario::new(c, vec![Target::new(0.0, 0.0, 0.0)], f64::INFINITY);
        assert!(matches!(
            estimate_3d_dft(&synthesize(&s, 0), 3, &DftOptions::default()),
            Err(Error::TooFewPeaks { wanted: 3, .. })
        ));
    }

    #[test]
    fn local_maxima_wrap() {
        let mut v = vec![0.0; 27];
        v[0] = 1.0;
        v[26] = 0.5;
        // (2,2,2) neighbours (0,0,0) only when wrapping.
        assert_eq!(local_maxima(&v, [3, 3, 3], true), vec![0]);
        assert_eq!(local_maxima(&v, [3, 3, 3], false), vec![0, 26]);
    }

    #[test]
    fn oracle_on_grid_single_target() {
        let c = SystemConfig::nr_fr2(6, 12, 6);
        let t = Target::new(12.0, 40.0, 6.0);
        let obs = synthesize(&Scenario::new(c, vec![t], 20.0), 1);
        let sm = SmoothingConfig::new(3, 6, 3);
        let grids = [linear_grid(0.0, 24.0, 13), linear_grid(30.0, 50.0, 11), linear_grid(0.0, 12.0, 13)];
        let noiseless = synthesize(&Scenario::new(c, vec![t], f64::INFINITY), 1);
        let set = grid_music_oracle(&noiseless, 1, &sm, &grids).unwrap();
        assert_eq!(set.estimates[0], [12.0, 40.0, 6.0]);
        assert!(grid_music_oracle(&obs, 1, &sm, &grids).is_ok());
    }

    #[test]
    fn oracle_grid_matches_pointwise_spectrum() {
        let s = Scenario::reference(6, 12, 6, 10.0);
        let obs = synthesize(&s, 3);
        let oracle = MusicOracle::new(&obs, 3, &SmoothingConfig::new(3, 6, 3)).unwrap();
        let grids = [linear_grid(-30.0, 30.0, 5), linear_grid(20.0, 90.0, 4), linear_grid(-20.0, 30.0, 6)];
        let spec = oracle.spectrum_grid(&grids).unwrap();
        let mut i = 0;
        for &a in &grids[0] {
            for &b in &grids[1] {
                for &c in &grids[2] {
                    let p = oracle.spectrum([a, b, c]);
                    assert!((spec[i] - p).abs() <= 1e-9 * p, "{} vs {p}", spec[i]);
                    i += 1;
                }
            }
        }
    }

    #[test]
    fn oracle_guard() {
        let s = Scenario::reference(6, 12, 6, 10.0);
        let obs = synthesize(&s, 3);
        let big = [linear_grid(0.0, 1.0, 1000), linear_grid(0.0, 1.0, 1000), linear_grid(0.0, 1.0, 11)];
        assert!(matches!(
            grid_music_oracle(&obs, 3, &SmoothingConfig::new(3, 6, 3), &big),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn association_minimizes_total_error() {
        let truth = [[0.0, 0.0, 0.0], [10.0, 10.0, 10.0], [20.0, 20.0, 20.0]];
        let est = [[19.0, 20.0, 20.0], [0.5, 0.0, 0.0], [10.0, 11.0, 10.0]];
        assert_eq!(associate(&est, &truth).unwrap(), vec![1, 2, 0]);
        assert!(associate(&est[..2], &truth).is_err());
        assert_eq!(associate(&[], &[]).unwrap(), Vec::<usize>::new());
    }

    #[test]
    fn linear_grid_endpoints() {
        assert_eq!(linear_grid(1.0, 2.0, 3), vec![1.0, 1.5, 2.0]);
        assert_eq!(linear_grid(1.0, 2.0, 1), vec![1.0]);
        assert!(linear_grid(1.0, 2.0, 0).is_empty());
    }
}
