//! Per-dimension root-MUSIC estimation and maximum-likelihood pairing of
//! the three parameter lists into initial targets.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{Axis, SmoothingConfig, SystemConfig};
use crate::signal::{steering_vector, Observation};
use crate::smoothing::smooth_1d;
use crate::subspace::{covariance, dot, eig_split};

/// Largest target count accepted by the exhaustive pairing.
pub const MAX_PAIRING_TARGETS: usize = 6;

/// Pairings with a Gram condition number above this are skipped.
const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// The polynomial `k^(D-1) a^H(k) E_n E_n^H a(k)` in ascending powers.
#[derive(Debug, Clone, PartialEq)]
pub struct RootPolynomial {
    pub coeffs: Vec<Complex64>,
    pub axis: Axis,
    pub dim: usize,
}

impl RootPolynomial {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// Null-spectrum value `a^H(k) C a(k)` at `k = e^{j phase}`; real and
    /// non-negative up to roundoff.
    pub fn spectrum(&self, phase: f64) -> f64 {
        let z = Complex64::from_polar(1.0, phase);
        let shift = Complex64::from_polar(1.0, -((self.dim - 1) as f64) * phase);
        (self.eval(z) * shift).re
    }

    /// The highest-order coefficient vanishes (relative to the largest),
    /// so the polynomial has lost degree and no usable root structure.
    pub fn is_degenerate(&self) -> bool {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        scale == 0.0 || self.coeffs.last().is_none_or(|c| c.norm() <= 1e-12 * scale)
    }

    /// All roots, via eigenvalues of the companion matrix. Leading zero
    /// coefficients are dropped; trailing ones give roots at the origin.
    pub fn roots(&self) -> Result<Vec<Complex64>> {
        let scale = self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Ok(Vec::new());
        }
        let mut hi = self.coeffs.len();
        while hi > 0 && self.coeffs[hi - 1].norm() <= 1e-14 * scale {
            hi -= 1;
        }
        let mut lo = 0;
        while lo < hi && self.coeffs[lo].norm() <= 1e-14 * scale {
            lo += 1;
        }
        let mut roots = vec![Complex64::new(0.0, 0.0); lo];
        let c = &self.coeffs[lo..hi];
        let deg = c.len().saturating_sub(1);
        if deg == 0 {
            return Ok(roots);
        }
        let lead = c[deg];
        let companion = Mat::from_fn(deg, deg, |i, j| {
            if i == 0 {
                -c[deg - 1 - j] / lead
            } else if i == j + 1 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let eig = companion.eigenvalues().map_err(|e| Error::Eigen(format!("{e:?}")))?;
        roots.extend(eig);
        Ok(roots)
    }
}

/// Builds the root polynomial from a noise basis: coefficient `k` is the
/// sum of the `(k - (D-1))`-th diagonal of `C = E_n E_n^H`.
pub fn build_root_polynomial(noise: &Mat<Complex64>, axis: Axis) -> RootPolynomial {
    let d = noise.nrows();
    let k = noise.ncols();
    let c = Mat::from_fn(d, d, |i, j| (0..k).map(|c| noise[(i, c)] * noise[(j, c)].conj()).sum::<Complex64>());
    let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * d - 1];
    for i in 0..d {
        for j in 0..d {
            // Power of the term C_ij k^{j-i}, shifted by D-1.
            coeffs[j + d - 1 - i] += c[(i, j)];
        }
    }
    RootPolynomial { coeffs, axis, dim: d }
}

/// A conjugate-reciprocal root pair reduced to one point inside the disk.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    point: Complex64,
}

impl Candidate {
    fn gap(&self) -> f64 {
        (1.0 - self.point.norm()).abs()
    }
}

fn reflect(z: Complex64) -> Complex64 {
    Complex64::new(1.0, 0.0) / z.conj()
}

fn inside(z: Complex64) -> Complex64 {
    if z.norm() > 1.0 {
        reflect(z)
    } else {
        z
    }
}

/// Groups roots into conjugate-reciprocal pairs (greedy, closest
/// reflection first) and returns each pair's representative: the mean of
/// its members mapped inside the unit disk. Roots at the origin are
/// dropped; unmatched roots stand alone.
fn root_candidates(roots: &[Complex64]) -> Vec<Candidate> {
    let roots: Vec<Complex64> = roots.iter().copied().filter(|z| z.norm() > 1e-12 && z.norm().is_finite()).collect();
    let n = roots.len();
    let mut links = Vec::with_capacity(n * (n.saturating_sub(1)) / 2);
    for i in 0..n {
        for j in i + 1..n {
            links.push(((roots[i] - reflect(roots[j])).norm(), i, j));
        }
    }
    links.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut used = vec![false; n];
    let mut out = Vec::new();
    for (dist, i, j) in links {
        if used[i] || used[j] {
            continue;
        }
        // Only accept links that look like a genuine reflection pair.
        let scale = roots[i].norm().max(1.0 / roots[i].norm());
        if dist > 0.5 * scale {
            continue;
        }
        used[i] = true;
        used[j] = true;
        out.push(Candidate { point: 0.5 * (inside(roots[i]) + inside(roots[j])) });
    }
    for i in 0..n {
        if !used[i] {
            out.push(Candidate { point: inside(roots[i]) });
        }
    }
    out
}

/// Selects the `u` root candidates nearest the unit circle (ties: larger
/// magnitude, then smaller angle) and returns their phases.
pub fn select_root_phases(poly: &RootPolynomial, u: usize) -> Result<Vec<f64>> {
    if poly.is_degenerate() {
        return Err(Error::TooFewRoots { wanted: u, found: 0 });
    }
    let mut cands = root_candidates(&poly.roots()?);
    if cands.len() < u {
        return Err(Error::TooFewRoots { wanted: u, found: cands.len() });
    }
    cands.sort_by(|a, b| {
        a.gap()
            .total_cmp(&b.gap())
            .then(b.point.norm().total_cmp(&a.point.norm()))
            .then(a.point.arg().total_cmp(&b.point.arg()))
    });
    Ok(cands[..u].iter().map(|c| c.point.arg()).collect())
}

/// Root selection followed by the phase-to-parameter map of the
/// polynomial's axis.
pub fn roots_to_params(poly: &RootPolynomial, u: usize, config: &SystemConfig) -> Result<Vec<f64>> {
    if u >= poly.dim {
        return Err(Error::TooFewRoots { wanted: u, found: poly.dim.saturating_sub(1) });
    }
    select_root_phases(poly, u)?.into_iter().map(|p| config.param_from_phase(poly.axis, p)).collect()
}

/// Initial targets produced by the pairing step.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialTriplets {
    /// (azimuth deg, range m, velocity m/s) per target.
    pub triplets: Vec<[f64; 3]>,
    pub alpha_hat: Vec<Complex64>,
    /// `||z - A alpha||^2` of the chosen pairing.
    pub residual: f64,
    /// Another assignment reached the same residual within tolerance; the
    /// first in enumeration order was kept.
    pub ambiguous: bool,
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        out.push(p.clone());
        // Next lexicographic permutation.
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else { break };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
    out
}

/// Projections `(a_theta_i (x) a_r_j (x) a_v_k)^H z` for every index
/// triple, contracted one axis at a time.
fn contractions(
    z: &[Complex64],
    dims: [usize; 3],
    at: &[Vec<Complex64>],
    ar: &[Vec<Complex64>],
    av: &[Vec<Complex64>],
) -> Vec<Complex64> {
    let [l_len, n_len, m_len] = dims;
    let u = at.len();
    let zero = Complex64::new(0.0, 0.0);
    // y1[(l, n), k]
    let mut y1 = vec![zero; l_len * n_len * u];
    for ln in 0..l_len * n_len {
        let row = &z[ln * m_len..][..m_len];
        for k in 0..u {
            y1[ln * u + k] = dot(&av[k], row);
        }
    }
    // y2[l, j, k]
    let mut y2 = vec![zero; l_len * u * u];
    for l in 0..l_len {
        for j in 0..u {
            for k in 0..u {
                let mut acc = zero;
                for n in 0..n_len {
                    acc += ar[j][n].conj() * y1[(l * n_len + n) * u + k];
                }
                y2[(l * u + j) * u + k] = acc;
            }
        }
    }
    let mut out = vec![zero; u * u * u];
    for i in 0..u {
        for j in 0..u {
            for k in 0..u {
                out[(i * u + j) * u + k] = (0..l_len).map(|l| at[i][l].conj() * y2[(l * u + j) * u + k]).sum();
            }
        }
    }
    out
}

fn gram(x: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    x.iter().map(|a| x.iter().map(|b| dot(a, b)).collect()).collect()
}

/// Least-squares fit of one pairing: `(alpha, residual)` or `None` when
/// the Gram matrix is too ill-conditioned.
fn fit_pairing(g: &Mat<Complex64>, b: &[Complex64], z_norm2: f64) -> Option<(Vec<Complex64>, f64)> {
    let u = b.len();
    let ev = g.self_adjoint_eigenvalues(Side::Lower).ok()?;
    let (lo, hi) = (ev[0], ev[u - 1]);
    if !(lo > 0.0) || hi / lo > GRAM_CONDITION_LIMIT {
        return None;
    }
    let rhs = Mat::from_fn(u, 1, |i, _| b[i]);
    let x = g.llt(Side::Lower).ok()?.solve(&rhs);
    let alpha: Vec<Complex64> = (0..u).map(|i| x[(i, 0)]).collect();
    let fitted: f64 = b.iter().zip(&alpha).map(|(bi, ai)| (bi.conj() * ai).re).sum();
    Some((alpha, (z_norm2 - fitted).max(0.0)))
}

/// Pairs per-dimension estimates by trying every assignment of ranges and
/// velocities to the azimuths, fitting the backscatter coefficients by
/// least squares and keeping the smallest residual `||z - A_q alpha_q||^2`.
pub fn pair_mle(
    z: &[Complex64],
    config: &SystemConfig,
    thetas: &[f64],
    ranges: &[f64],
    velocities: &[f64],
) -> Result<InitialTriplets> {
    let u = thetas.len();
    if ranges.len() != u || velocities.len() != u || u == 0 {
        return Err(Error::Dimension(format!(
            "pairing needs equal non-empty lists, got {}, {}, {}",
            u,
            ranges.len(),
            velocities.len()
        )));
    }
    if u > MAX_PAIRING_TARGETS {
        return Err(Error::TooManyTargets(u));
    }
    let dims = config.dims();
    if z.len() != dims.iter().product::<usize>() {
        return Err(Error::Dimension("observation length does not match config".into()));
    }
    let steer = |axis: Axis, vals: &[f64]| -> Vec<Vec<Complex64>> {
        vals.iter().map(|&v| steering_vector(config.phase(axis, v), dims[axis.index()])).collect()
    };
    let at = steer(Axis::Antenna, thetas);
    let ar = steer(Axis::Subcarrier, ranges);
    let av = steer(Axis::Symbol, velocities);
    let proj = contractions(z, dims, &at, &ar, &av);
    let (gt, gr, gv) = (gram(&at), gram(&ar), gram(&av));
    let z_norm2: f64 = z.iter().map(|x| x.norm_sqr()).sum();

    let perms = permutations(u);
    let mut best: Option<(f64, Vec<[usize; 3]>, Vec<Complex64>)> = None;
    let mut fits = Vec::new();
    for sr in &perms {
        for sv in &perms {
            let idx: Vec<[usize; 3]> = (0..u).map(|i| [i, sr[i], sv[i]]).collect();
            let g = Mat::from_fn(u, u, |p, q| {
                let (a, b) = (idx[p], idx[q]);
                gt[a[0]][b[0]] * gr[a[1]][b[1]] * gv[a[2]][b[2]]
            });
            let b: Vec<Complex64> = idx.iter().map(|t| proj[(t[0] * u + t[1]) * u + t[2]]).collect();
            let Some((alpha, res)) = fit_pairing(&g, &b, z_norm2) else { continue };
            fits.push((res, idx.clone()));
            if best.as_ref().is_none_or(|(r, _, _)| res < *r) {
                best = Some((res, idx, alpha));
            }
        }
    }
    let (residual, idx, alpha_hat) = best.ok_or(Error::ManifoldCollinear)?;
    let values = |t: &[usize; 3]| [thetas[t[0]], ranges[t[1]], velocities[t[2]]];
    let tol = 1e-10 * z_norm2.max(f64::MIN_POSITIVE);
    let ambiguous = fits.iter().any(|(res, other)| *other != idx && (res - residual).abs() <= tol);
    Ok(InitialTriplets { triplets: idx.iter().map(values).collect(), alpha_hat, residual, ambiguous })
}

/// Output of the initialization stage.
#[derive(Debug, Clone)]
pub struct InitialEstimates {
    pub initial: InitialTriplets,
    /// Root polynomials of the azimuth, range and velocity runs.
    pub polynomials: [RootPolynomial; 3],
    /// Unpaired per-dimension estimates (azimuth, range, velocity).
    pub estimates: [Vec<f64>; 3],
}

/// One root-MUSIC run along `axis` with window `sub_size`.
pub fn estimate_1d(obs: &Observation, axis: Axis, sub_size: usize, u: usize) -> Result<(RootPolynomial, Vec<f64>)> {
    if sub_size <= u {
        return Err(Error::Window(format!("{axis} window {sub_size} must exceed the target count {u}")));
    }
    let sm = smooth_1d(obs, axis, sub_size)?;
    let split = eig_split(&covariance(&sm), u)?;
    let poly = build_root_polynomial(&split.noise, axis);
    let params = roots_to_params(&poly, u, &obs.config)?;
    Ok((poly, params))
}

/// Range, azimuth and velocity root-MUSIC runs followed by the pairing.
pub fn run_algorithm1(obs: &Observation, u: usize, smoothing: &SmoothingConfig) -> Result<InitialEstimates> {
    let (pr, ranges) = estimate_1d(obs, Axis::Subcarrier, smoothing.sub_subcarriers, u)?;
    let (pt, thetas) = estimate_1d(obs, Axis::Antenna, smoothing.sub_antennas, u)?;
    let (pv, velocities) = estimate_1d(obs, Axis::Symbol, smoothing.sub_symbols, u)?;
    let initial = pair_mle(obs.as_slice(), &obs.config, &thetas, &ranges, &velocities)?;
    Ok(InitialEstimates { initial, polynomials: [pt, pr, pv], estimates: [thetas, ranges, velocities] })
}
