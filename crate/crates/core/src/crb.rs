//! Cramér-Rao bounds for the azimuth, range and velocity of all targets.
//!
//! Parameters are ordered `[theta_1..theta_U, r_1..r_U, v_1..v_U]` with
//! azimuth in radians.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{Axis, Scenario, SystemConfig, Target};
use crate::signal::Manifold;

/// `A^H A` condition number at which targets count as unresolvable.
pub const CONDITION_LIMIT: f64 = 1e10;

#[derive(Debug, Clone)]
pub struct CrbResult {
    /// Bound on the covariance of all 3U parameters.
    pub crb_matrix: Mat<f64>,
    /// (rad^2, m^2, (m/s)^2) per target.
    pub per_target: Vec<[f64; 3]>,
    /// Square roots of `per_target`.
    pub rcrb: Vec<[f64; 3]>,
}

impl CrbResult {
    fn from_matrix(m: Mat<f64>) -> Self {
        let u = m.nrows() / 3;
        let per_target: Vec<[f64; 3]> = (0..u).map(|i| [0, 1, 2].map(|b| m[(b * u + i, b * u + i)])).collect();
        let rcrb = per_target.iter().map(|p| p.map(|x| x.max(0.0).sqrt())).collect();
        CrbResult { crb_matrix: m, per_target, rcrb }
    }

    /// Root bounds with azimuth converted to degrees.
    pub fn rcrb_degrees(&self) -> Vec<[f64; 3]> {
        self.rcrb.iter().map(|r| [r[0].to_degrees(), r[1], r[2]]).collect()
    }
}

fn targets_of(scenario: &Scenario) -> Result<&[Target]> {
    if scenario.targets.is_empty() {
        return Err(Error::InvalidScenario("no targets".into()));
    }
    Ok(&scenario.targets)
}

/// `dA = [dA_theta, dA_r, dA_v]`, `LNM x 3U`, each column the derivative
/// of one target's steering vector with respect to one parameter.
pub fn manifold_derivative(scenario: &Scenario) -> Result<Mat<Complex64>> {
    let c = &scenario.config;
    let targets = targets_of(scenario)?;
    if targets.iter().any(|t| t.azimuth_deg.to_radians().cos().abs() < 1e-12) {
        return Err(Error::DegenerateAzimuth);
    }
    let a = Manifold::new(c, targets, c.dims())?.a;
    let u = targets.len();
    let [_, n, m] = c.dims();
    Ok(Mat::from_fn(a.nrows(), 3 * u, |row, col| {
        let (b, i) = (col / u, col % u);
        let axis = Axis::from_index(b);
        let k = [row / (n * m), (row / m) % n, row % m][b] as f64;
        let d = c.phase_derivative(axis, targets[i].param(axis));
        a[(row, i)] * Complex64::new(0.0, k * d)
    }))
}

fn hermitian_condition(g: &Mat<Complex64>) -> Result<f64> {
    let ev = g.self_adjoint_eigenvalues(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let lo = ev.first().copied().unwrap_or(0.0);
    let hi = ev.last().copied().unwrap_or(0.0);
    Ok(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

fn symmetric_inverse(m: &Mat<f64>) -> Result<Mat<f64>> {
    let chol = m.llt(Side::Lower).map_err(|_| Error::SingularSystem)?;
    let inv = chol.solve(Mat::<f64>::identity(m.nrows(), m.nrows()));
    Ok(Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)])))
}

fn alphas(targets: &[Target]) -> Vec<Complex64> {
    (0..3).flat_map(|_| targets.iter().map(|t| t.backscatter)).collect()
}

/// `(sigma^2 / 2) [Re{S^H dA^H P dA S}]^-1` with `P` the projector onto the
/// orthogonal complement of the manifold and `S = I_3 (x) diag(alpha)`.
pub fn crb_theorem1(scenario: &Scenario) -> Result<CrbResult> {
    let c = &scenario.config;
    let targets = targets_of(scenario)?;
    let a = Manifold::new(c, targets, c.dims())?.a;
    let da = manifold_derivative(scenario)?;
    let gram = a.adjoint() * &a;
    let cond = hermitian_condition(&gram)?;
    if cond >= CONDITION_LIMIT {
        return Err(Error::Unresolvable(cond));
    }
    let y = gram.llt(Side::Lower).map_err(|_| Error::SingularSystem)?.solve(a.adjoint() * &da);
    let pda = &da - &a * &y;
    let inner = pda.adjoint() * &pda;
    let s = alphas(targets);
    let k = 3 * targets.len();
    let fim = Mat::from_fn(k, k, |i, j| (s[i].conj() * inner[(i, j)] * s[j]).re);
    let inv = symmetric_inverse(&fim)?;
    let half = 0.5 * c.noise_power;
    Ok(CrbResult::from_matrix(Mat::from_fn(k, k, |i, j| half * inv[(i, j)])))
}

/// Fisher information blocks for `(gamma, Re alpha, Im alpha)`:
/// `F11` (3U x 3U), `F12` (3U x 2U) and `F22` (2U x 2U).
pub fn fisher_blocks(scenario: &Scenario) -> Result<(Mat<f64>, Mat<f64>, Mat<f64>)> {
    let c = &scenario.config;
    if !(c.noise_power > 0.0) {
        return Err(Error::InvalidScenario("Fisher information needs positive noise power".into()));
    }
    let targets = targets_of(scenario)?;
    let u = targets.len();
    let a = Manifold::new(c, targets, c.dims())?.a;
    let da = manifold_derivative(scenario)?;
    let s = alphas(targets);
    let w = 2.0 / c.noise_power;
    let dd = da.adjoint() * &da;
    let f11 = Mat::from_fn(3 * u, 3 * u, |i, j| w * (s[i].conj() * dd[(i, j)] * s[j]).re);
    let da_a = da.adjoint() * &a;
    let f12 = Mat::from_fn(3 * u, 2 * u, |i, j| {
        let x = s[i].conj() * da_a[(i, j % u)];
        if j < u {
            w * x.re
        } else {
            -w * x.im
        }
    });
    let g = a.adjoint() * &a;
    let f22 = Mat::from_fn(2 * u, 2 * u, |i, j| {
        let x = g[(i % u, j % u)];
        w * match (i < u, j < u) {
            (true, true) | (false, false) => x.re,
            (true, false) => -x.im,
            (false, true) => x.im,
        }
    });
    Ok((f11, f12, f22))
}

/// The bound through the Schur complement `[F11 - F12 F22^-1 F12^T]^-1`.
pub fn crb_schur(scenario: &Scenario) -> Result<CrbResult> {
    let (f11, f12, f22) = fisher_blocks(scenario)?;
    let chol = f22.llt(Side::Lower).map_err(|_| Error::SingularSystem)?;
    let x = chol.solve(f12.transpose().to_owned());
    let schur = &f11 - &f12 * &x;
    let k = schur.nrows();
    let sym = Mat::from_fn(k, k, |i, j| 0.5 * (schur[(i, j)] + schur[(j, i)]));
    Ok(CrbResult::from_matrix(symmetric_inverse(&sym)?))
}

/// Single-target closed forms `6 / (K gamma D (D^2 - 1) d^2)` per
/// parameter, with `D` the axis length and `K` the product of the other
/// two. Azimuth in rad^2.
pub fn crb_single_closed_form(config: &SystemConfig, target: &Target, snr_linear: f64) -> [f64; 3] {
    let dims = config.dims().map(|x| x as f64);
    let total: f64 = dims.iter().product();
    Axis::ALL.map(|axis| {
        let d_len = dims[axis.index()];
        let k = total / d_len;
        let d = config.phase_derivative(axis, target.param(axis));
        6.0 / (k * snr_linear * d_len * (d_len * d_len - 1.0) * d * d)
    })
}
