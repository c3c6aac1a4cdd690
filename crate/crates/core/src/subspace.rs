//! Sample covariance, signal/noise subspace split and noise-subspace
//! augmentation.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::smoothing::SnapshotMatrix;

/// Relative eigenvalue gap below which the signal/noise boundary is
/// reported as near-degenerate.
pub const DEGENERATE_GAP: f64 = 1e-6;

/// Sample covariance (1/S) sum_s b_s b_s^H of a snapshot set.
pub fn covariance(snapshots: &SnapshotMatrix) -> Mat<Complex64> {
    snapshots.covariance()
}

/// Signal and noise subspaces of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct SubspacePair {
    /// Top-U eigenvectors, D x U.
    pub signal: Mat<Complex64>,
    /// Remaining eigenvectors, D x (D - U).
    pub noise: Mat<Complex64>,
    /// All eigenvalues, non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues U and U+1 are within [`DEGENERATE_GAP`] of each other
    /// relative to the largest, so the split may swap directions.
    pub near_degenerate: bool,
}

impl SubspacePair {
    pub fn dim(&self) -> usize {
        self.signal.nrows()
    }

    pub fn n_signal(&self) -> usize {
        self.signal.ncols()
    }

    pub fn noise_basis(&self) -> NoiseBasis {
        NoiseBasis::new(&self.noise)
    }
}

/// Eigendecomposition of `r` split into the top `u` and remaining
/// eigenvectors. Small negative eigenvalues from roundoff are clamped to 0.
pub fn eig_split(r: &Mat<Complex64>, u: usize) -> Result<SubspacePair> {
    let d = r.nrows();
    if r.ncols() != d {
        return Err(Error::Dimension(format!("covariance is {}x{}", d, r.ncols())));
    }
    if u == 0 || u >= d {
        return Err(Error::Dimension(format!("signal dimension {u} not in 1..{d}")));
    }
    let evd = r.self_adjoint_eigen(Side::Lower).map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let vals = evd.S().column_vector();
    let vecs = evd.U();
    let trace: f64 = (0..d).map(|i| r[(i, i)].re).sum();

    // The solver returns ascending order; flip it.
    let mut eigenvalues = Vec::with_capacity(d);
    for i in (0..d).rev() {
        let mut v = vals[i].re;
        if v < 0.0 && v >= -1e-12 * trace.abs() {
            v = 0.0;
        }
        eigenvalues.push(v);
    }
    let signal = Mat::from_fn(d, u, |row, c| vecs[(row, d - 1 - c)]);
    let noise = Mat::from_fn(d, d - u, |row, c| vecs[(row, d - 1 - u - c)]);
    let scale = eigenvalues[0].abs().max(f64::MIN_POSITIVE);
    let near_degenerate = (eigenvalues[u - 1] - eigenvalues[u]) <= DEGENERATE_GAP * scale;
    Ok(SubspacePair { signal, noise, eigenvalues, near_degenerate })
}

/// Appends the normalized component of `a` orthogonal to the columns of
/// `noise`. Fails when that component is negligible, i.e. `a` already lies
/// in the noise subspace.
pub fn augment_noise_subspace(noise: &Mat<Complex64>, a: &[Complex64]) -> Result<Mat<Complex64>> {
    let d = a.len();
    if noise.nrows() != d && noise.ncols() > 0 {
        return Err(Error::Dimension(format!("vector of length {d} vs subspace of {} rows", noise.nrows())));
    }
    let k = noise.ncols();
    let coeffs: Vec<Complex64> = (0..k).map(|c| (0..d).map(|r| noise[(r, c)].conj() * a[r]).sum()).collect();
    let mut v: Vec<Complex64> = a.to_vec();
    for (c, w) in coeffs.iter().enumerate() {
        for (r, x) in v.iter_mut().enumerate() {
            *x -= noise[(r, c)] * w;
        }
    }
    let a_norm = norm(a);
    let residual = norm(&v);
    if residual < 1e-8 * a_norm || residual == 0.0 {
        return Err(Error::Annihilated { residual });
    }
    Ok(Mat::from_fn(d, k + 1, |r, c| if c < k { noise[(r, c)] } else { v[r] / residual }))
}

fn norm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `x^H y`, with split accumulators so the loop vectorizes.
pub fn dot(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    let mut acc = [0.0f64; 8];
    let n = x.len().min(y.len());
    let (xc, xr) = x[..n].split_at(n - n % 2);
    let (yc, yr) = y[..n].split_at(n - n % 2);
    for (a, b) in xc.chunks_exact(2).zip(yc.chunks_exact(2)) {
        acc[0] += a[0].re * b[0].re;
        acc[1] += a[0].im * b[0].im;
        acc[2] += a[0].re * b[0].im;
        acc[3] += a[0].im * b[0].re;
        acc[4] += a[1].re * b[1].re;
        acc[5] += a[1].im * b[1].im;
        acc[6] += a[1].re * b[1].im;
        acc[7] += a[1].im * b[1].re;
    }
    let mut out = Complex64::new(acc[0] + acc[1] + acc[4] + acc[5], acc[2] - acc[3] + acc[6] - acc[7]);
    for (a, b) in xr.iter().zip(yr) {
        out += a.conj() * b;
    }
    out
}

/// Orthonormal noise basis `E_n` stored by column, with the products the
/// MUSIC searches need.
#[derive(Debug, Clone)]
pub struct NoiseBasis {
    cols: Vec<Vec<Complex64>>,
    dim: usize,
}

impl NoiseBasis {
    pub fn new(noise: &Mat<Complex64>) -> Self {
        let dim = noise.nrows();
        let cols = (0..noise.ncols()).map(|c| (0..dim).map(|r| noise[(r, c)]).collect()).collect();
        NoiseBasis { cols, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rank(&self) -> usize {
        self.cols.len()
    }

    /// Coordinates `E_n^H x`.
    pub fn coords(&self, x: &[Complex64]) -> Vec<Complex64> {
        self.cols.iter().map(|e| dot(e, x)).collect()
    }

    /// `x^H E_n E_n^H x`.
    pub fn quad(&self, x: &[Complex64]) -> f64 {
        self.cols.iter().map(|e| dot(e, x).norm_sqr()).sum()
    }

    /// Appends the normalized part of `a` orthogonal to the basis.
    pub fn augment(&mut self, a: &[Complex64]) -> Result<()> {
        let mut v = a.to_vec();
        for e in &self.cols {
            let w = dot(e, a);
            for (x, y) in v.iter_mut().zip(e) {
                *x -= y * w;
            }
        }
        let residual = norm(&v);
        if residual < 1e-8 * norm(a) || residual == 0.0 {
            return Err(Error::Annihilated { residual });
        }
        self.cols.push(v.into_iter().map(|z| z / residual).collect());
        Ok(())
    }

    pub fn to_matrix(&self) -> Mat<Complex64> {
        Mat::from_fn(self.dim, self.cols.len(), |r, c| self.cols[c][r])
    }
}

/// Orthogonal projector onto a noise subspace, `P x = E_n E_n^H x`.
pub trait NullSpace {
    fn dim(&self) -> usize;
    /// Dimension of the subspace projected onto.
    fn rank(&self) -> usize;
    fn project(&self, x: &[Complex64]) -> Vec<Complex64>;
    /// Extends the subspace by the normalized part of `a` outside it.
    fn augment(&mut self, a: &[Complex64]) -> Result<()>;
}

fn axpy(y: &mut [Complex64], w: Complex64, x: &[Complex64]) {
    for (a, b) in y.iter_mut().zip(x) {
        *a += b * w;
    }
}

impl NullSpace for NoiseBasis {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rank(&self) -> usize {
        self.cols.len()
    }

    fn project(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.dim];
        for e in &self.cols {
            axpy(&mut out, dot(e, x), e);
        }
        out
    }

    fn augment(&mut self, a: &[Complex64]) -> Result<()> {
        NoiseBasis::augment(self, a)
    }
}

/// Noise subspace held through its complement: `P = I - E_s E_s^H + V V^H`,
/// where `V` collects augmented directions inside the signal subspace.
/// Cheaper than [`NoiseBasis`] when the signal subspace is the smaller one.
#[derive(Debug, Clone)]
pub struct ComplementBasis {
    signal: Vec<Vec<Complex64>>,
    extra: Vec<Vec<Complex64>>,
    dim: usize,
}

impl ComplementBasis {
    pub fn new(signal: &Mat<Complex64>) -> Self {
        let dim = signal.nrows();
        let signal = (0..signal.ncols()).map(|c| (0..dim).map(|r| signal[(r, c)]).collect()).collect();
        ComplementBasis { signal, extra: Vec::new(), dim }
    }
}

impl NullSpace for ComplementBasis {
    fn dim(&self) -> usize {
        self.dim
    }

    fn rank(&self) -> usize {
        self.dim - self.signal.len() + self.extra.len()
    }

    fn project(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = x.to_vec();
        for e in &self.signal {
            axpy(&mut out, -dot(e, x), e);
        }
        for v in &self.extra {
            axpy(&mut out, dot(v, x), v);
        }
        out
    }

    fn augment(&mut self, a: &[Complex64]) -> Result<()> {
        let p = self.project(a);
        let mut v: Vec<Complex64> = a.iter().zip(&p).map(|(x, y)| x - y).collect();
        // Second pass against the extra directions for orthogonality.
        for e in &self.extra {
            let w = dot(e, &v);
            axpy(&mut v, -w, e);
        }
        let residual = norm(&v);
        if residual < 1e-8 * norm(a) || residual == 0.0 || self.rank() >= self.dim {
            return Err(Error::Annihilated { residual });
        }
        self.extra.push(v.into_iter().map(|z| z / residual).collect());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{Axis, Scenario, SystemConfig, Target};
    use crate::signal::{kron, steering, steering_vector, synthesize};
    use crate::smoothing::{smooth_1d, smooth_2d};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<Complex64> {
        (0..d).map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5)).collect()
    }

    fn outer(a: &[Complex64]) -> Mat<Complex64> {
        Mat::from_fn(a.len(), a.len(), |i, j| a[i] * a[j].conj())
    }

    fn orthonormality_error(cols: &[&Mat<Complex64>]) -> f64 {
        let d = cols[0].nrows();
        let all: Vec<Vec<Complex64>> =
            cols.iter().flat_map(|m| (0..m.ncols()).map(move |c| (0..d).map(|r| m[(r, c)]).collect())).collect();
        let mut worst: f64 = 0.0;
        for i in 0..all.len() {
            for j in 0..all.len() {
                let g = dot(&all[i], &all[j]);
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - target).norm());
            }
        }
        worst
    }

    #[test]
    fn complement_matches_explicit_basis() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 12;
        let mut r = Mat::<Complex64>::zeros(d, d);
        for _ in 0..3 {
            let v = random_vec(&mut rng, d);
            r += outer(&v);
        }
        let p = eig_split(&r, 3).unwrap();
        let mut explicit = p.noise_basis();
        let mut complement = ComplementBasis::new(&p.signal);
        for step in 0..3 {
            assert_eq!(NullSpace::rank(&explicit), complement.rank());
            let x = random_vec(&mut rng, d);
            let a = NullSpace::project(&explicit, &x);
            let b = complement.project(&x);
            let err: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-12, "step {step}: {err}");
            let y = random_vec(&mut rng, d);
            NullSpace::augment(&mut explicit, &y).unwrap();
            complement.augment(&y).unwrap();
        }
        // Fully augmented: the complement is the identity.
        assert!(complement.augment(&random_vec(&mut rng, d)).is_err());
    }

    #[test]
    fn identity_spectrum() {
        let r = Mat::<Complex64>::identity(4, 4);
        let p = eig_split(&r, 1).unwrap();
        assert!(p.eigenvalues.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(p.near_degenerate);
        assert!(orthonormality_error(&[&p.signal, &p.noise]) < 1e-10);
    }

    #[test]
    fn rank_one_split() {
        let a = steering_vector(0.7, 6);
        let p = eig_split(&outer(&a), 1).unwrap();
        assert!((p.eigenvalues[0] - 6.0).abs() < 1e-10);
        for c in 0..p.noise.ncols() {
            let g: Complex64 = (0..6).map(|r| p.noise[(r, c)].conj() * a[r]).sum();
            assert!(g.norm() < 1e-10);
        }
        let s: Vec<Complex64> = (0..6).map(|r| p.signal[(r, 0)]).collect();
        assert!((dot(&s, &a).norm() - 6f64.sqrt()).abs() < 1e-10);
        assert!(eig_split(&outer(&a), 0).is_err());
        assert!(eig_split(&outer(&a), 6).is_err());
    }

    #[test]
    fn reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = 7;
        let mut r = Mat::<Complex64>::zeros(d, d);
        for _ in 0..10 {
            let v = random_vec(&mut rng, d);
            r += outer(&v);
        }
        let p = eig_split(&r, 3).unwrap();
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        let e = Mat::from_fn(d, d, |i, j| if j < 3 { p.signal[(i, j)] } else { p.noise[(i, j - 3)] });
        let lam =
            Mat::from_fn(
                d,
                d,
                |i, j| if i == j { Complex64::new(p.eigenvalues[i], 0.0) } else { Complex64::new(0.0, 0.0) },
            );
        let back = &e * &lam * e.adjoint();
        let diff = (&back - &r).norm_l2();
        assert!(diff <= 1e-9 * r.norm_l2());
    }

    #[test]
    fn single_snapshot_covariance_is_rank_one() {
        let s = Scenario::reference(4, 5, 6, 0.0);
        let obs = synthesize(&s, 2);
        let sm = smooth_1d(&obs, Axis::Subcarrier, 5).unwrap();
        assert_eq!(sm.cols(), 4 * 6);
        let c = Scenario::reference(1, 5, 1, 0.0);
        let obs1 = synthesize(&c, 2);
        let sm1 = smooth_1d(&obs1, Axis::Subcarrier, 5).unwrap();
        assert_eq!(sm1.cols(), 1);
        let r = covariance(&sm1);
        let b = sm1.column(0);
        let diff = (&r - &outer(&b)).norm_l2();
        assert!(diff < 1e-12 * r.norm_l2());
    }

    #[test]
    fn noiseless_single_target_covariance() {
        let c = SystemConfig::nr_fr2(4, 16, 5);
        let s = Scenario::new(c, vec![Target::new(5.0, 30.0, 2.0)], f64::INFINITY);
        let obs = synthesize(&s, 0);
        let sm = smooth_1d(&obs, Axis::Subcarrier, 6).unwrap();
        let p = eig_split(&covariance(&sm), 1).unwrap();
        assert!((p.eigenvalues[0] - 6.0).abs() < 1e-10);
        assert!(p.eigenvalues[1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn noise_only_covariance_is_white() {
        let mut c = SystemConfig::nr_fr2(20, 64, 40);
        c.noise_power = 1.0;
        let t = Target::new(1.0, 1.0, 1.0).with_backscatter(Complex64::new(0.0, 0.0));
        let s = Scenario::new(c, vec![t], 0.0);
        let obs = synthesize(&s, 8);
        let sm = smooth_1d(&obs, Axis::Subcarrier, 4).unwrap();
        let r = covariance(&sm);
        let bound = 5.0 / (sm.cols() as f64).sqrt();
        for i in 0..4 {
            assert!((r[(i, i)].re - 1.0).abs() < bound);
            for j in 0..4 {
                if i != j {
                    assert!(r[(i, j)].norm() < bound);
                }
            }
        }
    }

    #[test]
    fn three_target_slice_has_rank_three() {
        let s = Scenario::reference(8, 32, 16, f64::INFINITY);
        let obs = synthesize(&s, 4);
        let sm = smooth_2d(&obs, [Axis::Antenna, Axis::Symbol], [4, 8]).unwrap();
        let p = eig_split(&covariance(&sm), 3).unwrap();
        let top = p.eigenvalues[0];
        assert!(p.eigenvalues[2] > 1e-3 * top);
        assert!(p.eigenvalues[3] < 1e-10 * top);
        for t in &s.targets {
            let st = steering(&s.config, t.azimuth_deg, t.range_m, t.velocity_mps, [4, 1, 8]).unwrap();
            let a = kron(&st.a_theta, &st.a_v);
            let g = p.noise_basis().quad(&a);
            assert!(g.sqrt() <= 1e-8 * (32f64).sqrt());
        }
    }

    #[test]
    fn augmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_vec(&mut rng, 5);
        let empty = Mat::<Complex64>::zeros(5, 0);
        let one = augment_noise_subspace(&empty, &a).unwrap();
        let na = norm(&a);
        for r in 0..5 {
            assert!((one[(r, 0)] - a[r] / na).norm() < 1e-15);
        }
        let b = random_vec(&mut rng, 5);
        let two = augment_noise_subspace(&one, &b).unwrap();
        assert!(orthonormality_error(&[&two]) < 1e-10);
        assert!(matches!(augment_noise_subspace(&one, &a), Err(Error::Annihilated { .. })));
    }

    #[test]
    fn augmentation_with_orthogonal_vector_is_exact() {
        let e = Mat::from_fn(3, 1, |r, _| if r == 0 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        let a = vec![Complex64::new(0.0, 0.0), Complex64::new(3.0, 0.0), Complex64::new(0.0, 4.0)];
        let m = augment_noise_subspace(&e, &a).unwrap();
        assert_eq!(m[(1, 1)], Complex64::new(0.6, 0.0));
        assert_eq!(m[(2, 1)], Complex64::new(0.0, 0.8));
    }

    #[test]
    fn basis_matches_matrix_augmentation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let d = 8;
        let mut r = Mat::<Complex64>::zeros(d, d);
        for _ in 0..12 {
            r += outer(&random_vec(&mut rng, d));
        }
        let p = eig_split(&r, 3).unwrap();
        let mut basis = p.noise_basis();
        let a = random_vec(&mut rng, d);
        basis.augment(&a).unwrap();
        let en = augment_noise_subspace(&p.noise, &a).unwrap();
        assert_eq!(basis.rank(), en.ncols());
        assert!((&en - &basis.to_matrix()).norm_l2() < 1e-12);
        let x = random_vec(&mut rng, d);
        let direct: f64 =
            (0..en.ncols()).map(|c| (0..d).map(|r| en[(r, c)].conj() * x[r]).sum::<Complex64>().norm_sqr()).sum();
        assert!((basis.quad(&x) - direct).abs() < 1e-12 * direct);
    }

    #[test]
    fn augmentation_raises_null_spectrum() {
        // Two targets in a (theta, v) slice; suppressing target 1 lifts
        // its null-spectrum value.
        let c = SystemConfig::nr_fr2(8, 4, 16);
        let s = Scenario::new(c, vec![Target::new(10.0, 30.0, 5.0), Target::new(-20.0, 50.0, -8.0)], 20.0);
        let obs = synthesize(&s, 3);
        let sm = smooth_2d(&obs, [Axis::Antenna, Axis::Symbol], [4, 8]).unwrap();
        let p = eig_split(&covariance(&sm), 2).unwrap();
        let st = steering(&c, 10.0, 30.0, 5.0, [4, 1, 8]).unwrap();
        let a = kron(&st.a_theta, &st.a_v);
        let mut basis = p.noise_basis();
        let before = basis.quad(&a);
        basis.augment(&a).unwrap();
        assert!(basis.quad(&a) > before);
    }
}
