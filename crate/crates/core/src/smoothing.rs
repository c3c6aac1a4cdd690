//! Spatial smoothing: sliding sub-windows of the cube used as snapshots.
//!
//! A smoothing is described by a window size per axis and an ordered list
//! of kept axes. Kept axes contribute window offsets to the row index
//! (Kronecker order, first kept axis outermost); every other axis has a
//! window of one and is used whole as a snapshot axis. Snapshots are
//! enumerated with the antenna start outermost and the symbol start
//! fastest, `s = (l * S_f + n) * S_t + m`.

use faer::Mat;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{Axis, SmoothingConfig};
use crate::signal::Observation;

/// Default cap on materialized snapshot entries (D * S), 128 MiB of data.
pub const DEFAULT_BUDGET: usize = 1 << 23;

/// Snapshot view of an observation. Columns are extracted on demand; the
/// full D x S matrix is only built by [`SnapshotMatrix::to_matrix`].
#[derive(Debug, Clone)]
pub struct SnapshotMatrix<'a> {
    obs: &'a Observation,
    kept: Vec<Axis>,
    windows: [usize; 3],
    counts: [usize; 3],
}

impl<'a> SnapshotMatrix<'a> {
    /// Builds the view for the given kept axes and their window sizes.
    pub fn new(obs: &'a Observation, kept: &[Axis], sizes: &[usize]) -> Result<Self> {
        if kept.is_empty() || kept.len() != sizes.len() || kept.len() > 3 {
            return Err(Error::Window(format!("{} kept axes with {} window sizes", kept.len(), sizes.len())));
        }
        for (i, a) in kept.iter().enumerate() {
            if kept[..i].contains(a) {
                return Err(Error::Window(format!("axis {a} kept twice")));
            }
        }
        let dims = obs.dims();
        let mut windows = [1; 3];
        for (a, &w) in kept.iter().zip(sizes) {
            let len = dims[a.index()];
            if w == 0 || w > len {
                return Err(Error::Window(format!("{a} window {w} not in 1..={len}")));
            }
            windows[a.index()] = w;
        }
        let counts = [0, 1, 2].map(|i| dims[i] - windows[i] + 1);
        Ok(SnapshotMatrix { obs, kept: kept.to_vec(), windows, counts })
    }

    pub fn kept_axes(&self) -> &[Axis] {
        &self.kept
    }

    /// Window size per axis in natural order (1 for snapshot-only axes).
    pub fn windows(&self) -> [usize; 3] {
        self.windows
    }

    /// Window sizes of the kept axes in kept order.
    pub fn sub_sizes(&self) -> Vec<usize> {
        self.kept.iter().map(|a| self.windows[a.index()]).collect()
    }

    /// Number of window positions per axis in natural order.
    pub fn snapshot_counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn observation(&self) -> &Observation {
        self.obs
    }

    /// Rows D.
    pub fn rows(&self) -> usize {
        self.windows.iter().product()
    }

    /// Snapshots S.
    pub fn cols(&self) -> usize {
        self.counts.iter().product()
    }

    /// Window offset (natural axis order) addressed by row `r`.
    pub fn row_offset(&self, mut r: usize) -> [usize; 3] {
        let mut o = [0; 3];
        for a in self.kept.iter().rev() {
            let w = self.windows[a.index()];
            o[a.index()] = r % w;
            r /= w;
        }
        o
    }

    /// Row index of a window offset.
    pub fn row_index(&self, offset: [usize; 3]) -> usize {
        self.kept.iter().fold(0, |acc, a| acc * self.windows[a.index()] + offset[a.index()])
    }

    /// Window start of snapshot `s`.
    pub fn snapshot_start(&self, s: usize) -> [usize; 3] {
        let [_, sf, st] = self.counts;
        [s / (sf * st), (s / st) % sf, s % st]
    }

    /// Copies snapshot column `s`.
    pub fn column(&self, s: usize) -> Vec<Complex64> {
        let p = self.snapshot_start(s);
        (0..self.rows())
            .map(|r| {
                let o = self.row_offset(r);
                self.obs.get(p[0] + o[0], p[1] + o[1], p[2] + o[2])
            })
            .collect()
    }

    /// Materializes the D x S matrix if it fits `budget` entries.
    pub fn to_matrix(&self, budget: usize) -> Result<Mat<Complex64>> {
        let entries = self.rows().saturating_mul(self.cols());
        if entries > budget {
            return Err(Error::Budget { entries, budget });
        }
        let mut out = Mat::zeros(self.rows(), self.cols());
        for s in 0..self.cols() {
            for (r, v) in self.column(s).into_iter().enumerate() {
                out[(r, s)] = v;
            }
        }
        Ok(out)
    }

    /// Sample covariance (1/S) sum_s b_s b_s^H, streamed without building
    /// the snapshot matrix.
    ///
    /// Entry (r1, r2) depends on the row offsets only through their lag
    /// `delta = o2 - o1`: it is a box sum of `Z[q] conj(Z[q + delta])` over
    /// the window positions shifted by `o1`. One product array and one
    /// summed-area table per lag serve every entry sharing it, and lags
    /// with `-delta` follow from Hermitian symmetry.
    pub fn covariance(&self) -> Mat<Complex64> {
        let d = self.rows();
        let mut cov = Mat::<Complex64>::zeros(d, d);
        let dims = self.obs.dims();
        let data = self.obs.as_slice();
        let w = self.windows;
        let s_count = self.counts;
        let inv_s = 1.0 / self.cols() as f64;
        let mut table: Vec<Complex64> = Vec::new();

        let lag_range = |i: usize| -(w[i] as isize - 1)..=(w[i] as isize - 1);
        for d0 in lag_range(0) {
            for d1 in lag_range(1) {
                for d2 in lag_range(2) {
                    let delta = [d0, d1, d2];
                    if !lex_nonnegative(delta) {
                        continue;
                    }
                    let lo = delta.map(|x| (-x).max(0) as usize);
                    let hi = [0, 1, 2].map(|i| dims[i] - delta[i].max(0) as usize);
                    // Extent of the reduced array: axes with a unit window
                    // are always summed whole and collapse to one cell.
                    let ext = [0, 1, 2].map(|i| if w[i] == 1 { 1 } else { hi[i] - lo[i] });
                    lag_table(data, dims, delta, lo, hi, ext, &mut table);

                    let stride = [(ext[1] + 1) * (ext[2] + 1), ext[2] + 1, 1];
                    let at = |i: usize, j: usize, k: usize| table[i * stride[0] + j * stride[1] + k];
                    for o0 in lo[0]..w[0] - delta[0].max(0) as usize {
                        for o1 in lo[1]..w[1] - delta[1].max(0) as usize {
                            for o2 in lo[2]..w[2] - delta[2].max(0) as usize {
                                let o = [o0, o1, o2];
                                // Box [o, o + S) in reduced coordinates.
                                let a = [0, 1, 2].map(|i| if w[i] == 1 { 0 } else { o[i] - lo[i] });
                                let b = [0, 1, 2].map(|i| if w[i] == 1 { 1 } else { a[i] + s_count[i] });
                                let sum = at(b[0], b[1], b[2])
                                    - at(a[0], b[1], b[2])
                                    - at(b[0], a[1], b[2])
                                    - at(b[0], b[1], a[2])
                                    + at(a[0], a[1], b[2])
                                    + at(a[0], b[1], a[2])
                                    + at(b[0], a[1], a[2])
                                    - at(a[0], a[1], a[2]);
                                let r1 = self.row_index(o);
                                let r2 = self.row_index([0, 1, 2].map(|i| (o[i] as isize + delta[i]) as usize));
                                let v = sum * inv_s;
                                cov[(r1, r2)] = v;
                                cov[(r2, r1)] = v.conj();
                            }
                        }
                    }
                }
            }
        }
        for r in 0..d {
            cov[(r, r)].im = 0.0;
        }
        cov
    }
}

fn lex_nonnegative(delta: [isize; 3]) -> bool {
    for x in delta {
        if x != 0 {
            return x > 0;
        }
    }
    true
}

/// Fills `table` with the summed-area table of the lag products
/// `Z[q] conj(Z[q + delta])`, q in `[lo, hi)`, reduced to extent `ext`.
/// The table has a zero border: shape (ext + 1) per axis.
fn lag_table(
    data: &[Complex64],
    dims: [usize; 3],
    delta: [isize; 3],
    lo: [usize; 3],
    hi: [usize; 3],
    ext: [usize; 3],
    table: &mut Vec<Complex64>,
) {
    let shape = ext.map(|e| e + 1);
    let zero = Complex64::new(0.0, 0.0);
    table.clear();
    table.resize(shape[0] * shape[1] * shape[2], zero);
    let stride = [shape[1] * shape[2], shape[2], 1];
    let shift = delta[0] * (dims[1] * dims[2]) as isize + delta[1] * dims[2] as isize + delta[2];
    let collapse = ext.map(|e| e == 1);
    let m_len = hi[2] - lo[2];

    for l in lo[0]..hi[0] {
        let i = if collapse[0] { 1 } else { l - lo[0] + 1 };
        for n in lo[1]..hi[1] {
            let j = if collapse[1] { 1 } else { n - lo[1] + 1 };
            let base = (l * dims[1] + n) * dims[2] + lo[2];
            let src = &data[base..base + m_len];
            let dst = &data[(base as isize + shift) as usize..][..m_len];
            let row = &mut table[i * stride[0] + j * stride[1]..][..shape[2]];
            if collapse[2] {
                let mut acc = zero;
                for (a, b) in src.iter().zip(dst) {
                    acc += a * b.conj();
                }
                row[1] += acc;
            } else {
                for ((cell, a), b) in row[1..].iter_mut().zip(src).zip(dst) {
                    *cell += a * b.conj();
                }
            }
        }
    }
    // Prefix sums along each axis.
    for i in 1..shape[0] {
        for j in 1..shape[1] {
            let row = &mut table[i * stride[0] + j * stride[1]..][..shape[2]];
            for k in 1..shape[2] {
                row[k] += row[k - 1];
            }
        }
    }
    for i in 1..shape[0] {
        for j in 2..shape[1] {
            for k in 1..shape[2] {
                let prev = table[i * stride[0] + (j - 1) * stride[1] + k];
                table[i * stride[0] + j * stride[1] + k] += prev;
            }
        }
    }
    for i in 2..shape[0] {
        for j in 1..shape[1] {
            for k in 1..shape[2] {
                let prev = table[(i - 1) * stride[0] + j * stride[1] + k];
                table[i * stride[0] + j * stride[1] + k] += prev;
            }
        }
    }
}

/// Full 3D smoothing with windows (L~, N~, M~).
pub fn smooth_3d<'a>(obs: &'a Observation, cfg: &SmoothingConfig) -> Result<SnapshotMatrix<'a>> {
    SnapshotMatrix::new(obs, &Axis::ALL, &cfg.sizes())
}

/// Smoothing along one axis; the other two axes are snapshot axes.
pub fn smooth_1d(obs: &Observation, axis: Axis, sub_size: usize) -> Result<SnapshotMatrix<'_>> {
    SnapshotMatrix::new(obs, &[axis], &[sub_size])
}

/// Smoothing along two axes, rows in Kronecker order of `kept`.
pub fn smooth_2d(obs: &Observation, kept: [Axis; 2], sub_sizes: [usize; 2]) -> Result<SnapshotMatrix<'_>> {
    if kept[0] == kept[1] {
        return Err(Error::Window("2D smoothing needs two distinct axes".into()));
    }
    SnapshotMatrix::new(obs, &kept, &sub_sizes)
}
