//! Observation cube synthesis, steering vectors and the manifold matrix.
//!
//! The cube is stored flat in the order antenna, subcarrier, symbol with
//! the symbol index fastest, so the flat vector is the stacked observation
//! `z` and steering vectors are the Kronecker product `a_theta (x) a_r (x) a_v`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scenario::{phase_increments, Scenario, SystemConfig, Target};

/// Noisy frequency-domain observation cube of shape (L, N, M).
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    data: Vec<Complex64>,
    dims: [usize; 3],
    pub config: SystemConfig,
}

impl Observation {
    /// Wraps a flat vector in observation order. Dimensions come from the
    /// config.
    pub fn new(config: SystemConfig, data: Vec<Complex64>) -> Result<Self> {
        let dims = config.dims();
        let expected: usize = dims.iter().product();
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "cube has {} entries, config {:?} needs {expected}",
                data.len(),
                dims
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Dimension("observation has non-finite entries".into()));
        }
        Ok(Observation { data, dims, config })
    }

    pub fn zeros(config: SystemConfig) -> Self {
        let dims = config.dims();
        Observation { data: vec![Complex64::new(0.0, 0.0); dims.iter().product()], dims, config }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn index(&self, l: usize, n: usize, m: usize) -> usize {
        (l * self.dims[1] + n) * self.dims[2] + m
    }

    pub fn get(&self, l: usize, n: usize, m: usize) -> Complex64 {
        self.data[self.index(l, n, m)]
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    /// The stacked observation vector `z`.
    pub fn flatten(&self) -> Vec<Complex64> {
        self.data.clone()
    }

    /// Inverse of [`Observation::flatten`].
    pub fn unflatten(config: SystemConfig, z: Vec<Complex64>) -> Result<Self> {
        Observation::new(config, z)
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    /// Serializes to the flat binary format: seven little-endian header
    /// fields (L, N, M as u64; f_c, df, symbol period, antenna spacing as
    /// f64) followed by interleaved re/im f64 samples in flattening order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(56 + 16 * self.data.len());
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for x in [c.carrier_freq_hz, c.subcarrier_spacing_hz, c.symbol_period(), c.antenna_spacing_m] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        for z in &self.data {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
        out
    }

    /// Parses the binary format. The data duration is taken as 1/df and
    /// the cyclic prefix as the remainder of the stored symbol period;
    /// noise power is not stored and reads back as 0.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 56 {
            return Err(Error::Parse("binary observation shorter than its header".into()));
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().unwrap() };
        let dims = [0, 1, 2].map(|i| u64::from_le_bytes(word(i)) as usize);
        let [fc, df, t_sym, d] = [3, 4, 5, 6].map(|i| f64::from_le_bytes(word(i)));
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &x| acc.checked_mul(x))
            .ok_or_else(|| Error::Parse("header dimensions overflow".into()))?;
        if bytes.len() != 56 + 16 * count {
            return Err(Error::Parse(format!(
                "binary observation has {} bytes, header implies {}",
                bytes.len(),
                56 + 16 * count
            )));
        }
        let data = bytes[56..]
            .chunks_exact(16)
            .map(|c| {
                Complex64::new(
                    f64::from_le_bytes(c[..8].try_into().unwrap()),
                    f64::from_le_bytes(c[8..].try_into().unwrap()),
                )
            })
            .collect();
        let config = SystemConfig {
            carrier_freq_hz: fc,
            subcarrier_spacing_hz: df,
            data_duration_s: 1.0 / df,
            cp_duration_s: t_sym - 1.0 / df,
            n_antennas: dims[0],
            n_subcarriers: dims[1],
            n_symbols: dims[2],
            antenna_spacing_m: d,
            noise_power: 0.0,
        };
        Observation::new(config, data)
    }

    pub fn write_to(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::Io { path: path.display().to_string(), source };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()).map_err(io)
    }

    pub fn read_from(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let io = |source| Error::Io { path: path.display().to_string(), source };
        let mut bytes = Vec::new();
        std::fs::File::open(path).map_err(io)?.read_to_end(&mut bytes).map_err(io)?;
        Observation::from_bytes(&bytes)
    }
}

/// `[1, e^{j phi}, ..., e^{j (len-1) phi}]`, each entry evaluated directly
/// rather than by recurrence.
pub fn steering_vector(phase: f64, len: usize) -> Vec<Complex64> {
    (0..len).map(|k| Complex64::from_polar(1.0, k as f64 * phase)).collect()
}

/// Derivative of [`steering_vector`] with respect to the phase.
pub fn steering_derivative(phase: f64, len: usize) -> Vec<Complex64> {
    (0..len).map(|k| Complex64::new(0.0, k as f64) * Complex64::from_polar(1.0, k as f64 * phase)).collect()
}

/// Kronecker product of two vectors.
pub fn kron(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a {
        out.extend(b.iter().map(|y| x * y));
    }
    out
}

/// Per-dimension steering vectors and their Kronecker product.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSet {
    pub a_theta: Vec<Complex64>,
    pub a_r: Vec<Complex64>,
    pub a_v: Vec<Complex64>,
    pub a_full: Vec<Complex64>,
}

fn check_dims(config: &SystemConfig, dims: [usize; 3]) -> Result<()> {
    let full = config.dims();
    for i in 0..3 {
        if dims[i] == 0 || dims[i] > full[i] {
            return Err(Error::Dimension(format!("steering dims {dims:?} must lie within 1..={full:?}")));
        }
    }
    Ok(())
}

/// Steering vectors of one target, truncated to `dims` (the full cube or a
/// smoothing window).
pub fn steering(
    config: &SystemConfig,
    theta_deg: f64,
    range_m: f64,
    velocity_mps: f64,
    dims: [usize; 3],
) -> Result<SteeringSet> {
    check_dims(config, dims)?;
    let t = Target::new(theta_deg, range_m, velocity_mps);
    let [pt, pr, pv] = phase_increments(config, &t);
    let a_theta = steering_vector(pt, dims[0]);
    let a_r = steering_vector(pr, dims[1]);
    let a_v = steering_vector(pv, dims[2]);
    let a_full = kron(&kron(&a_theta, &a_r), &a_v);
    Ok(SteeringSet { a_theta, a_r, a_v, a_full })
}

/// Manifold matrix and its Khatri-Rao factors.
#[derive(Debug, Clone)]
pub struct Manifold {
    pub a: Mat<Complex64>,
    pub a_theta: Mat<Complex64>,
    pub a_r: Mat<Complex64>,
    pub a_v: Mat<Complex64>,
}

impl Manifold {
    pub fn new(config: &SystemConfig, targets: &[Target], dims: [usize; 3]) -> Result<Self> {
        check_dims(config, dims)?;
        let phases: Vec<[f64; 3]> = targets.iter().map(|t| phase_increments(config, t)).collect();
        let factor = |axis: usize| {
            Mat::from_fn(dims[axis], targets.len(), |k, i| Complex64::from_polar(1.0, k as f64 * phases[i][axis]))
        };
        let a_theta = factor(0);
        let a_r = factor(1);
        let a_v = factor(2);
        let a = khatri_rao(&khatri_rao(&a_theta, &a_r), &a_v);
        Ok(Manifold { a, a_theta, a_r, a_v })
    }

    /// Manifold matrix times coefficients, i.e. the noiseless `z`.
    pub fn apply(&self, alpha: &[Complex64]) -> Vec<Complex64> {
        let rows = self.a.nrows();
        (0..rows).map(|r| (0..alpha.len()).map(|i| self.a[(r, i)] * alpha[i]).sum()).collect()
    }
}

/// Columnwise Kronecker product.
pub fn khatri_rao(a: &Mat<Complex64>, b: &Mat<Complex64>) -> Mat<Complex64> {
    assert_eq!(a.ncols(), b.ncols());
    let rb = b.nrows();
    Mat::from_fn(a.nrows() * rb, a.ncols(), |r, c| a[(r / rb, c)] * b[(r % rb, c)])
}

/// Derives an independent trial seed from a master seed and two indices
/// (SplitMix64 finalizer over a combined word), so trials can run in any
/// order.
pub fn trial_seed(master: u64, group: u64, trial: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ group) ^ trial)
}

/// Backscatter coefficients used for one trial: the stored values, or
/// their magnitudes with uniform random phases when the scenario asks for
/// that.
fn draw_alpha(scenario: &Scenario, rng: &mut ChaCha20Rng) -> Vec<Complex64> {
    scenario
        .targets
        .iter()
        .map(|t| {
            if scenario.random_phases {
                let phase: f64 = rng.gen_range(0.0..2.0 * PI);
                Complex64::from_polar(t.backscatter.norm(), phase)
            } else {
                t.backscatter
            }
        })
        .collect()
}

/// Synthesizes the cube and returns the backscatter coefficients actually
/// used. Randomness comes from ChaCha20 seeded with `seed`: phases first,
/// then noise in flattening order (real part, then imaginary part).
pub fn synthesize_with_alpha(scenario: &Scenario, seed: u64) -> (Observation, Vec<Complex64>) {
    let config = scenario.config;
    let [l_len, n_len, m_len] = config.dims();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let alpha = draw_alpha(scenario, &mut rng);

    let mut data = vec![Complex64::new(0.0, 0.0); l_len * n_len * m_len];
    for (t, a) in scenario.targets.iter().zip(&alpha) {
        let [pt, pr, pv] = phase_increments(&config, t);
        let at = steering_vector(pt, l_len);
        let ar = steering_vector(pr, n_len);
        let av = steering_vector(pv, m_len);
        for l in 0..l_len {
            for n in 0..n_len {
                let w = a * at[l] * ar[n];
                let row = &mut data[(l * n_len + n) * m_len..][..m_len];
                for (z, v) in row.iter_mut().zip(&av) {
                    *z += w * v;
                }
            }
        }
    }

    if config.noise_power > 0.0 {
        let scale = (config.noise_power / 2.0).sqrt();
        for z in &mut data {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(scale * re, scale * im);
        }
    }
    let obs = Observation { data, dims: config.dims(), config };
    (obs, alpha)
}

/// Synthesizes the noisy observation cube for one trial.
pub fn synthesize(scenario: &Scenario, seed: u64) -> Observation {
    synthesize_with_alpha(scenario, seed).0
}
