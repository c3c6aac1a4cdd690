//! Two-dimensional MUSIC refinement by Levenberg-Marquardt with iterative
//! noise-subspace updating.
//!
//! The optimization variables are the two real phases of the active axes;
//! the 2D steering vector is `a_a(phi_a) (x) a_b(phi_b)` with the first
//! active axis outermost, matching the row order of the 2D smoothing.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::init1d::{InitialTriplets, RootPolynomial};
use crate::scenario::{wrap_phase, Axis, SmoothingConfig, SystemConfig};
use crate::signal::{kron, steering_derivative, steering_vector, Observation};
use crate::smoothing::smooth_2d;
use crate::subspace::{covariance, dot, eig_split, ComplementBasis, NoiseBasis, NullSpace, SubspacePair};

/// Levenberg-Marquardt controls.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmSettings {
    pub q_max: usize,
    /// Gradient tolerance.
    pub eps1: f64,
    /// Step tolerance.
    pub eps2: f64,
    /// Initial damping scale.
    pub tau: f64,
}

impl Default for LmSettings {
    fn default() -> Self {
        LmSettings { q_max: 100, eps1: 1e-10, eps2: 1e-10, tau: 1e-3 }
    }
}

impl LmSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.q_max > 0
            && self.eps1 > 0.0
            && self.eps2 > 0.0
            && self.tau > 0.0
            && [self.eps1, self.eps2, self.tau].iter().all(|x| x.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!("LM settings must be positive: {self:?}")))
        }
    }
}

/// Point on the unit torus, parameterized by two real phases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kappa2D {
    pub phases: [f64; 2],
}

impl Kappa2D {
    pub fn new(phase_a: f64, phase_b: f64) -> Self {
        Kappa2D { phases: [phase_a, phase_b] }
    }

    pub fn kappa(&self) -> [Complex64; 2] {
        self.phases.map(|p| Complex64::from_polar(1.0, p))
    }

    /// Norm of the complex pair, always sqrt(2).
    pub fn norm(&self) -> f64 {
        std::f64::consts::SQRT_2
    }
}

/// 2D steering vector `a_a (x) a_b`.
pub fn steering_2d(kappa: &Kappa2D, dims: [usize; 2]) -> Vec<Complex64> {
    kron(&steering_vector(kappa.phases[0], dims[0]), &steering_vector(kappa.phases[1], dims[1]))
}

/// Derivatives of [`steering_2d`] with respect to the two phases.
pub fn steering_2d_derivatives(kappa: &Kappa2D, dims: [usize; 2]) -> [Vec<Complex64>; 2] {
    let a = steering_vector(kappa.phases[0], dims[0]);
    let b = steering_vector(kappa.phases[1], dims[1]);
    let da = steering_derivative(kappa.phases[0], dims[0]);
    let db = steering_derivative(kappa.phases[1], dims[1]);
    [kron(&da, &b), kron(&a, &db)]
}

fn check_dims<S: NullSpace>(noise: &S, dims: [usize; 2]) -> Result<()> {
    if dims[0] * dims[1] != noise.dim() {
        return Err(Error::Dimension(format!("dims {dims:?} vs noise basis of {} rows", noise.dim())));
    }
    Ok(())
}

/// Null spectrum `G = a^H E_n E_n^H a`.
pub fn null_spectrum(noise: &NoiseBasis, kappa: &Kappa2D, dims: [usize; 2]) -> Result<f64> {
    check_dims(noise, dims)?;
    Ok(noise.quad(&steering_2d(kappa, dims)))
}

/// `J = sqrt(2) E_n^H [da/dphi_a, da/dphi_b]`, one column per phase.
pub fn jacobian(noise: &NoiseBasis, kappa: &Kappa2D, dims: [usize; 2]) -> Result<[Vec<Complex64>; 2]> {
    check_dims(noise, dims)?;
    let s = std::f64::consts::SQRT_2;
    Ok(steering_2d_derivatives(kappa, dims).map(|d| noise.coords(&d).into_iter().map(|x| x * s).collect()))
}

/// Objective, gradient `Re(J^H g)` and Gauss-Newton matrix `Re(J^H J)`
/// at one point, written through the projector `P = E_n E_n^H`.
struct Local {
    g: f64,
    grad: [f64; 2],
    hess: [[f64; 2]; 2],
}

fn local<S: NullSpace>(noise: &S, kappa: &Kappa2D, dims: [usize; 2]) -> Local {
    let pa = noise.project(&steering_2d(kappa, dims));
    let [da, db] = steering_2d_derivatives(kappa, dims).map(|d| noise.project(&d));
    let g = pa.iter().map(|x| x.norm_sqr()).sum::<f64>();
    let grad = [2.0 * dot(&da, &pa).re, 2.0 * dot(&db, &pa).re];
    let hab = 2.0 * dot(&da, &db).re;
    let hess = [[2.0 * dot(&da, &da).re, hab], [hab, 2.0 * dot(&db, &db).re]];
    Local { g, grad, hess }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Gradient infinity norm at or below `eps1`.
    Gradient,
    /// Step norm at or below `eps2 (||kappa|| + eps2)`.
    Step,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmDiagnostics {
    pub iterations: usize,
    pub final_g: f64,
    /// The returned point is stationary: `||Re J^H g||_inf <= 10 eps1`.
    pub converged: bool,
    pub stop: StopReason,
    pub grad_inf: f64,
    /// Objective at the start and after every accepted step.
    pub g_history: Vec<f64>,
}

fn inf_norm(x: [f64; 2]) -> f64 {
    x[0].abs().max(x[1].abs())
}

/// Minimizes the null spectrum from `kappa0`.
pub fn lm_minimize<S: NullSpace>(
    noise: &S,
    kappa0: Kappa2D,
    settings: &LmSettings,
    dims: [usize; 2],
) -> Result<(Kappa2D, LmDiagnostics)> {
    check_dims(noise, dims)?;
    if kappa0.phases.iter().any(|p| !p.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let mut kappa = kappa0;
    let mut cur = local(noise, &kappa, dims);
    let mut history = vec![cur.g];
    let mut mu = settings.tau * cur.hess[0][0].max(cur.hess[1][1]);
    let mut nu = 2.0;
    let mut q = 0;
    let mut stop = StopReason::MaxIterations;
    if inf_norm(cur.grad) <= settings.eps1 {
        stop = StopReason::Gradient;
    }

    while stop == StopReason::MaxIterations && q < settings.q_max {
        q += 1;
        // h = -(H + mu I)^{-1} grad, 2x2 closed form.
        let a = cur.hess[0][0] + mu;
        let b = cur.hess[0][1];
        let d = cur.hess[1][1] + mu;
        let det = a * d - b * b;
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::SingularSystem);
        }
        let h = [-(d * cur.grad[0] - b * cur.grad[1]) / det, -(a * cur.grad[1] - b * cur.grad[0]) / det];
        let h_norm = (h[0] * h[0] + h[1] * h[1]).sqrt();
        if h_norm <= settings.eps2 * (kappa.norm() + settings.eps2) {
            stop = StopReason::Step;
            break;
        }
        let trial = Kappa2D::new(kappa.phases[0] + h[0], kappa.phases[1] + h[1]);
        let next = local(noise, &trial, dims);
        let predicted = 0.5 * (h[0] * (mu * h[0] - cur.grad[0]) + h[1] * (mu * h[1] - cur.grad[1]));
        let actual = cur.g - next.g;
        let rho = if predicted > 0.0 { actual / predicted } else { f64::NEG_INFINITY };
        if rho > 0.0 {
            kappa = trial;
            cur = next;
            history.push(cur.g);
            if inf_norm(cur.grad) <= settings.eps1 {
                stop = StopReason::Gradient;
            }
            mu *= (1.0f64 / 3.0).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
        } else {
            mu *= nu;
            nu *= 2.0;
        }
    }
    let grad_inf = inf_norm(cur.grad);
    let diag = LmDiagnostics {
        iterations: q,
        final_g: cur.g,
        converged: grad_inf <= 10.0 * settings.eps1,
        stop,
        grad_inf,
        g_history: history,
    };
    Ok((kappa, diag))
}

/// Estimation order: ascending weighted 1D root-function value
/// `g_a(k_a)/D_a^2 + g_b(k_b)/D_b^2` at each initial point, stable on ties.
pub fn order_targets(initial_phases: &[[f64; 2]], polys: [&RootPolynomial; 2]) -> Vec<usize> {
    let score = |p: &[f64; 2]| {
        polys[0].spectrum(p[0]) / (polys[0].dim as f64).powi(2)
            + polys[1].spectrum(p[1]) / (polys[1].dim as f64).powi(2)
    };
    let scores: Vec<f64> = initial_phases.iter().map(score).collect();
    let mut order: Vec<usize> = (0..initial_phases.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    order
}

/// How the noise subspace is updated between targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SubspaceUpdate {
    /// Every target is refined on the unaugmented noise subspace.
    Off,
    /// Each target is refined on the subspace augmented with all earlier
    /// estimates, and that point is returned.
    Augmented,
    /// As `Augmented`, then each later target is re-minimized on the
    /// unaugmented subspace: from its initial point, or if that lands on
    /// the minimum of an earlier target, from the augmented estimate. If
    /// both land on earlier targets the augmented estimate is kept.
    /// Augmentation shifts the minima of later targets when steering
    /// vectors overlap; the re-minimization removes that shift.
    #[default]
    Polished,
}

/// Result of one 2D slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair2DEstimates {
    pub axes: [Axis; 2],
    /// Parameter pairs in estimation order.
    pub pairs: Vec<[f64; 2]>,
    /// Index into the initial triplets of each pair.
    pub order: Vec<usize>,
    /// Diagnostics of the run that produced each pair.
    pub diagnostics: Vec<LmDiagnostics>,
    /// Pairs from the augmented subspace before polishing; equal to
    /// `pairs` unless the update mode is `Polished`.
    pub augmented_pairs: Vec<[f64; 2]>,
    /// Noise-subspace update failed before this target; the previous
    /// subspace was used.
    pub augmentation_failed: Vec<bool>,
    pub near_degenerate: bool,
}

/// Fraction of a resolution cell under which two minima count as one.
const SAME_MINIMUM: f64 = 1e-3;

/// Both phases within [`SAME_MINIMUM`] of a cell of each other.
fn same_minimum(a: &Kappa2D, b: &Kappa2D, dims: [usize; 2]) -> bool {
    let tau = 2.0 * std::f64::consts::PI;
    (0..2).all(|p| wrap_phase(a.phases[p] - b.phases[p]).abs() < SAME_MINIMUM * tau / dims[p] as f64)
}

/// Window sizes of the active axes.
pub fn slice_dims(axes: [Axis; 2], smoothing: &SmoothingConfig) -> [usize; 2] {
    axes.map(|a| smoothing.size(a))
}

/// Maps the two optimized phases back to parameters.
pub fn phases_to_params(config: &SystemConfig, axes: [Axis; 2], kappa: &Kappa2D) -> Result<[f64; 2]> {
    Ok([config.param_from_phase(axes[0], kappa.phases[0])?, config.param_from_phase(axes[1], kappa.phases[1])?])
}

/// ISU-2DMUSIC on one slice. `polys` are the azimuth, range and velocity
/// root polynomials from the initialization.
pub fn run_isu2dmusic(
    obs: &Observation,
    u: usize,
    axes: [Axis; 2],
    smoothing: &SmoothingConfig,
    init: &InitialTriplets,
    polys: &[RootPolynomial; 3],
    settings: &LmSettings,
    update: SubspaceUpdate,
) -> Result<Pair2DEstimates> {
    settings.validate()?;
    if init.triplets.len() != u {
        return Err(Error::Dimension(format!("{} initial points for {u} targets", init.triplets.len())));
    }
    let dims = slice_dims(axes, smoothing);
    let sm = smooth_2d(obs, axes, dims)?;
    if u >= sm.rows() {
        return Err(Error::Window(format!("{u} targets need more than {} rows", sm.rows())));
    }
    let split = eig_split(&covariance(&sm), u)?;
    // Hold whichever side of the split is smaller.
    if split.noise.ncols() <= split.signal.ncols() {
        refine_targets(obs, axes, dims, &split, split.noise_basis(), init, polys, settings, update)
    } else {
        refine_targets(obs, axes, dims, &split, ComplementBasis::new(&split.signal), init, polys, settings, update)
    }
}

#[allow(clippy::too_many_arguments)]
fn refine_targets<S: NullSpace + Clone>(
    obs: &Observation,
    axes: [Axis; 2],
    dims: [usize; 2],
    split: &SubspacePair,
    base: S,
    init: &InitialTriplets,
    polys: &[RootPolynomial; 3],
    settings: &LmSettings,
    update: SubspaceUpdate,
) -> Result<Pair2DEstimates> {
    let u = init.triplets.len();
    let mut noise = base.clone();
    let config = &obs.config;

    let initial: Vec<[f64; 2]> = init.triplets.iter().map(|t| axes.map(|a| config.phase(a, t[a.index()]))).collect();
    let order = order_targets(&initial, [&polys[axes[0].index()], &polys[axes[1].index()]]);

    let mut out = Pair2DEstimates {
        axes,
        pairs: Vec::with_capacity(u),
        order: order.clone(),
        diagnostics: Vec::with_capacity(u),
        augmented_pairs: Vec::with_capacity(u),
        augmentation_failed: Vec::with_capacity(u),
        near_degenerate: split.near_degenerate,
    };
    let mut previous: Option<Vec<Complex64>> = None;
    let mut finals: Vec<Kappa2D> = Vec::with_capacity(u);
    for &i in &order {
        let mut failed = false;
        if update != SubspaceUpdate::Off {
            if let Some(a) = previous.take() {
                failed = noise.augment(&a).is_err();
            }
        }
        let k0 = Kappa2D::new(initial[i][0], initial[i][1]);
        let (k, diag) = lm_minimize(&noise, k0, settings, dims)?;
        previous = Some(steering_2d(&k, dims));
        let augmented = phases_to_params(config, axes, &k)?;
        let (k, diag) = if update == SubspaceUpdate::Polished && noise.rank() != base.rank() {
            let fresh = |c: &(Kappa2D, LmDiagnostics)| !finals.iter().any(|f| same_minimum(f, &c.0, dims));
            let from_init = lm_minimize(&base, k0, settings, dims)?;
            if fresh(&from_init) {
                from_init
            } else {
                let from_augmented = lm_minimize(&base, k, settings, dims)?;
                if fresh(&from_augmented) {
                    from_augmented
                } else {
                    (k, diag)
                }
            }
        } else {
            (k, diag)
        };
        finals.push(k);
        out.pairs.push(phases_to_params(config, axes, &k)?);
        out.augmented_pairs.push(augmented);
        out.diagnostics.push(diag);
        out.augmentation_failed.push(failed);
    }
    Ok(out)
}
