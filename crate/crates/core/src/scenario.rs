//! System constants, ground-truth targets and their validation.
//!
//! Angles are degrees at the API surface and radians internally. The phase
//! increments between adjacent antennas, subcarriers and symbols are the
//! quantities every estimator inverts; [`SystemConfig::phase`] and
//! [`SystemConfig::param_from_phase`] are the single place where the
//! parameter/phase maps live.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::music2d::LmSettings;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// One of the three observation axes, each carrying one parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    /// Receive antennas; carries azimuth.
    Antenna,
    /// Subcarriers; carries range.
    Subcarrier,
    /// OFDM symbols; carries velocity.
    Symbol,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Antenna, Axis::Subcarrier, Axis::Symbol];

    pub fn index(self) -> usize {
        match self {
            Axis::Antenna => 0,
            Axis::Subcarrier => 1,
            Axis::Symbol => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }

    pub fn parameter_name(self) -> &'static str {
        match self {
            Axis::Antenna => "azimuth",
            Axis::Subcarrier => "range",
            Axis::Symbol => "velocity",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.parameter_name())
    }
}

/// Waveform and array constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub carrier_freq_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub data_duration_s: f64,
    pub cp_duration_s: f64,
    pub n_antennas: usize,
    pub n_subcarriers: usize,
    pub n_symbols: usize,
    pub antenna_spacing_m: f64,
    pub noise_power: f64,
}

impl SystemConfig {
    /// 5G NR FR2 numerology used for the reference experiments: 25 GHz
    /// carrier, 120 kHz spacing, 0.59 us cyclic prefix, half-wavelength ULA.
    pub fn nr_fr2(n_antennas: usize, n_subcarriers: usize, n_symbols: usize) -> Self {
        let carrier_freq_hz = 25e9;
        let subcarrier_spacing_hz = 120e3;
        SystemConfig {
            carrier_freq_hz,
            subcarrier_spacing_hz,
            data_duration_s: 1.0 / subcarrier_spacing_hz,
            cp_duration_s: 0.59e-6,
            n_antennas,
            n_subcarriers,
            n_symbols,
            antenna_spacing_m: SPEED_OF_LIGHT / carrier_freq_hz / 2.0,
            noise_power: 0.0,
        }
    }

    /// Overall OFDM symbol period T + T_cp.
    pub fn symbol_period(&self) -> f64 {
        self.data_duration_s + self.cp_duration_s
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_freq_hz
    }

    /// Cube dimensions (L, N, M).
    pub fn dims(&self) -> [usize; 3] {
        [self.n_antennas, self.n_subcarriers, self.n_symbols]
    }

    pub fn len(&self, axis: Axis) -> usize {
        self.dims()[axis.index()]
    }

    pub fn max_range(&self) -> f64 {
        SPEED_OF_LIGHT / (2.0 * self.subcarrier_spacing_hz)
    }

    pub fn max_speed(&self) -> f64 {
        SPEED_OF_LIGHT / (4.0 * self.carrier_freq_hz * self.symbol_period())
    }

    /// Rayleigh resolution of one axis in parameter units (degrees at
    /// broadside for azimuth, metres, m/s).
    pub fn rayleigh(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Antenna => {
                let aperture = self.n_antennas as f64 * self.antenna_spacing_m;
                (self.wavelength() / aperture).asin().to_degrees()
            }
            Axis::Subcarrier => SPEED_OF_LIGHT / (2.0 * self.n_subcarriers as f64 * self.subcarrier_spacing_hz),
            Axis::Symbol => {
                SPEED_OF_LIGHT / (2.0 * self.carrier_freq_hz * self.n_symbols as f64 * self.symbol_period())
            }
        }
    }

    /// Per-step phase rotation along `axis` for a parameter value
    /// (degrees, metres or m/s).
    pub fn phase(&self, axis: Axis, value: f64) -> f64 {
        match axis {
            Axis::Antenna => 2.0 * PI * self.antenna_spacing_m * value.to_radians().sin() / self.wavelength(),
            Axis::Subcarrier => -2.0 * PI * 2.0 * value * self.subcarrier_spacing_hz / SPEED_OF_LIGHT,
            Axis::Symbol => 2.0 * PI * 2.0 * value * self.carrier_freq_hz * self.symbol_period() / SPEED_OF_LIGHT,
        }
    }

    /// Derivative of [`SystemConfig::phase`] with respect to the parameter
    /// (azimuth in radians).
    pub fn phase_derivative(&self, axis: Axis, value: f64) -> f64 {
        match axis {
            Axis::Antenna => 2.0 * PI * self.antenna_spacing_m * value.to_radians().cos() / self.wavelength(),
            Axis::Subcarrier => -4.0 * PI * self.subcarrier_spacing_hz / SPEED_OF_LIGHT,
            Axis::Symbol => 4.0 * PI * self.carrier_freq_hz * self.symbol_period() / SPEED_OF_LIGHT,
        }
    }

    /// Inverse of [`SystemConfig::phase`] for a phase taken modulo 2 pi.
    ///
    /// Azimuth and velocity use the principal value in (-pi, pi]. Range is
    /// one-sided, so its phase is read in (-2 pi, 0] and the result lies in
    /// [0, c / (2 df)).
    pub fn param_from_phase(&self, axis: Axis, phase: f64) -> Result<f64> {
        match axis {
            Axis::Antenna => {
                let s = wrap_phase(phase) * self.wavelength() / (2.0 * PI * self.antenna_spacing_m);
                if s.abs() > 1.0 + 1e-12 {
                    return Err(Error::NonPhysicalRoot(s));
                }
                Ok(s.clamp(-1.0, 1.0).asin().to_degrees())
            }
            Axis::Subcarrier => {
                let p = (-phase).rem_euclid(2.0 * PI);
                Ok(p * SPEED_OF_LIGHT / (4.0 * PI * self.subcarrier_spacing_hz))
            }
            Axis::Symbol => {
                Ok(wrap_phase(phase) * SPEED_OF_LIGHT / (4.0 * PI * self.carrier_freq_hz * self.symbol_period()))
            }
        }
    }
}

/// Wraps a phase into (-pi, pi].
pub fn wrap_phase(phase: f64) -> f64 {
    let p = (phase + PI).rem_euclid(2.0 * PI) - PI;
    if p == -PI {
        PI
    } else {
        p
    }
}

/// Ground-truth target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub azimuth_deg: f64,
    pub range_m: f64,
    pub velocity_mps: f64,
    pub backscatter: Complex64,
}

impl Target {
    pub fn new(azimuth_deg: f64, range_m: f64, velocity_mps: f64) -> Self {
        Target { azimuth_deg, range_m, velocity_mps, backscatter: Complex64::new(1.0, 0.0) }
    }

    pub fn with_backscatter(mut self, backscatter: Complex64) -> Self {
        self.backscatter = backscatter;
        self
    }

    pub fn param(&self, axis: Axis) -> f64 {
        match axis {
            Axis::Antenna => self.azimuth_deg,
            Axis::Subcarrier => self.range_m,
            Axis::Symbol => self.velocity_mps,
        }
    }

    pub fn params(&self) -> [f64; 3] {
        [self.azimuth_deg, self.range_m, self.velocity_mps]
    }
}

/// Per-step phase rotations (azimuth, range, velocity) of one target.
pub fn phase_increments(config: &SystemConfig, target: &Target) -> [f64; 3] {
    Axis::ALL.map(|axis| config.phase(axis, target.param(axis)))
}

/// Converts an SNR in dB to the noise power for unit-magnitude echoes.
pub fn noise_power_from_snr_db(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

/// Configuration plus targets. `config.noise_power` is kept consistent
/// with `snr_db` (reference echo magnitude 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: SystemConfig,
    pub targets: Vec<Target>,
    pub snr_db: f64,
    /// Draw every backscatter phase uniformly per trial instead of using
    /// the phase stored in each target.
    pub random_phases: bool,
}

impl Scenario {
    pub fn new(mut config: SystemConfig, targets: Vec<Target>, snr_db: f64) -> Self {
        config.noise_power = noise_power_from_snr_db(snr_db);
        Scenario { config, targets, snr_db, random_phases: false }
    }

    /// The three-target reference scene at the given dimensions.
    pub fn reference(n_antennas: usize, n_subcarriers: usize, n_symbols: usize, snr_db: f64) -> Self {
        let config = SystemConfig::nr_fr2(n_antennas, n_subcarriers, n_symbols);
        let targets =
            vec![Target::new(20.0, 39.73, -10.0), Target::new(-23.16, 60.5, 29.61), Target::new(-10.6, 80.21, 10.11)];
        Scenario::new(config, targets, snr_db).with_random_phases(true)
    }

    pub fn with_snr_db(&self, snr_db: f64) -> Self {
        let mut s = self.clone();
        s.snr_db = snr_db;
        s.config.noise_power = noise_power_from_snr_db(snr_db);
        s
    }

    pub fn with_random_phases(mut self, random: bool) -> Self {
        self.random_phases = random;
        self
    }

    pub fn n_targets(&self) -> usize {
        self.targets.len()
    }
}

/// Sub-observation window sizes (L~, N~, M~).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothingConfig {
    pub sub_antennas: usize,
    pub sub_subcarriers: usize,
    pub sub_symbols: usize,
}

impl SmoothingConfig {
    pub fn new(sub_antennas: usize, sub_subcarriers: usize, sub_symbols: usize) -> Self {
        SmoothingConfig { sub_antennas, sub_subcarriers, sub_symbols }
    }

    /// Fixed windows (6, 40, 25) used for the RMSE experiments.
    pub fn rmse_preset() -> Self {
        SmoothingConfig::new(6, 40, 25)
    }

    /// Windows scaled with the array: (3L/4, N/10, 3M/8), used for timing.
    pub fn timing_preset(config: &SystemConfig) -> Self {
        SmoothingConfig::new(
            (3 * config.n_antennas / 4).max(1),
            (config.n_subcarriers / 10).max(1),
            (3 * config.n_symbols / 8).max(1),
        )
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.sub_antennas, self.sub_subcarriers, self.sub_symbols]
    }

    pub fn size(&self, axis: Axis) -> usize {
        self.sizes()[axis.index()]
    }

    /// Snapshot counts (S_a, S_f, S_t); `None` when a window is larger
    /// than the array.
    pub fn snapshot_counts(&self, config: &SystemConfig) -> Option<[usize; 3]> {
        let dims = config.dims();
        let sizes = self.sizes();
        let mut out = [0; 3];
        for i in 0..3 {
            if sizes[i] == 0 || sizes[i] > dims[i] {
                return None;
            }
            out[i] = dims[i] - sizes[i] + 1;
        }
        Some(out)
    }
}

const DATA_DURATION_ROUNDING: f64 = 5e-3;

/// Machine-readable validation codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationCode {
    DataDurationMismatch,
    NarrowbandViolated,
    ArrayTooSmall,
    NonPositiveSpacing,
    NegativeNoise,
    NonFiniteValue,
    NoTargets,
    AzimuthOutOfSector,
    RangeExceedsUnambiguous,
    VelocityExceedsUnambiguous,
    DuplicateTargets,
    SmoothingExceedsArray,
    TooManyTargetsForSmoothing,
    /// Warning only: Doppler phase drift within one symbol is not negligible.
    IntraSymbolDoppler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub code: ViolationCode,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }

    pub fn has_warning(&self, code: ViolationCode) -> bool {
        self.warnings.iter().any(|v| v.code == code)
    }

    fn push(&mut self, code: ViolationCode, message: String) {
        self.violations.push(Violation { code, message });
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            let msgs: Vec<_> = self.violations.iter().map(|v| v.message.as_str()).collect();
            Err(Error::InvalidScenario(msgs.join("; ")))
        }
    }
}

/// Checks every scenario invariant, plus the smoothing windows when given.
pub fn validate(scenario: &Scenario, smoothing: Option<&SmoothingConfig>) -> ValidationReport {
    use ViolationCode::*;
    let mut report = ValidationReport::default();
    let c = &scenario.config;

    let reals = [
        c.carrier_freq_hz,
        c.subcarrier_spacing_hz,
        c.data_duration_s,
        c.cp_duration_s,
        c.antenna_spacing_m,
        c.noise_power,
    ];
    if reals.iter().any(|x| !x.is_finite()) {
        report.push(NonFiniteValue, "non-finite system parameter".into());
        return report;
    }
    let t_expected = 1.0 / c.subcarrier_spacing_hz;
    let t_err = ((c.data_duration_s - t_expected) / t_expected).abs();
    if t_err > 1e-9 {
        let v = Violation {
            code: DataDurationMismatch,
            message: format!("data duration {} s differs from 1/df = {} s", c.data_duration_s, t_expected),
        };
        // Three-digit roundings of 1/df (8.33 us) are accepted with a warning.
        if t_err > DATA_DURATION_ROUNDING {
            report.violations.push(v);
        } else {
            report.warnings.push(v);
        }
    }
    if c.carrier_freq_hz <= 10.0 * c.n_subcarriers as f64 * c.subcarrier_spacing_hz {
        report.push(NarrowbandViolated, "carrier frequency not >> bandwidth (f_c <= 10 N df)".into());
    }
    if c.n_antennas < 2 || c.n_subcarriers < 2 || c.n_symbols < 2 {
        report.push(ArrayTooSmall, format!("dimensions {:?} must all be >= 2", c.dims()));
    }
    if c.antenna_spacing_m <= 0.0 {
        report.push(NonPositiveSpacing, "antenna spacing must be positive".into());
    }
    if c.noise_power < 0.0 {
        report.push(NegativeNoise, "noise power must be non-negative".into());
    }

    if scenario.targets.is_empty() {
        report.push(NoTargets, "at least one target is required".into());
    }
    let max_range = c.max_range();
    let max_speed = c.max_speed();
    for (i, t) in scenario.targets.iter().enumerate() {
        let vals = [t.azimuth_deg, t.range_m, t.velocity_mps, t.backscatter.re, t.backscatter.im];
        if vals.iter().any(|x| !x.is_finite()) {
            report.push(NonFiniteValue, format!("target {i} has a non-finite value"));
            continue;
        }
        if t.azimuth_deg.abs() >= 90.0 {
            report.push(AzimuthOutOfSector, format!("target {i} azimuth {} deg outside (-90, 90)", t.azimuth_deg));
        }
        if !(t.range_m > 0.0 && t.range_m < max_range) {
            report.push(
                RangeExceedsUnambiguous,
                format!("target {i} range exceeds unambiguous limit: {} m not in (0, {max_range:.2}) m", t.range_m),
            );
        }
        if t.velocity_mps.abs() >= max_speed {
            report.push(
                VelocityExceedsUnambiguous,
                format!("target {i} velocity {} m/s exceeds unambiguous limit {max_speed:.2} m/s", t.velocity_mps),
            );
        }
        let doppler = 2.0 * t.velocity_mps.abs() * c.carrier_freq_hz / SPEED_OF_LIGHT;
        if doppler * c.symbol_period() >= 0.01 {
            report.warnings.push(Violation {
                code: IntraSymbolDoppler,
                message: format!("target {i}: f_d * T_sym = {:.4} >= 0.01", doppler * c.symbol_period()),
            });
        }
    }
    for i in 0..scenario.targets.len() {
        for j in i + 1..scenario.targets.len() {
            if scenario.targets[i].params() == scenario.targets[j].params() {
                report.push(DuplicateTargets, format!("targets {i} and {j} coincide"));
            }
        }
    }

    if let Some(sm) = smoothing {
        match sm.snapshot_counts(c) {
            None => report.push(
                SmoothingExceedsArray,
                format!("smoothing window exceeds array: {:?} vs {:?}", sm.sizes(), c.dims()),
            ),
            Some(_) => {
                let [a, f, t] = sm.sizes();
                let u = scenario.targets.len();
                let min2d = (a * t).min(a * f).min(f * t);
                if u >= min2d || u >= a.min(f).min(t) {
                    report.push(
                        TooManyTargetsForSmoothing,
                        format!("{u} targets not detectable with windows {:?}", sm.sizes()),
                    );
                }
            }
        }
    }
    report
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SystemSection {
    carrier_freq_hz: f64,
    subcarrier_spacing_hz: f64,
    data_duration_s: Option<f64>,
    cp_duration_s: f64,
    n_antennas: usize,
    n_subcarriers: usize,
    n_symbols: usize,
    antenna_spacing_m: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetSection {
    azimuth_deg: f64,
    range_m: f64,
    velocity_mps: f64,
    #[serde(default = "one")]
    amplitude: f64,
    #[serde(default)]
    phase_rad: f64,
}

fn one() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFileRaw {
    snr_db: f64,
    #[serde(default = "default_true")]
    random_phases: bool,
    system: SystemSection,
    smoothing: Option<SmoothingConfig>,
    lm: Option<LmSettings>,
    targets: Vec<TargetSection>,
}

/// Contents of a scenario file: the scenario plus optional smoothing windows
/// and LM settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioFile {
    pub scenario: Scenario,
    pub smoothing: Option<SmoothingConfig>,
    pub lm: Option<LmSettings>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: ScenarioFileRaw = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let s = raw.system;
        let wavelength = SPEED_OF_LIGHT / s.carrier_freq_hz;
        let config = SystemConfig {
            carrier_freq_hz: s.carrier_freq_hz,
            subcarrier_spacing_hz: s.subcarrier_spacing_hz,
            data_duration_s: s.data_duration_s.unwrap_or(1.0 / s.subcarrier_spacing_hz),
            cp_duration_s: s.cp_duration_s,
            n_antennas: s.n_antennas,
            n_subcarriers: s.n_subcarriers,
            n_symbols: s.n_symbols,
            antenna_spacing_m: s.antenna_spacing_m.unwrap_or(wavelength / 2.0),
            noise_power: 0.0,
        };
        let targets = raw
            .targets
            .iter()
            .map(|t| {
                Target::new(t.azimuth_deg, t.range_m, t.velocity_mps)
                    .with_backscatter(Complex64::from_polar(t.amplitude, t.phase_rad))
            })
            .collect();
        let scenario = Scenario::new(config, targets, raw.snr_db).with_random_phases(raw.random_phases);
        Ok(ScenarioFile { scenario, smoothing: raw.smoothing, lm: raw.lm })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Serializes back to the file format.
    pub fn to_toml(&self) -> String {
        let c = &self.scenario.config;
        let mut out = String::new();
        out.push_str(&format!("snr_db = {}\n", toml_float(self.scenario.snr_db)));
        out.push_str(&format!("random_phases = {}\n\n", self.scenario.random_phases));
        out.push_str("[system]\n");
        out.push_str(&format!("carrier_freq_hz = {}\n", toml_float(c.carrier_freq_hz)));
        out.push_str(&format!("subcarrier_spacing_hz = {}\n", toml_float(c.subcarrier_spacing_hz)));
        out.push_str(&format!("data_duration_s = {}\n", toml_float(c.data_duration_s)));
        out.push_str(&format!("cp_duration_s = {}\n", toml_float(c.cp_duration_s)));
        out.push_str(&format!("n_antennas = {}\n", c.n_antennas));
        out.push_str(&format!("n_subcarriers = {}\n", c.n_subcarriers));
        out.push_str(&format!("n_symbols = {}\n", c.n_symbols));
        out.push_str(&format!("antenna_spacing_m = {}\n", toml_float(c.antenna_spacing_m)));
        if let Some(sm) = &self.smoothing {
            out.push_str("\n[smoothing]\n");
            out.push_str(&format!("sub_antennas = {}\n", sm.sub_antennas));
            out.push_str(&format!("sub_subcarriers = {}\n", sm.sub_subcarriers));
            out.push_str(&format!("sub_symbols = {}\n", sm.sub_symbols));
        }
        if let Some(lm) = &self.lm {
            out.push_str("\n[lm]\n");
            out.push_str(&format!("q_max = {}\n", lm.q_max));
            out.push_str(&format!("eps1 = {}\n", toml_float(lm.eps1)));
            out.push_str(&format!("eps2 = {}\n", toml_float(lm.eps2)));
            out.push_str(&format!("tau = {}\n", toml_float(lm.tau)));
        }
        for t in &self.scenario.targets {
            out.push_str("\n[[targets]]\n");
            out.push_str(&format!("azimuth_deg = {}\n", toml_float(t.azimuth_deg)));
            out.push_str(&format!("range_m = {}\n", toml_float(t.range_m)));
            out.push_str(&format!("velocity_mps = {}\n", toml_float(t.velocity_mps)));
            out.push_str(&format!("amplitude = {}\n", toml_float(t.backscatter.norm())));
            out.push_str(&format!("phase_rad = {}\n", toml_float(t.backscatter.arg())));
        }
        out
    }
}

fn toml_float(x: f64) -> String {
    if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:?}")
    }
}
