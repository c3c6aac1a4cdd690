use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jarve_bench::{
    emit_csv, emit_dat, emit_timing_csv, failure_excess, run_sweep, run_timing, BenchError, Estimator, Result, RunSpec,
    SmoothingChoice,
};
use jarve_core::crb::{crb_single_closed_form, crb_theorem1};
use jarve_core::music2d::{LmSettings, SubspaceUpdate};
use jarve_core::scenario::{validate, Scenario, ScenarioFile};
use jarve_core::signal::{synthesize, trial_seed};

/// Joint azimuth-range-velocity estimation benchmarks.
#[derive(Parser)]
#[command(name = "jarve", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo RMSE against SNR, written as rmse.csv and rmse.dat.
    Sweep(SweepArgs),
    /// Median wall time per estimator and array size, written as timing.csv.
    Timing(TimingArgs),
    /// Root CRBs of the scenario at each SNR.
    Crb(CrbArgs),
    /// One noisy observation in the binary format.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file. Defaults to the three-target reference scene at
    /// (16, 128, 80).
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct CommonArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// SNR grid in dB: a,b,c or start:stop:step.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Comma-separated subset of pi2dmusic, dft3d, grid_oracle.
    #[arg(long)]
    estimators: Option<String>,
    /// rmse, timing or L,N,M. Defaults to the scenario file's windows, or
    /// rmse.
    #[arg(long)]
    smoothing: Option<String>,
    #[arg(long)]
    q_max: Option<usize>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Noise-subspace update between targets: off, augmented or polished.
    #[arg(long)]
    update: Option<String>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; 0 uses all cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Record mean wall time per trial (makes the CSV machine dependent).
    #[arg(long)]
    time: bool,
    /// Failure fraction above which the exit status is 3.
    #[arg(long, default_value_t = 0.05)]
    max_failure_fraction: f64,
}

#[derive(Args)]
struct TimingArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Array sizes as L,N,M separated by semicolons.
    #[arg(long, default_value = "16,128,80")]
    dims: String,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct CrbArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Single SNR in dB; defaults to the scenario's.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn config(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

fn load(args: &ScenarioArgs) -> Result<ScenarioFile> {
    match &args.scenario {
        Some(path) => Ok(ScenarioFile::load(path)?),
        None => Ok(ScenarioFile { scenario: Scenario::reference(16, 128, 80, 10.0), smoothing: None, lm: None }),
    }
}

fn snr_grid(arg: &Option<String>, scenario: &Scenario) -> Result<Vec<f64>> {
    match arg {
        Some(s) => jarve_bench::spec::parse_snr_grid(s),
        None => Ok(vec![scenario.snr_db]),
    }
}

fn build_spec(common: &CommonArgs, default_snr: &[f64]) -> Result<RunSpec> {
    let file = load(&common.scenario)?;
    let mut spec = RunSpec::new(file.scenario.clone());
    spec.master_seed = common.seed;
    spec.snr_grid_db = match &common.snr {
        Some(s) => jarve_bench::spec::parse_snr_grid(s)?,
        None => default_snr.to_vec(),
    };
    if let Some(list) = &common.estimators {
        spec.estimators = list.split(',').map(str::parse::<Estimator>).collect::<Result<_>>()?;
    }
    spec.smoothing = match (&common.smoothing, file.smoothing) {
        (Some(s), _) => s.parse()?,
        (None, Some(sm)) => SmoothingChoice::Explicit(sm),
        (None, None) => SmoothingChoice::Rmse,
    };
    let mut lm: LmSettings = file.lm.unwrap_or_default();
    if let Some(q) = common.q_max {
        lm.q_max = q;
    }
    if let Some(e) = common.eps1 {
        lm.eps1 = e;
    }
    if let Some(e) = common.eps2 {
        lm.eps2 = e;
    }
    if let Some(t) = common.tau {
        lm.tau = t;
    }
    spec.pipeline.lm = lm;
    if let Some(u) = &common.update {
        spec.pipeline.update = match u.as_str() {
            "off" => SubspaceUpdate::Off,
            "augmented" => SubspaceUpdate::Augmented,
            "polished" => SubspaceUpdate::Polished,
            other => return Err(config(format!("unknown update {other:?} (off, augmented, polished)"))),
        };
    }
    Ok(spec)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| BenchError::Io { path: path.display().to_string(), source })
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut spec = build_spec(&args.common, &[-10.0, 0.0, 10.0])?;
    spec.trials = args.trials;
    spec.workers = args.workers;
    spec.record_time = args.time;
    spec.max_failure_fraction = args.max_failure_fraction;
    spec.validate()?;
    let rows = run_sweep(&spec)?;
    create_dir(&args.out)?;
    emit_csv(&rows, args.out.join("rmse.csv"))?;
    emit_dat(&rows, args.out.join("rmse.dat"))?;
    println!(
        "{:<12} {:>7} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}",
        "estimator", "snr_db", "theta_deg", "range_m", "vel_mps", "crb_theta", "crb_range", "crb_vel", "failed"
    );
    for r in &rows {
        println!(
            "{:<12} {:>7.1} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>8}",
            r.estimator.name(),
            r.snr_db,
            r.rmse_theta_deg,
            r.rmse_range_m,
            r.rmse_velocity_mps,
            r.rcrb_theta_deg,
            r.rcrb_range_m,
            r.rcrb_velocity_mps,
            r.failures
        );
    }
    if let Some(worst) = failure_excess(&rows, spec.max_failure_fraction) {
        eprintln!("failure fraction {worst:.3} exceeds {}", spec.max_failure_fraction);
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_dims(s: &str) -> Result<Vec<[usize; 3]>> {
    s.split(';')
        .map(|item| {
            let v: Vec<usize> = item
                .split(',')
                .map(|x| x.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| config(format!("dims {item:?}: expected L,N,M")))?;
            v.try_into().map_err(|_| config(format!("dims {item:?}: expected three sizes")))
        })
        .collect()
}

fn timing(args: TimingArgs) -> Result<ExitCode> {
    let mut spec = build_spec(&args.common, &[10.0])?;
    if args.common.smoothing.is_none() {
        spec.smoothing = SmoothingChoice::Timing;
    }
    if args.common.estimators.is_none() {
        spec.estimators = Estimator::ALL.to_vec();
    }
    spec.lm().validate()?;
    let dims = parse_dims(&args.dims)?;
    let rows = run_timing(&spec, &dims)?;
    create_dir(&args.out)?;
    emit_timing_csv(&rows, args.out.join("timing.csv"))?;
    for r in &rows {
        let t = r.median_s.map(|t| format!("{t:.4e} s")).unwrap_or_else(|| "-".into());
        let ratio = r.ratio_to_pi2dmusic.map(|x| format!("x{x:.1}")).unwrap_or_default();
        println!("{:?} {:?} {:<12} {t:>14} {ratio:>10} {}", r.dims, r.smoothing, r.estimator.name(), r.note);
    }
    Ok(ExitCode::SUCCESS)
}

fn crb(args: CrbArgs) -> Result<ExitCode> {
    let file = load(&args.scenario)?;
    for snr_db in snr_grid(&args.snr, &file.scenario)? {
        let s = file.scenario.with_snr_db(snr_db);
        validate(&s, None).into_result()?;
        println!("snr_db = {snr_db}");
        let theorem = crb_theorem1(&s)?;
        for (i, (t, r)) in s.targets.iter().zip(theorem.rcrb_degrees()).enumerate() {
            let gamma = t.backscatter.norm_sqr() / s.config.noise_power;
            let single = crb_single_closed_form(&s.config, t, gamma).map(f64::sqrt);
            println!(
                "  target {i}: theta {:.4e} deg, range {:.4e} m, velocity {:.4e} m/s (alone: {:.4e} deg, {:.4e} m, {:.4e} m/s)",
                r[0],
                r[1],
                r[2],
                single[0].to_degrees(),
                single[1],
                single[2]
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(args: SynthArgs) -> Result<ExitCode> {
    let file = load(&args.scenario)?;
    let s = match args.snr {
        Some(snr) => file.scenario.with_snr_db(snr),
        None => file.scenario,
    };
    validate(&s, file.smoothing.as_ref()).into_result()?;
    synthesize(&s, trial_seed(args.seed, 0, 0)).write_to(&args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sweep(a) => sweep(a),
        Command::Timing(a) => timing(a),
        Command::Crb(a) => crb(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
