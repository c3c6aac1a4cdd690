use jarve_core::crb::{crb_single_closed_form, crb_theorem1};
use jarve_core::music2d::SubspaceUpdate;
use jarve_core::pipeline::{associate, estimate_3d_dft, run_pi2dmusic, DftOptions, PipelineOptions};
use jarve_core::scenario::{validate, Axis, Scenario, ScenarioFile, SmoothingConfig};
use jarve_core::signal::{synthesize, Observation};

fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn worst_error(est: &[[f64; 3]], truth: &[[f64; 3]]) -> [f64; 3] {
    let p = associate(est, truth).unwrap();
    let mut e = [0.0f64; 3];
    for (i, t) in truth.iter().enumerate() {
        for k in 0..3 {
            e[k] = e[k].max((est[p[i]][k] - t[k]).abs());
        }
    }
    e
}

#[test]
fn shipped_scenarios_load_and_validate() {
    let reference = ScenarioFile::load(scenario_path("reference.toml")).unwrap();
    let built_in = Scenario::reference(16, 128, 80, 10.0);
    assert_eq!(reference.scenario.config, built_in.config);
    assert_eq!(reference.scenario.targets, built_in.targets);
    assert_eq!(reference.smoothing, Some(SmoothingConfig::rmse_preset()));
    assert!(validate(&reference.scenario, reference.smoothing.as_ref()).is_valid());

    let small = ScenarioFile::load(scenario_path("small.toml")).unwrap();
    assert_eq!(small.lm, Some(Default::default()));
    assert!(validate(&small.scenario, small.smoothing.as_ref()).is_valid());
}

#[test]
fn noiseless_recovery_with_and_without_update() {
    let s = Scenario::reference(8, 32, 16, f64::INFINITY);
    let sm = SmoothingConfig::new(4, 12, 8);
    let truth: Vec<[f64; 3]> = s.targets.iter().map(|t| t.params()).collect();
    let obs = synthesize(&s, 11);
    for update in [SubspaceUpdate::Polished, SubspaceUpdate::Off] {
        let est = run_pi2dmusic(&obs, 3, &sm, &PipelineOptions { update, ..Default::default() }).unwrap();
        let e = worst_error(&est.estimates, &truth);
        assert!(e.iter().all(|&x| x < 1e-6), "{update:?}: {e:?}");
        assert!(est.diagnostics.is_some());
    }
}

#[test]
fn binary_file_round_trip_preserves_estimates() {
    let s = Scenario::reference(8, 32, 16, 15.0);
    let sm = SmoothingConfig::new(4, 12, 8);
    let obs = synthesize(&s, 3);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.bin");
    obs.write_to(&path).unwrap();
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 56 + 16 * 8 * 32 * 16);
    let back = Observation::read_from(&path).unwrap();
    assert_eq!(back.dims(), obs.dims());
    assert_eq!(back.as_slice(), obs.as_slice());
    let a = run_pi2dmusic(&obs, 3, &sm, &PipelineOptions::default()).unwrap();
    let b = run_pi2dmusic(&back, 3, &sm, &PipelineOptions::default()).unwrap();
    for (x, y) in a.estimates.iter().zip(&b.estimates) {
        for k in 0..3 {
            assert!((x[k] - y[k]).abs() < 1e-9, "{x:?} vs {y:?}");
        }
    }
}

#[test]
fn truncated_binary_is_rejected() {
    let obs = synthesize(&Scenario::reference(4, 8, 4, 0.0), 1);
    let bytes = obs.to_bytes();
    assert!(Observation::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Observation::from_bytes(&bytes[..40]).is_err());
}

#[test]
fn dft_lands_within_a_cell() {
    let s = Scenario::reference(16, 128, 80, 20.0);
    let truth: Vec<[f64; 3]> = s.targets.iter().map(|t| t.params()).collect();
    let est = estimate_3d_dft(&synthesize(&s, 5), 3, &DftOptions::default()).unwrap();
    let e = worst_error(&est.estimates, &truth);
    for axis in Axis::ALL {
        // Azimuth cells widen away from broadside.
        let cell = s.config.rayleigh(axis) * if axis == Axis::Antenna { 1.2 } else { 1.0 };
        assert!(e[axis.index()] <= cell, "{axis}: {} vs {cell}", e[axis.index()]);
    }
}

#[test]
fn separated_targets_are_bounded_like_single_targets() {
    let s = Scenario::reference(16, 128, 80, 10.0);
    let joint = crb_theorem1(&s).unwrap();
    for (t, bound) in s.targets.iter().zip(&joint.per_target) {
        let alone = crb_single_closed_form(&s.config, t, t.backscatter.norm_sqr() / s.config.noise_power);
        for k in 0..3 {
            assert!(bound[k] >= alone[k] * (1.0 - 1e-9));
            assert!(bound[k] <= alone[k] * 1.01);
        }
    }
    let louder = crb_theorem1(&s.with_snr_db(20.0)).unwrap();
    for (a, b) in joint.per_target.iter().zip(&louder.per_target) {
        for k in 0..3 {
            assert!(((a[k] / b[k]) / 10.0 - 1.0).abs() < 1e-9);
        }
    }
}
