//! Statistical calibration of the estimators and end-to-end harness behaviour.

use dipolescope::atomic_physics::AtomicLine;
use dipolescope::estimation::{fit_loss, fit_temperature, Series, TemperatureFitConfig};
use dipolescope::harness::{run_scenario, Scenario, ScenarioKind};
use dipolescope::trap_dynamics::{
    ballistic_escape_probability, loss_curve, BallisticParams, LossParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const SEEDS: u64 = 500;

fn noisy(y: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    y.iter().map(|v| v + noise.sample(&mut rng)).collect()
}

fn fraction(hits: &[bool]) -> f64 {
    hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64
}

#[test]
fn loss_fit_intervals_cover_at_one_sigma() {
    let params = LossParams {
        gamma: 21.0,
        beta: 2.3e-4,
    };
    let n0 = 1e5;
    let t: Vec<f64> = (0..40)
        .map(|j| 3.0 / 21.0 * (j as f64 / 39.0).powi(2))
        .collect();
    let truth = loss_curve(&params, n0, &t).unwrap();
    let sigma = 300.0;
    let results: Vec<(bool, bool, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data =
                Series::new(t.clone(), noisy(&truth, sigma, seed), vec![sigma; t.len()]).unwrap();
            let fit = fit_loss(&data).unwrap();
            (
                fit.gamma.covers(params.gamma, 1.0),
                fit.beta.covers(params.beta, 1.0),
                fit.fit.reduced_chi2,
            )
        })
        .collect();
    let gamma = fraction(&results.iter().map(|r| r.0).collect::<Vec<_>>());
    let beta = fraction(&results.iter().map(|r| r.1).collect::<Vec<_>>());
    let chi2 = results.iter().map(|r| r.2).sum::<f64>() / SEEDS as f64;
    assert!((gamma - 0.68).abs() <= 0.07, "Gamma coverage {gamma}");
    assert!((beta - 0.68).abs() <= 0.07, "beta coverage {beta}");
    assert!((chi2 - 1.0).abs() <= 0.2, "mean reduced chi2 {chi2}");
}

#[test]
fn temperature_fit_intervals_cover_at_one_sigma() {
    let line = AtomicLine::cs_d2();
    let p = BallisticParams::new(15e-6, 275.0, 20e-6, &line);
    let t: Vec<f64> = (1..50).map(|i| i as f64 * 100e-6).collect();
    let truth: Vec<f64> = t
        .iter()
        .map(|&t| ballistic_escape_probability(&p, t))
        .collect();
    // About the precision of the time_of_flight scenario; at several times this noise the
    // T error is a sizeable fraction of T and linearised intervals no longer apply.
    let sigma = 0.003;
    let config = TemperatureFitConfig::new(20e-6, &line);
    let results: Vec<(bool, bool, f64)> = (0..SEEDS)
        .into_par_iter()
        .map(|seed| {
            let data =
                Series::new(t.clone(), noisy(&truth, sigma, seed), vec![sigma; t.len()]).unwrap();
            let fit = fit_temperature(&data, &config).unwrap();
            (
                fit.temperature.covers(p.temperature, 1.0),
                fit.radial_frequency.covers(p.radial_frequency, 1.0),
                fit.fit.reduced_chi2,
            )
        })
        .collect();
    let temperature = fraction(&results.iter().map(|r| r.0).collect::<Vec<_>>());
    let frequency = fraction(&results.iter().map(|r| r.1).collect::<Vec<_>>());
    let chi2 = results.iter().map(|r| r.2).sum::<f64>() / SEEDS as f64;
    assert!(
        (temperature - 0.68).abs() <= 0.07,
        "T coverage {temperature}"
    );
    assert!(
        (frequency - 0.68).abs() <= 0.07,
        "nu_r coverage {frequency}"
    );
    assert!((chi2 - 1.0).abs() <= 0.2, "mean reduced chi2 {chi2}");
}

fn quantity(s: &Scenario, name: &str) -> (f64, f64) {
    let out = run_scenario(s).unwrap();
    let e = out
        .report
        .summary
        .iter()
        .find(|e| e.quantity == name)
        .unwrap();
    (e.value, e.error)
}

#[test]
fn reference_trains_remove_slow_drift() {
    let clean = Scenario::builtin(ScenarioKind::Losses);
    let mut drifting = clean.clone();
    // 2 mrad across a train. Much faster drifts move the fringe operating point enough for
    // its curvature to show up in the differential phase.
    drifting.noise.slow_phase_drift_rad_per_s = 5.0;
    for q in ["Gamma", "beta"] {
        let (a, err) = quantity(&clean, q);
        let (b, _) = quantity(&drifting, q);
        assert!((a - b).abs() <= err, "{q}: {a} vs {b} (error {err})");
    }
}

#[test]
fn errors_shrink_with_run_averaging() {
    let mut single = Scenario::builtin(ScenarioKind::Losses);
    single.run_count = 1;
    let mut many = single.clone();
    many.run_count = 20;
    let (_, e1) = quantity(&single, "Gamma");
    let (_, e20) = quantity(&many, "Gamma");
    let ratio = e1 / e20;
    assert!(
        (ratio / 20f64.sqrt() - 1.0).abs() < 0.1,
        "error ratio {ratio}"
    );
}

#[test]
fn reports_state_checks_and_convergence() {
    for kind in ScenarioKind::ALL {
        let out = run_scenario(&Scenario::builtin(kind)).unwrap();
        assert!(out.report.converged, "{kind} did not converge");
        assert!(!out.tables.is_empty(), "{kind} has no tables");
        let text = out.report.to_text();
        assert!(text.starts_with(&format!("scenario {kind}")), "{text}");
        let json: serde_json::Value = serde_json::from_str(&out.report.to_json().unwrap()).unwrap();
        assert_eq!(json["scenario"], kind.as_str());
    }
}

#[test]
fn scenario_files_override_defaults() {
    let text = r#"{ "name": "losses", "seed": 9, "run_count": 4, "truth": { "gamma_per_s": 30.0, "beta_per_s": 1e-4 } }"#;
    let s = Scenario::from_json(text).unwrap();
    assert_eq!(s.seed, 9);
    assert_eq!(s.run_count, 4);
    assert_eq!(s.probe, Scenario::builtin(ScenarioKind::Losses).probe);
    let out = run_scenario(&s).unwrap();
    let gamma = out
        .report
        .summary
        .iter()
        .find(|e| e.quantity == "Gamma")
        .unwrap();
    assert_eq!(gamma.truth, Some(30.0));
    assert!((gamma.value - 30.0).abs() < 5.0 * gamma.error, "{gamma:?}");
}

#[test]
fn artifacts_land_in_a_fresh_directory() {
    let out = run_scenario(&Scenario::builtin(ScenarioKind::Breathing)).unwrap();
    let root = tempfile::tempdir().unwrap();
    let first = out.write_artifacts(root.path()).unwrap();
    let second = out.write_artifacts(root.path()).unwrap();
    assert_ne!(first, second);
    let mut names: Vec<String> = std::fs::read_dir(&first)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["breathing.csv", "report.json", "scenario.json"]);
    let hidden = std::fs::read_dir(root.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with('.')
        })
        .count();
    assert_eq!(hidden, 0, "staging directories left behind");
    let back = Scenario::from_json(&std::fs::read_to_string(first.join("scenario.json")).unwrap())
        .unwrap();
    assert_eq!(back, out.scenario);
}
