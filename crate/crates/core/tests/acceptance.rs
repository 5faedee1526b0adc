//! Acceptance criteria. Every test prints exactly one `criterion N: PASS|FAIL` line with the
//! measured values and pinned tolerances; run with `--nocapture` to see them.

use std::time::{Duration, Instant};

use dipolescope::angular::HalfInt;
use dipolescope::atomic_physics::{
    dipole_trap_properties, excitation_probability, transition_strengths, AtomicLine,
    ProbePulseConfig, TrapBeam,
};
use dipolescope::constants::angular;
use dipolescope::harness::{
    run_scenario, LoadingTruth, LossTruth, Outcome, Scenario, ScenarioKind, ScenarioOutput, Truth,
};
use dipolescope::ode::{integrate, Tolerances};
use dipolescope::trap_dynamics::{
    ballistic_escape_probability, ballistic_mc_oracle, loss_curve_closed_form, BallisticParams,
    LossParams,
};
use rayon::prelude::*;

fn report(n: u32, passed: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if passed { "PASS" } else { "FAIL" }
    );
    assert!(passed, "criterion {n} failed: {detail}");
}

fn run(s: &Scenario) -> ScenarioOutput {
    run_scenario(s).expect("scenario runs")
}

fn summary(out: &ScenarioOutput, quantity: &str) -> f64 {
    out.report
        .summary
        .iter()
        .find(|e| e.quantity == quantity)
        .unwrap_or_else(|| panic!("no summary entry {quantity}"))
        .value
}

#[test]
fn criterion_01_noise_scaling_slopes() {
    let start = Instant::now();
    let out = run(&Scenario::builtin(ScenarioKind::NoiseScaling));
    let elapsed = start.elapsed();
    let Outcome::NoiseScaling(fit) = &out.report.fit else {
        panic!("wrong outcome")
    };
    let shot = fit.balanced.slope;
    let classical = fit.unbalanced.expect("unbalanced sweep").slope;
    report(
        1,
        (shot - 1.0).abs() <= 0.05 && (classical - 2.0).abs() <= 0.1 && elapsed < Duration::from_secs(10),
        format!(
            "shot-noise slope {shot:.4} (1 +/- 0.05), classical slope {classical:.4} (2 +/- 0.1), {:.2} s (< 10 s)",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_excitation_probability() {
    let line = AtomicLine::cs_d2();
    let mut probe = ProbePulseConfig {
        detuning: angular(100e6),
        power: 0.0,
        waist: 20e-6,
        duration: 2e-6,
        period: 40e-6,
        pulse_count: 10,
    };
    probe.power = probe.power_for_photons(1.3e6, &line);
    let p_e = excitation_probability(&probe, &line);
    let worked_ok = (p_e / 0.04 - 1.0).abs() <= 0.2;

    let out = run(&Scenario::builtin(ScenarioKind::Depumping));
    let Outcome::Depumping(d) = &out.report.fit else {
        panic!("wrong outcome")
    };
    // The theory line is proportional to power: equal ratios and increasing.
    let ratios: Vec<f64> = d
        .fit
        .points
        .iter()
        .zip(&d.theory_excitation)
        .map(|(p, th)| th / p.power)
        .collect();
    let linear = ratios.iter().all(|r| (r / ratios[0] - 1.0).abs() < 1e-12)
        && d.theory_excitation.windows(2).all(|w| w[1] > w[0]);
    let worst = d
        .fit
        .points
        .iter()
        .zip(&d.theory_excitation)
        .map(|(p, th)| (p.excitation.value / th - 1.0).abs())
        .fold(0.0, f64::max);
    report(
        2,
        worked_ok && linear && worst <= 0.1,
        format!(
            "p_e {p_e:.4} (0.04 +/- 20%); theory line linear and increasing: {linear}; \
             worst fitted point deviation {:.2}% (<= 10%)",
            worst * 100.0
        ),
    );
}

#[test]
fn criterion_03_trap_depth() {
    let line = AtomicLine::cs_d2();
    let trap = dipole_trap_properties(
        &TrapBeam {
            power: 3.5,
            waist: 40e-6,
            wavelength: 1030e-9,
        },
        &line,
    )
    .unwrap();
    let depth_uk = trap.depth_kelvin * 1e6;
    report(
        3,
        (depth_uk / 380.0 - 1.0).abs() <= 0.2,
        format!("U/k_B {depth_uk:.1} uK (380 uK +/- 20%)"),
    );
}

/// Fraction of seeds whose estimate lies within `tol` (relative) of the truth, per quantity.
fn success_fractions(base: &Scenario, checks: &[(&str, f64, f64)], seeds: u64) -> Vec<f64> {
    let hits: Vec<Vec<bool>> = (1..=seeds)
        .into_par_iter()
        .map(|seed| {
            let mut s = base.clone();
            s.seed = seed;
            let out = run(&s);
            checks
                .iter()
                .map(|&(q, truth, tol)| (summary(&out, q) / truth - 1.0).abs() <= tol)
                .collect()
        })
        .collect();
    (0..checks.len())
        .map(|k| hits.iter().filter(|h| h[k]).count() as f64 / seeds as f64)
        .collect()
}

#[test]
fn criterion_04_loading_and_loss_round_trip() {
    const SEEDS: u64 = 100;
    let start = Instant::now();

    // Tolerance per parameter: the larger of 15% and the quoted relative uncertainty.
    let mut compression = Scenario::builtin(ScenarioKind::Loading);
    compression.truth = Truth::Loading(LoadingTruth::compression());
    let mut molasses = Scenario::builtin(ScenarioKind::Loading);
    molasses.truth = Truth::Loading(LoadingTruth::molasses());
    molasses.probe.period_us = 10.0;
    let mut light = Scenario::builtin(ScenarioKind::Losses);
    light.truth = Truth::Losses(LossTruth::light());
    let mut dark = Scenario::builtin(ScenarioKind::Losses);
    dark.truth = Truth::Losses(LossTruth::no_light());

    let columns: [(&str, &Scenario, Vec<(&str, f64, f64)>); 4] = [
        (
            "compression",
            &compression,
            vec![
                ("R0", 1.34e7, 0.15),
                ("gamma_MOT", 831.0, 0.15),
                ("Gamma_L", 3.5, 0.15),
                ("beta_L", 1.1e-4, 0.15),
            ],
        ),
        (
            "molasses",
            &molasses,
            vec![
                ("R0", 3.2e4, 0.6 / 3.2),
                ("gamma_MOT", 5.0, 0.15),
                ("Gamma_L", 1.2, 0.15),
                ("beta_L", 3e-5, 1.0 / 3.0),
            ],
        ),
        (
            "light",
            &light,
            vec![("Gamma", 47.0, 20.0 / 47.0), ("beta", 1.1e-2, 0.15)],
        ),
        (
            "no light",
            &dark,
            vec![("Gamma", 21.0, 0.15), ("beta", 2.3e-4, 0.15)],
        ),
    ];

    let mut passed = true;
    let mut parts = Vec::new();
    for (name, scenario, checks) in &columns {
        let fractions = success_fractions(scenario, checks, SEEDS);
        for ((q, _, tol), f) in checks.iter().zip(&fractions) {
            passed &= *f >= 0.8;
            parts.push(format!(
                "{name} {q} {:.0}% (tol {:.1}%)",
                f * 100.0,
                tol * 100.0
            ));
        }
    }
    let elapsed = start.elapsed();
    passed &= elapsed < Duration::from_secs(60);
    report(
        4,
        passed,
        format!(
            "success per parameter over {SEEDS} seeds (>= 80%): {}; {:.2} s (< 60 s)",
            parts.join(", "),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_05_riccati_closed_form_vs_ode() {
    let n0 = 1e5;
    let gammas = [1.2, 3.5, 10.0, 21.0, 47.0];
    let betas = [3e-5, 1.1e-4, 2.3e-4, 1e-3, 1.1e-2];
    let mut worst: f64 = 0.0;
    for &gamma in &gammas {
        for &beta in &betas {
            let p = LossParams { gamma, beta };
            let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.25 / gamma).collect();
            let ode = integrate(
                move |_, y: &[f64; 1]| [-gamma * y[0] - beta * y[0] * y[0]],
                [n0],
                &times,
                Tolerances::default(),
            )
            .unwrap();
            for (t, y) in times.iter().zip(&ode) {
                let exact = loss_curve_closed_form(&p, n0, *t);
                worst = worst.max((y[0] / exact - 1.0).abs());
            }
        }
    }
    report(
        5,
        worst < 1e-6,
        format!("max relative error {worst:.2e} on a 5x5 (Gamma, beta) grid (< 1e-6)"),
    );
}

#[test]
fn criterion_06_ballistic_closed_form_vs_monte_carlo() {
    let line = AtomicLine::cs_d2();
    let params = BallisticParams::new(15e-6, 275.0, 20e-6, &line);
    let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.25e-3).collect();
    let mc = ballistic_mc_oracle(&params, &times, 1_000_000, 7).unwrap();
    let worst = times
        .iter()
        .zip(&mc)
        .map(|(&t, m)| (ballistic_escape_probability(&params, t) - m.value).abs())
        .fold(0.0, f64::max);
    report(
        6,
        worst < 0.005,
        format!("max |dP| {worst:.5} over 20 times with 1e6 samples (< 0.005)"),
    );
}

#[test]
fn criterion_07_time_of_flight_temperature() {
    const SEEDS: u64 = 200;
    let start = Instant::now();
    let base = Scenario::builtin(ScenarioKind::TimeOfFlight);
    let hits: Vec<(bool, bool)> = (1..=SEEDS)
        .into_par_iter()
        .map(|seed| {
            let mut s = base.clone();
            s.seed = seed;
            let out = run(&s);
            (
                (summary(&out, "T") - 15.0).abs() <= 2.0,
                (summary(&out, "nu_r") - 275.0).abs() <= 4.0,
            )
        })
        .collect();
    let elapsed = start.elapsed();
    let frac = |f: &dyn Fn(&(bool, bool)) -> bool| {
        hits.iter().filter(|h| f(h)).count() as f64 / SEEDS as f64
    };
    let both = frac(&|h| h.0 && h.1);
    report(
        7,
        both >= 0.68 && elapsed < Duration::from_secs(60),
        format!(
            "T within 15 +/- 2 uK {:.1}%, nu_r within 275 +/- 4 Hz {:.1}%, both {:.1}% of {SEEDS} seeds (>= 68%); \
             {:.2} s (< 60 s)",
            frac(&|h| h.0) * 100.0,
            frac(&|h| h.1) * 100.0,
            both * 100.0,
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_breathing_and_waist() {
    let breathing = run(&Scenario::builtin(ScenarioKind::Breathing));
    let nu = summary(&breathing, "nu_r");
    let sweep = run(&Scenario::builtin(ScenarioKind::FrequencyVsPower));
    let waist = summary(&sweep, "trap waist");
    report(
        8,
        (nu - 226.5).abs() <= 1.5 && (waist / 90.0 - 1.0).abs() <= 0.02,
        format!("nu_r {nu:.2} Hz (226.5 +/- 1.5 Hz), trap waist {waist:.2} um (90 um +/- 2%)"),
    );
}

#[test]
fn criterion_09_strengths_and_sum_rule() {
    let line = AtomicLine::cs_d2();
    let s = transition_strengths(&line);
    let f = HalfInt::integer;
    let sums_ok = [f(3), f(4)]
        .iter()
        .all(|&g| (s.sum_for(g) - 1.0).abs() < 1e-12);
    let values_ok = (s.get(f(4), f(5)) - 11.0 / 18.0).abs() < 1e-12
        && (s.get(f(4), f(4)) - 7.0 / 24.0).abs() < 1e-12
        && (s.get(f(4), f(3)) - 7.0 / 72.0).abs() < 1e-12;
    let selection_ok = s
        .iter()
        .all(|(g, e, v)| (g.value() - e.value()).abs() <= 1.0 || v == 0.0);
    report(
        9,
        sums_ok && values_ok && selection_ok,
        format!(
            "S45 {:.12}, S44 {:.12}, S43 {:.12}; sums F=3 {:.15}, F=4 {:.15}; selection rule holds: {selection_ok}",
            s.get(f(4), f(5)),
            s.get(f(4), f(4)),
            s.get(f(4), f(3)),
            s.sum_for(f(3)),
            s.sum_for(f(4))
        ),
    );
}

#[test]
fn criterion_10_determinism() {
    let mut identical = true;
    let mut checked = Vec::new();
    for kind in ScenarioKind::ALL {
        let s = Scenario::builtin(kind);
        let (a, b) = (run(&s), run(&s));
        let files = a.artifact_files().unwrap();
        identical &= files == b.artifact_files().unwrap();

        let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let (pa, pb) = (
            a.write_artifacts(da.path()).unwrap(),
            b.write_artifacts(db.path()).unwrap(),
        );
        for (name, _) in &files {
            identical &=
                std::fs::read(pa.join(name)).unwrap() == std::fs::read(pb.join(name)).unwrap();
        }
        checked.push(format!("{kind} ({} files)", files.len()));
    }
    report(
        10,
        identical,
        format!("bit-identical artifacts on rerun: {}", checked.join(", ")),
    );
}
