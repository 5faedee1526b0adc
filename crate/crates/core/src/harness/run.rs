//! Scenario execution: truth → pulse trains → phases → atom numbers → fits.

use rayon::prelude::*;

use super::report::{
    significant, Check, DepumpingOutcome, DetuningPoint, FrequencyPoint, FrequencyVsPowerOutcome,
    NoiseScalingOutcome, Outcome, ScenarioOutput, ScenarioReport, SummaryEntry, Table,
};
use super::scenario::{
    loss_times, BreathingTruth, DepumpingTruth, FrequencyVsPowerTruth, LoadingTruth, LossTruth,
    LossVsDetuningTruth, NoiseScalingTruth, Scenario, TimeOfFlightTruth, Truth,
};
use crate::atomic_physics::{excitation_probability, phase_per_atom, AtomicLine, ProbePulseConfig};
use crate::error::{ensure, invalid, Error, Result};
use crate::estimation::{
    fit_breathing, fit_depumping, fit_loading, fit_loss, fit_temperature, fit_waist, BreathingFit,
    DepumpTrain, Estimate, FitResult, LoadingFitOptions, Series, TemperatureFitConfig,
};
use crate::interferometer::{
    noise_scaling_exponent, phase_from_record, simulate_areas, two_point_variance_of,
    Interferometer,
};
use crate::trap_dynamics::{
    ballistic_escape_probability, breathing_signal, depump_decay, loading_curve, loss_curve,
    trap_frequency_vs_power, BallisticParams, DepumpParams, LossParams,
};

use super::scenario::NoiseSettings;

/// SplitMix64 finaliser.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic per-stream seed: every distinct `stream` path yields an independent seed.
pub fn derive_seed(base: u64, stream: &[u64]) -> u64 {
    stream
        .iter()
        .fold(splitmix64(base), |acc, &s| splitmix64(acc ^ splitmix64(s)))
}

const PROBE_TRAIN: u64 = 0;
const REFERENCE_TRAIN: u64 = 1;
const DIPOLE_ON_TRAIN: u64 = 2;
const DIPOLE_ON_REFERENCE: u64 = 3;

/// Detection chain for one probe setting: simulates a probe train and an atom-free
/// reference train and converts the phase difference into bright-level atom numbers.
struct Detector {
    probe: ProbePulseConfig,
    interferometer: Interferometer,
    noise: NoiseSettings,
    photons: f64,
    phase_per_atom: f64,
    depump: DepumpParams,
}

/// Reference-subtracted atom numbers of one train.
struct Measured {
    atoms: Vec<f64>,
    clamped: usize,
}

impl Detector {
    fn new(
        scenario: &Scenario,
        probe: ProbePulseConfig,
        line: &AtomicLine,
        repump: f64,
    ) -> Result<Self> {
        probe.validate()?;
        let photons = probe.photons_per_pulse(line);
        ensure(photons > 0.0, "probe.power_uw", || {
            "probe delivers no photons".into()
        })?;
        let ppa = phase_per_atom(line, probe.detuning, probe.mode_area());
        ensure(ppa.is_finite() && ppa != 0.0, "probe.detuning_mhz", || {
            "probe produces no dispersive phase at this detuning".into()
        })?;
        Ok(Detector {
            depump: DepumpParams::from_probe(&probe, line, repump)?,
            interferometer: scenario.interferometer.to_interferometer(),
            noise: scenario.noise,
            photons,
            phase_per_atom: ppa,
            probe,
        })
    }

    fn pulses(&self) -> usize {
        self.probe.pulse_count
    }

    /// Bright atoms seen by each pulse of a train that starts with `n` bright atoms.
    fn depumped(&self, n: f64) -> Result<Vec<f64>> {
        let mut b = depump_decay(&self.depump, self.pulses() - 1, n, n)?.bright;
        b.truncate(self.pulses());
        Ok(b)
    }

    fn train(&self, atoms: &[f64], seed: u64) -> crate::interferometer::PulseTrainRecord {
        let phases: Vec<f64> = atoms.iter().map(|n| n * self.phase_per_atom).collect();
        let period = self.probe.period;
        simulate_areas(
            self.photons,
            period,
            self.pulses(),
            &self.interferometer,
            |t| {
                let k = ((t / period).round() as usize).min(phases.len() - 1);
                phases[k]
            },
            &self.noise.to_config(seed),
        )
    }

    fn measure(&self, atoms: &[f64], probe_seed: u64, reference_seed: u64) -> Result<Measured> {
        debug_assert_eq!(atoms.len(), self.pulses());
        let record = self.train(atoms, probe_seed);
        let reference = self.train(&vec![0.0; atoms.len()], reference_seed);
        let est = phase_from_record(&record, &reference)?;
        Ok(Measured {
            atoms: est.phases.iter().map(|p| p / self.phase_per_atom).collect(),
            clamped: est.clamped.len(),
        })
    }

    /// Standard deviation of one reference-subtracted atom-number reading near `atoms`,
    /// propagated from shot, classical amplitude and white phase noise at half fringe.
    fn atom_sigma(&self, atoms: f64) -> f64 {
        let n = self.photons;
        let v = self.interferometer.visibility;
        let phi = (atoms * self.phase_per_atom).clamp(-1.5, 1.5);
        let a = self.noise.classical_amplitude_rms;
        let (shot, gain, amp_ref, amp_probe) = if self.noise.balanced {
            (n, n * v, 0.0, (n * a * v * phi.sin()).powi(2))
        } else {
            (
                0.5 * n,
                0.5 * n * v,
                (0.5 * n * a).powi(2),
                (0.5 * n * a * (1.0 + v * phi.sin())).powi(2),
            )
        };
        let shot = if self.noise.shot_noise {
            2.0 * shot
        } else {
            0.0
        };
        let phase = 2.0 * (gain * phi.cos() * self.noise.classical_phase_rms_rad).powi(2);
        let var = shot + amp_ref + amp_probe + phase;
        let sigma_phase = var.sqrt() / (gain * phi.cos());
        // Noiseless runs still need positive weights.
        (sigma_phase / self.phase_per_atom.abs()).max(1e-9 * atoms.abs().max(1.0))
    }
}

/// Runs `run_count` repetitions per truth value and averages the train-mean atom number.
fn measure_points(
    detector: &Detector,
    truth: &[f64],
    times: &[f64],
    scenario: &Scenario,
    stream: &[u64],
    diagnostics: &mut Vec<String>,
) -> Result<Series> {
    let runs = scenario.run_count;
    let k = detector.pulses() as f64;
    let per_point: Vec<(f64, usize)> = truth
        .par_iter()
        .enumerate()
        .map(|(j, &n)| -> Result<(f64, usize)> {
            let atoms = detector.depumped(n)?;
            let mut sum = 0.0;
            let mut clamped = 0;
            for r in 0..runs {
                let path = |train: u64| [stream, &[j as u64, r as u64, train]].concat();
                let m = detector.measure(
                    &atoms,
                    derive_seed(scenario.seed, &path(PROBE_TRAIN)),
                    derive_seed(scenario.seed, &path(REFERENCE_TRAIN)),
                )?;
                sum += m.atoms.iter().sum::<f64>() / k;
                clamped += m.clamped;
            }
            Ok((sum / runs as f64, clamped))
        })
        .collect::<Result<_>>()?;
    let clamped: usize = per_point.iter().map(|p| p.1).sum();
    if clamped > 0 {
        diagnostics.push(format!(
            "{clamped} pulse phases exceeded the fringe range and were clamped"
        ));
    }
    let y: Vec<f64> = per_point.iter().map(|p| p.0).collect();
    let sigma = y
        .iter()
        .map(|&v| detector.atom_sigma(v) / (k * runs as f64).sqrt())
        .collect();
    Series::new(times.to_vec(), y, sigma)
}

/// Per-pulse run averages of a probe train and (optionally) a dipole-on reference train.
struct PulseAverages {
    probe: Vec<f64>,
    probe_sigma: Vec<f64>,
    reference: Option<(Vec<f64>, Vec<f64>)>,
}

fn measure_trains(
    detector: &Detector,
    probe_atoms: &[f64],
    reference_atoms: Option<&[f64]>,
    scenario: &Scenario,
    stream: &[u64],
    diagnostics: &mut Vec<String>,
) -> Result<PulseAverages> {
    let runs = scenario.run_count;
    let per_run: Vec<(Measured, Option<Measured>)> = (0..runs)
        .into_par_iter()
        .map(|r| -> Result<_> {
            let seed =
                |train: u64| derive_seed(scenario.seed, &[stream, &[r as u64, train]].concat());
            let probe = detector.measure(probe_atoms, seed(PROBE_TRAIN), seed(REFERENCE_TRAIN))?;
            let reference = reference_atoms
                .map(|atoms| {
                    detector.measure(atoms, seed(DIPOLE_ON_TRAIN), seed(DIPOLE_ON_REFERENCE))
                })
                .transpose()?;
            Ok((probe, reference))
        })
        .collect::<Result<_>>()?;
    let clamped: usize = per_run
        .iter()
        .map(|(p, r)| p.clamped + r.as_ref().map_or(0, |r| r.clamped))
        .sum();
    if clamped > 0 {
        diagnostics.push(format!(
            "{clamped} pulse phases exceeded the fringe range and were clamped"
        ));
    }
    let average = |pick: &dyn Fn(&(Measured, Option<Measured>)) -> &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut mean = vec![0.0; detector.pulses()];
        for run in &per_run {
            for (m, v) in mean.iter_mut().zip(pick(run)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= runs as f64;
        }
        let sigma = mean
            .iter()
            .map(|&v| detector.atom_sigma(v) / (runs as f64).sqrt())
            .collect();
        (mean, sigma)
    };
    let (probe, probe_sigma) = average(&|run| &run.0.atoms);
    let reference =
        reference_atoms.map(|_| average(&|run| &run.1.as_ref().expect("reference measured").atoms));
    Ok(PulseAverages {
        probe,
        probe_sigma,
        reference,
    })
}

/// Divides a probe train by the relative decay `b_k/b_0` of a dipole-on reference train,
/// removing in-train depumping. Returns corrected values and propagated errors.
pub fn correct_for_depumping(
    probe: &[f64],
    probe_sigma: &[f64],
    reference: &[f64],
    reference_sigma: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_lengths(probe, reference)?;
    check_lengths(probe, probe_sigma)?;
    check_lengths(reference, reference_sigma)?;
    let Some(&b0) = reference.first() else {
        return Ok((Vec::new(), Vec::new()));
    };
    ensure(reference.iter().all(|b| *b > 0.0), "reference", || {
        "reference train must stay positive".into()
    })?;
    let rel0 = reference_sigma[0] / b0;
    let mut values = Vec::with_capacity(probe.len());
    let mut sigma = Vec::with_capacity(probe.len());
    for k in 0..probe.len() {
        let scale = b0 / reference[k];
        let c = probe[k] * scale;
        let relk = if k == 0 {
            0.0
        } else {
            reference_sigma[k] / reference[k]
        };
        let r0 = if k == 0 { 0.0 } else { rel0 };
        values.push(c);
        sigma.push(((probe_sigma[k] * scale).powi(2) + c * c * (relk * relk + r0 * r0)).sqrt());
    }
    Ok((values, sigma))
}

fn check_lengths(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: "probe",
            left_len: a.len(),
            right: "reference",
            right_len: b.len(),
        });
    }
    Ok(())
}

/// Depumping-corrected fractions `(φ_k/φ_0)/(φref_k/φref_0)` of a probe train relative
/// to its first pulse, using a dipole-on reference train of equal length.
pub fn depump_correction(probe: &[f64], reference: &[f64]) -> Result<Vec<f64>> {
    check_lengths(probe, reference)?;
    let Some(&a0) = probe.first() else {
        return Ok(Vec::new());
    };
    if a0 == 0.0 {
        return Err(invalid(
            "probe",
            "first pulse of the probe train is zero".to_string(),
        ));
    }
    let zeros = vec![0.0; probe.len()];
    let (values, _) = correct_for_depumping(probe, &zeros, reference, &zeros)?;
    Ok(values.iter().map(|v| v / a0).collect())
}

/// Runs a scenario with line data from `DIPOLESCOPE_DATA` or the built-in Cs D2 table.
pub fn run_scenario(scenario: &Scenario) -> Result<ScenarioOutput> {
    let line = AtomicLine::from_env_or_default()?;
    run_scenario_with_line(scenario, &line)
}

pub fn run_scenario_with_line(scenario: &Scenario, line: &AtomicLine) -> Result<ScenarioOutput> {
    scenario.validate()?;
    let mut ctx = Context {
        scenario,
        line,
        summary: Vec::new(),
        checks: Vec::new(),
        diagnostics: Vec::new(),
        tables: Vec::new(),
        fits_converged: true,
    };
    let outcome = match &scenario.truth {
        Truth::NoiseScaling(t) => ctx.noise_scaling(t)?,
        Truth::Loading(t) => ctx.loading(t)?,
        Truth::Losses(t) => ctx.losses(t)?,
        Truth::LossVsDetuning(t) => ctx.loss_vs_detuning(t)?,
        Truth::Breathing(t) => ctx.breathing(t)?,
        Truth::FrequencyVsPower(t) => ctx.frequency_vs_power(t)?,
        Truth::TimeOfFlight(t) => ctx.time_of_flight(t)?,
        Truth::Depumping(t) => ctx.depumping(t)?,
    };
    let report = ScenarioReport {
        scenario: scenario.name,
        seed: scenario.seed,
        run_count: scenario.run_count,
        converged: ctx.fits_converged,
        summary: ctx.summary,
        checks: ctx.checks,
        diagnostics: ctx.diagnostics,
        fit: outcome,
    };
    Ok(ScenarioOutput {
        scenario: scenario.clone(),
        report,
        tables: ctx.tables,
    })
}

struct Context<'a> {
    scenario: &'a Scenario,
    line: &'a AtomicLine,
    summary: Vec<SummaryEntry>,
    checks: Vec<Check>,
    diagnostics: Vec<String>,
    tables: Vec<Table>,
    fits_converged: bool,
}

impl<'a> Context<'a> {
    fn record_fit(&mut self, label: &str, fit: &FitResult) {
        self.fits_converged &= fit.converged;
        for d in &fit.diagnostics {
            self.diagnostics.push(format!("{label}: {d}"));
        }
        if !fit.converged {
            self.diagnostics.push(format!(
                "{label}: fit did not converge ({:?})",
                fit.termination
            ));
        }
    }

    fn entry(&mut self, quantity: &str, e: Estimate, scale: f64, unit: &str, truth: Option<f64>) {
        self.summary
            .push(SummaryEntry::new(quantity, e, scale, unit, truth));
    }

    fn detector(&self, probe: ProbePulseConfig, repump: f64) -> Result<Detector> {
        Detector::new(self.scenario, probe, self.line, repump)
    }

    fn tag(&self) -> u64 {
        self.scenario.name.tag()
    }

    fn noise_scaling(&mut self, truth: &NoiseScalingTruth) -> Result<Outcome> {
        let s = self.scenario;
        let probe = s.probe_config();
        let interferometer = s.interferometer.to_interferometer();
        let sweep = |noise: NoiseSettings, branch: u64| -> Result<Vec<f64>> {
            truth
                .photon_numbers
                .par_iter()
                .enumerate()
                .map(|(i, &n)| {
                    let mut total = 0.0;
                    for r in 0..s.run_count {
                        let seed = derive_seed(s.seed, &[self.tag(), branch, i as u64, r as u64]);
                        let rec = simulate_areas(
                            n,
                            probe.period,
                            probe.pulse_count,
                            &interferometer,
                            |_| 0.0,
                            &noise.to_config(seed),
                        );
                        total += two_point_variance_of(&rec.areas, truth.variance_lag)?;
                    }
                    Ok(total / s.run_count as f64)
                })
                .collect()
        };
        let points = |v: &[f64]| -> Vec<(f64, f64)> {
            truth
                .photon_numbers
                .iter()
                .copied()
                .zip(v.iter().copied())
                .collect()
        };

        let primary = sweep(s.noise, 0)?;
        let balanced = noise_scaling_exponent(&points(&primary))?;
        let unbalanced_var = if truth.unbalanced_amplitude_rms > 0.0 {
            let noise = NoiseSettings {
                balanced: false,
                classical_amplitude_rms: truth.unbalanced_amplitude_rms,
                ..s.noise
            };
            Some(sweep(noise, 1)?)
        } else {
            None
        };
        let unbalanced = unbalanced_var
            .as_deref()
            .map(|v| noise_scaling_exponent(&points(v)))
            .transpose()?;

        let mut table = Table::new(
            "noise_scaling",
            &["photons", "power_uw", "variance", "variance_unbalanced"],
        );
        for (i, &n) in truth.photon_numbers.iter().enumerate() {
            table.push(vec![
                n,
                probe.power_for_photons(n, self.line) * 1e6,
                primary[i],
                unbalanced_var.as_ref().map_or(f64::NAN, |v| v[i]),
            ]);
        }
        self.tables.push(table);
        let slope = |f: &crate::interferometer::ScalingFit| Estimate {
            value: f.slope,
            error: f.slope_error,
        };
        let shot_limited = s.noise.shot_noise
            && (s.noise.balanced || s.noise.classical_amplitude_rms == 0.0)
            && s.noise.classical_phase_rms_rad == 0.0
            && s.noise.phase_walk_rms_rad == 0.0;
        self.entry(
            "variance slope",
            slope(&balanced),
            1.0,
            "",
            shot_limited.then_some(1.0),
        );
        if shot_limited {
            self.checks.push(Check::new(
                "shot_noise_slope",
                (balanced.slope - 1.0).abs() <= 0.05,
                format!("slope {:.4} against 1 ± 0.05", balanced.slope),
            ));
        }
        if let Some(u) = &unbalanced {
            self.entry("unbalanced variance slope", slope(u), 1.0, "", Some(2.0));
            self.checks.push(Check::new(
                "classical_noise_slope",
                (u.slope - 2.0).abs() <= 0.1,
                format!("slope {:.4} against 2 ± 0.1", u.slope),
            ));
        }
        Ok(Outcome::NoiseScaling(NoiseScalingOutcome {
            balanced,
            unbalanced,
        }))
    }

    fn loading(&mut self, truth: &LoadingTruth) -> Result<Outcome> {
        let s = self.scenario;
        let params = truth.params();
        let times = truth.times();
        let n_true = loading_curve(&params, 0.0, &times)?;
        let detector = self.detector(s.probe_config(), 0.0)?;
        let data = measure_points(
            &detector,
            &n_true,
            &times,
            s,
            &[self.tag()],
            &mut self.diagnostics,
        )?;
        let fit = fit_loading(
            &data,
            &LoadingFitOptions {
                split_time: truth.split_time_s,
                initial_atoms: 0.0,
                joint_refinement: truth.joint_refinement,
            },
        )?;
        self.record_fit("early segment", &fit.early);
        self.record_fit("late segment", &fit.late);
        if let Some(j) = &fit.joint {
            self.record_fit("joint", j);
        }
        let model = loading_curve(&fit.params(), 0.0, &times)?;
        let mut table = Table::new("loading", &["t_s", "atoms", "sigma", "truth", "fit"]);
        for i in 0..times.len() {
            table.push(vec![
                times[i],
                data.y[i],
                data.sigma[i],
                n_true[i],
                model[i],
            ]);
        }
        self.tables.push(table);
        self.entry("R0", fit.r0, 1.0, "atoms/s", Some(params.r0));
        self.entry(
            "gamma_MOT",
            fit.gamma_mot,
            1.0,
            "1/s",
            Some(params.gamma_mot),
        );
        self.entry("Gamma_L", fit.gamma_l, 1.0, "1/s", Some(params.gamma_l));
        self.entry("beta_L", fit.beta_l, 1.0, "1/s", Some(params.beta_l));
        self.entry(
            "split time",
            Estimate {
                value: fit.split_time,
                error: 0.0,
            },
            1e3,
            "ms",
            None,
        );
        let rchi = fit.final_fit().reduced_chi2;
        self.checks.push(Check::new(
            "reduced_chi2",
            (rchi - 1.0).abs() <= 0.5,
            format!("{rchi:.3} for the reported fit"),
        ));
        Ok(Outcome::Loading(fit))
    }

    fn loss_data(
        &mut self,
        params: &LossParams,
        times: &[f64],
        stream: &[u64],
    ) -> Result<(Series, Vec<f64>)> {
        let s = self.scenario;
        let n_true = loss_curve(params, s.atom_number, times)?;
        let detector = self.detector(s.probe_config(), 0.0)?;
        let data = measure_points(&detector, &n_true, times, s, stream, &mut self.diagnostics)?;
        Ok((data, n_true))
    }

    fn losses(&mut self, truth: &LossTruth) -> Result<Outcome> {
        let params = truth.params();
        let times = truth.times();
        let (data, n_true) = self.loss_data(&params, &times, &[self.tag()])?;
        let fit = fit_loss(&data)?;
        self.record_fit("loss", &fit.fit);
        let model = loss_curve(&fit.params(), fit.n0.value, &times)?;
        let mut table = Table::new("losses", &["t_s", "atoms", "sigma", "truth", "fit"]);
        for i in 0..times.len() {
            table.push(vec![
                times[i],
                data.y[i],
                data.sigma[i],
                n_true[i],
                model[i],
            ]);
        }
        self.tables.push(table);
        self.entry("N0", fit.n0, 1.0, "atoms", Some(self.scenario.atom_number));
        self.entry("Gamma", fit.gamma, 1.0, "1/s", Some(params.gamma));
        self.entry("beta", fit.beta, 1.0, "1/s", Some(params.beta));
        Ok(Outcome::Losses(fit))
    }

    fn loss_vs_detuning(&mut self, truth: &LossVsDetuningTruth) -> Result<Outcome> {
        let times = loss_times(truth.gamma_per_s);
        let mut points = Vec::new();
        let mut table = Table::new(
            "loss_vs_detuning",
            &[
                "detuning_hwhm",
                "detuning_mhz",
                "beta_truth",
                "beta",
                "beta_sigma",
                "gamma",
                "gamma_sigma",
            ],
        );
        for (i, &d) in truth.detunings_hwhm.iter().enumerate() {
            let params = LossParams {
                gamma: truth.gamma_per_s,
                beta: truth.beta_at(d),
            };
            let (data, _) = self.loss_data(&params, &times, &[self.tag(), i as u64])?;
            let fit = fit_loss(&data)?;
            self.record_fit(&format!("detuning {d}"), &fit.fit);
            table.push(vec![
                d,
                d * crate::constants::hertz(self.line.hwhm) * 1e-6,
                params.beta,
                fit.beta.value,
                fit.beta.error,
                fit.gamma.value,
                fit.gamma.error,
            ]);
            self.entry(
                &format!("beta at {} HWHM", significant(d)),
                fit.beta,
                1.0,
                "1/s",
                Some(params.beta),
            );
            points.push(DetuningPoint {
                detuning_hwhm: d,
                truth_beta: params.beta,
                fit,
            });
        }
        self.tables.push(table);
        let mut order: Vec<&DetuningPoint> = points.iter().collect();
        order.sort_by(|a, b| b.detuning_hwhm.abs().total_cmp(&a.detuning_hwhm.abs()));
        let monotone = order
            .windows(2)
            .all(|w| w[1].fit.beta.value > w[0].fit.beta.value);
        self.checks.push(Check::new(
            "beta_increases_toward_resonance",
            monotone,
            "fitted two-body loss strictly increases as the detuning shrinks".into(),
        ));
        Ok(Outcome::LossVsDetuning(points))
    }

    /// One breathing measurement: probe and dipole-on reference trains, run-averaged,
    /// depumping divided out, then fitted.
    fn breathing_fit(
        &mut self,
        nu: f64,
        tau: f64,
        depth: f64,
        stream: &[u64],
        label: &str,
    ) -> Result<(BreathingFit, Series)> {
        let s = self.scenario;
        let detector = self.detector(s.probe_config(), 0.0)?;
        let k = detector.pulses();
        let t: Vec<f64> = (0..k).map(|i| i as f64 * detector.probe.period).collect();
        let decay = detector.depumped(s.atom_number)?;
        let shape = breathing_signal(&t, nu, tau, depth, 1.0)?;
        let probe_atoms: Vec<f64> = decay.iter().zip(&shape).map(|(d, f)| d * f).collect();
        let avg = measure_trains(
            &detector,
            &probe_atoms,
            Some(&decay),
            s,
            stream,
            &mut self.diagnostics,
        )?;
        let (reference, reference_sigma) = avg.reference.expect("reference requested");
        let (y, sigma) =
            correct_for_depumping(&avg.probe, &avg.probe_sigma, &reference, &reference_sigma)?;
        let data = Series::new(t, y, sigma)?;
        let fit = fit_breathing(&data)?;
        self.record_fit(label, &fit.fit);
        if fit.near_nyquist {
            self.diagnostics.push(format!(
                "{label}: fitted frequency lies within two bins of Nyquist"
            ));
        }
        Ok((fit, data))
    }

    fn breathing(&mut self, truth: &BreathingTruth) -> Result<Outcome> {
        let tau = truth.damping_time_ms * 1e-3;
        let (fit, data) = self.breathing_fit(
            truth.radial_frequency_hz,
            tau,
            truth.depth,
            &[self.tag()],
            "breathing",
        )?;
        let model = breathing_signal(
            &data.t,
            fit.radial_frequency.value,
            fit.damping_time.value,
            fit.depth.value.abs().min(0.999),
            fit.baseline.value,
        )
        .unwrap_or_else(|_| vec![f64::NAN; data.len()]);
        let mut table = Table::new("breathing", &["t_s", "atoms", "sigma", "fit"]);
        for i in 0..data.len() {
            table.push(vec![data.t[i], data.y[i], data.sigma[i], model[i]]);
        }
        self.tables.push(table);
        self.entry(
            "nu_r",
            fit.radial_frequency,
            1.0,
            "Hz",
            Some(truth.radial_frequency_hz),
        );
        self.entry(
            "oscillation frequency",
            fit.signal_frequency,
            1.0,
            "Hz",
            Some(2.0 * truth.radial_frequency_hz),
        );
        self.entry("damping time", fit.damping_time, 1e3, "ms", Some(tau));
        self.checks.push(Check::new(
            "below_nyquist",
            !fit.near_nyquist,
            format!("{:.1} Hz oscillation", fit.signal_frequency.value),
        ));
        Ok(Outcome::Breathing(fit))
    }

    fn frequency_vs_power(&mut self, truth: &FrequencyVsPowerTruth) -> Result<Outcome> {
        let s = self.scenario;
        let beam = s.trap.to_beam();
        let nus = trap_frequency_vs_power(&truth.powers_w, beam.waist, beam.wavelength, self.line)?;
        let tau = truth.damping_time_ms * 1e-3;
        let mut points = Vec::new();
        let mut table = Table::new(
            "frequency_vs_power",
            &["power_w", "nu_truth_hz", "nu_hz", "nu_sigma_hz"],
        );
        for (i, (&p, &nu)) in truth.powers_w.iter().zip(&nus).enumerate() {
            let (fit, _) = self.breathing_fit(
                nu,
                tau,
                truth.depth,
                &[self.tag(), i as u64],
                &format!("power {p} W"),
            )?;
            table.push(vec![
                p,
                nu,
                fit.radial_frequency.value,
                fit.radial_frequency.error,
            ]);
            points.push(FrequencyPoint {
                power: p,
                truth_frequency: nu,
                fit,
            });
        }
        self.tables.push(table);
        let data = Series::new(
            points.iter().map(|p| p.power).collect(),
            points
                .iter()
                .map(|p| p.fit.radial_frequency.value)
                .collect(),
            points
                .iter()
                .map(|p| p.fit.radial_frequency.error.max(1e-9))
                .collect(),
        )?;
        let waist = fit_waist(&data, beam.wavelength, self.line)?;
        self.record_fit("waist", &waist.fit);
        self.entry("nu_r / sqrt(P)", waist.coefficient, 1.0, "Hz/W^0.5", None);
        self.entry("trap waist", waist.waist, 1e6, "um", Some(beam.waist));
        let rel = waist.waist.relative_error(beam.waist);
        self.checks.push(Check::new(
            "waist_within_2_percent",
            rel <= 0.02,
            format!("{:.2}% from truth", rel * 100.0),
        ));
        Ok(Outcome::FrequencyVsPower(FrequencyVsPowerOutcome {
            points,
            waist,
        }))
    }

    fn time_of_flight(&mut self, truth: &TimeOfFlightTruth) -> Result<Outcome> {
        let s = self.scenario;
        let detector = self.detector(s.probe_config(), 0.0)?;
        let k = detector.pulses();
        let t: Vec<f64> = (0..k).map(|i| i as f64 * detector.probe.period).collect();
        let ballistic = BallisticParams {
            temperature: truth.temperature_uk * 1e-6,
            radial_frequency: truth.radial_frequency_hz,
            waist: detector.probe.waist,
            gravity: truth.gravity_m_per_s2,
            mass: self.line.mass,
        };
        ballistic.validate()?;
        let escape: Vec<f64> = t
            .iter()
            .map(|&t| ballistic_escape_probability(&ballistic, t))
            .collect();
        let decay = detector.depumped(s.atom_number)?;
        let probe_atoms: Vec<f64> = decay
            .iter()
            .zip(&escape)
            .map(|(d, p)| d * (1.0 - p))
            .collect();
        let reference = truth.depump_correction.then_some(decay.as_slice());
        let avg = measure_trains(
            &detector,
            &probe_atoms,
            reference,
            s,
            &[self.tag()],
            &mut self.diagnostics,
        )?;
        let (corrected, corrected_sigma) = match &avg.reference {
            Some((r, rs)) => correct_for_depumping(&avg.probe, &avg.probe_sigma, r, rs)?,
            None => (avg.probe.clone(), avg.probe_sigma.clone()),
        };
        let a0 = corrected[0];
        ensure(a0 > 0.0, "atom_number", || {
            "no signal on the first pulse".into()
        })?;
        let rel0 = avg.probe_sigma[0] / a0;
        let frac: Vec<f64> = corrected.iter().map(|c| c / a0).collect();
        let frac_sigma: Vec<f64> = corrected_sigma
            .iter()
            .zip(&frac)
            .map(|(cs, f)| ((cs / a0).powi(2) + (f * rel0).powi(2)).sqrt())
            .collect();
        // The first pulse fixes the normalisation and carries no information about P.
        let data = Series::new(
            t[1..].to_vec(),
            frac[1..].iter().map(|f| 1.0 - f).collect(),
            frac_sigma[1..].to_vec(),
        )?;
        let mut config = TemperatureFitConfig::new(detector.probe.waist, self.line);
        config.gravity = truth.gravity_m_per_s2;
        let fit = fit_temperature(&data, &config)?;
        self.record_fit("temperature", &fit.fit);
        let model_params = BallisticParams {
            temperature: fit.temperature.value,
            radial_frequency: fit.radial_frequency.value,
            ..ballistic
        };
        let mut table = Table::new(
            "time_of_flight",
            &["t_s", "escape", "sigma", "truth", "fit"],
        );
        table.push(vec![0.0, 0.0, 0.0, 0.0, 0.0]);
        for i in 0..data.len() {
            let tt = data.t[i];
            table.push(vec![
                tt,
                data.y[i],
                data.sigma[i],
                escape[i + 1],
                ballistic_escape_probability(&model_params, tt),
            ]);
        }
        self.tables.push(table);
        if let Some((r, _)) = &avg.reference {
            let end = r[r.len() - 1] / r[0];
            self.diagnostics.push(format!(
                "dipole-on reference decayed by {:.2}% over the train",
                (1.0 - end) * 100.0
            ));
        }
        self.entry("T", fit.temperature, 1e6, "uK", Some(ballistic.temperature));
        self.entry(
            "nu_r",
            fit.radial_frequency,
            1.0,
            "Hz",
            Some(truth.radial_frequency_hz),
        );
        Ok(Outcome::TimeOfFlight(fit))
    }

    fn depumping(&mut self, truth: &DepumpingTruth) -> Result<Outcome> {
        let s = self.scenario;
        let mut trains = Vec::new();
        let mut theory = Vec::new();
        let mut table = Table::new(
            "depumping_trains",
            &["power_uw", "pulse", "atoms", "sigma", "truth"],
        );
        let mut b_eff = None;
        for (i, &p_uw) in truth.powers_uw.iter().enumerate() {
            let probe = s.probe.with_power_uw(p_uw);
            theory.push(excitation_probability(&probe, self.line));
            let detector = self.detector(probe, truth.repump)?;
            b_eff.get_or_insert(detector.depump.effective_branching());
            let atoms = detector.depumped(s.atom_number)?;
            let avg = measure_trains(
                &detector,
                &atoms,
                None,
                s,
                &[self.tag(), i as u64],
                &mut self.diagnostics,
            )?;
            let k: Vec<f64> = (0..detector.pulses()).map(|k| k as f64).collect();
            for j in 0..k.len() {
                table.push(vec![p_uw, k[j], avg.probe[j], avg.probe_sigma[j], atoms[j]]);
            }
            trains.push(DepumpTrain {
                power: p_uw * 1e-6,
                data: Series::new(k, avg.probe, avg.probe_sigma)?,
            });
        }
        self.tables.push(table);
        let b_eff = b_eff.expect("at least three powers");
        let fit = fit_depumping(&trains, b_eff)?;
        for p in &fit.points {
            self.record_fit(&format!("train at {} uW", p.power * 1e6), &p.fit);
        }
        self.record_fit("power line", &fit.line);
        let theory_slope = theory[0] / trains[0].power;
        let mut table = Table::new("depumping", &["power_uw", "p_e", "p_e_sigma", "p_e_theory"]);
        let mut worst: f64 = 0.0;
        for (p, th) in fit.points.iter().zip(&theory) {
            table.push(vec![
                p.power * 1e6,
                p.excitation.value,
                p.excitation.error,
                *th,
            ]);
            worst = worst.max(p.excitation.relative_error(*th));
            self.entry(
                &format!("p_e at {} uW", significant(p.power * 1e6)),
                p.excitation,
                1.0,
                "",
                Some(*th),
            );
        }
        self.tables.push(table);
        self.entry("d p_e / d P", fit.slope, 1e-6, "1/uW", Some(theory_slope));
        self.entry("intercept", fit.intercept, 1.0, "", Some(0.0));
        self.checks.push(Check::new(
            "excitation_matches_theory",
            worst <= 0.10,
            format!(
                "largest deviation from the absorption model {:.2}%",
                worst * 100.0
            ),
        ));
        let slope_dev = fit.slope.relative_error(theory_slope);
        self.checks.push(Check::new(
            "slope_matches_theory",
            slope_dev <= 0.05,
            format!("{:.2}% from the absorption model", slope_dev * 100.0),
        ));
        Ok(Outcome::Depumping(DepumpingOutcome {
            fit,
            theory_slope,
            theory_excitation: theory,
            effective_branching: b_eff,
        }))
    }
}
