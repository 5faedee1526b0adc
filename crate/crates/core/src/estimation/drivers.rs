//! Fit drivers for the individual measurements: loading, loss, breathing, time of flight,
//! depumping and the trap-frequency power sweep.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::lm::{format_value_error, lm_fit, FitProblem, FitResult, ParamSpec};
use super::Series;
use crate::atomic_physics::AtomicLine;
use crate::constants::{STANDARD_GRAVITY, TWO_PI};
use crate::error::{ensure, Error, Result};
use crate::trap_dynamics::{
    ballistic_escape_probability, loading_curve, loss_curve_closed_form,
    waist_from_sqrt_power_coefficient, BallisticParams, LoadingParams, LossParams,
};

/// A fitted value and its one-standard-deviation uncertainty.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    fn from_fit(fit: &FitResult, name: &str) -> Self {
        Estimate {
            value: fit.value(name),
            error: fit.error(name),
        }
    }

    /// True when `truth` lies within `k` standard errors.
    pub fn covers(&self, truth: f64, k: f64) -> bool {
        (self.value - truth).abs() <= k * self.error
    }

    pub fn relative_error(&self, truth: f64) -> f64 {
        (self.value - truth).abs() / truth.abs()
    }

    fn scaled(self, factor: f64) -> Self {
        Estimate {
            value: self.value * factor,
            error: self.error * factor.abs(),
        }
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_value_error(self.value, self.error))
    }
}

fn require_points(data: &Series, min: usize, what: &str) -> Result<()> {
    data.validate()?;
    if data.len() < min {
        return Err(Error::InsufficientData(format!(
            "{what} needs at least {min} points, got {}",
            data.len()
        )));
    }
    Ok(())
}

fn problem_from<'a, M>(data: &Series, params: Vec<ParamSpec>, model: M) -> FitProblem<'a>
where
    M: Fn(&[f64], &[f64]) -> Result<Vec<f64>> + Send + Sync + 'a,
{
    FitProblem::new(
        data.t.clone(),
        data.y.clone(),
        data.sigma.clone(),
        params,
        model,
    )
}

/// Index of the maximum of the centred 5-point moving average.
fn smoothed_argmax(y: &[f64]) -> usize {
    let n = y.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(2);
            let hi = (i + 3).min(n);
            (i, y[lo..hi].iter().sum::<f64>() / (hi - lo) as f64)
        })
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Starting values for (Γ, β) of a decaying series: the late-time logarithmic slope
/// gives Γ, the excess of the initial decay rate over Γ gives βN₀.
fn loss_initial_guess(t: &[f64], y: &[f64], n0: f64) -> (f64, f64) {
    let n = t.len();
    let log_slope = |a: usize, b: usize| {
        let (ya, yb) = (y[a].max(1e-300), y[b].max(1e-300));
        -(yb / ya).ln() / (t[b] - t[a])
    };
    let span = t[n - 1] - t[0];
    // Points that have decayed into the noise floor would dominate a tail slope.
    let last = (0..n)
        .rev()
        .find(|&i| y[i] > 0.1 * y[0])
        .unwrap_or(n - 1)
        .max(1);
    let gamma = if last >= 3 {
        log_slope(last / 2, last)
    } else {
        log_slope(0, last)
    };
    let gamma = if gamma.is_finite() && gamma > 0.0 {
        gamma
    } else {
        1.0 / span.max(1e-9)
    };
    // The initial rate spans several points so that dense, noisy records do not produce a
    // runaway β guess; βN₀ is capped so the starting curve keeps a usable Jacobian.
    let early = log_slope(0, (n / 8).max(1));
    let beta = if early.is_finite() && n0 > 0.0 {
        ((early - gamma) / n0).clamp(0.0, 10.0 / (span.max(1e-9) * n0))
    } else {
        0.0
    };
    (gamma, beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoadingFitOptions {
    /// Split between the loading-dominated and loss-dominated segments (s). `None` selects
    /// the maximum of the 5-point moving average.
    pub split_time: Option<f64>,
    /// Atom number at t = 0 (held fixed).
    pub initial_atoms: f64,
    /// Refine all four rates jointly on the full loading equation after the piecewise fit.
    pub joint_refinement: bool,
}

impl Default for LoadingFitOptions {
    fn default() -> Self {
        LoadingFitOptions {
            split_time: None,
            initial_atoms: 0.0,
            joint_refinement: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LoadingFit {
    pub r0: Estimate,
    pub gamma_mot: Estimate,
    pub gamma_l: Estimate,
    pub beta_l: Estimate,
    pub split_time: f64,
    /// R₀ and γ_MOT from the points up to the split time.
    pub early: FitResult,
    /// Γ_L and β_L from the points after the split time.
    pub late: FitResult,
    pub joint: Option<FitResult>,
    pub converged: bool,
}

impl LoadingFit {
    pub fn params(&self) -> LoadingParams {
        LoadingParams {
            r0: self.r0.value,
            gamma_mot: self.gamma_mot.value,
            gamma_l: self.gamma_l.value,
            beta_l: self.beta_l.value.max(0.0),
        }
    }

    /// The fit that supplied the reported values.
    pub fn final_fit(&self) -> &FitResult {
        self.joint.as_ref().unwrap_or(&self.late)
    }
}

/// Loading-curve fit. The early segment is fitted with the flux term only,
/// `N₀ + R₀(1 − e^{−γ_MOT t})/γ_MOT`; the late segment with the loss solution started
/// from the early model's value at the split time. The piecewise values seed an optional
/// joint fit of the full loading equation.
pub fn fit_loading(data: &Series, options: &LoadingFitOptions) -> Result<LoadingFit> {
    require_points(data, 6, "loading fit")?;
    ensure(data.t.windows(2).all(|w| w[1] > w[0]), "t", || {
        "loading times must be increasing".into()
    })?;
    let n0 = options.initial_atoms;
    ensure(n0.is_finite() && n0 >= 0.0, "initial_atoms", || {
        format!("must be non-negative, got {n0}")
    })?;

    let split = match options.split_time {
        Some(t) => t,
        None => data.t[smoothed_argmax(&data.y)],
    };
    let early_data = data.window(f64::NEG_INFINITY, split);
    let late_data = data.window(split, f64::INFINITY);
    if early_data.len() < 3 || late_data.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "split at t = {split} s leaves {} early and {} late points; each segment needs 3",
            early_data.len(),
            late_data.len()
        )));
    }

    // Early segment.
    let peak = early_data
        .y
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let slope = (early_data.y[1] - early_data.y[0]) / (early_data.t[1] - early_data.t[0]);
    let r0_guess = if slope > 0.0 {
        slope
    } else {
        (peak - n0).max(1.0) / split.max(1e-9)
    };
    let gamma_guess = (r0_guess / (peak - n0).max(1.0)).max(1e-6);
    let flux_only = move |p: &[f64], t: &[f64]| -> Result<Vec<f64>> {
        Ok(t.iter()
            .map(|&t| n0 + p[0] * (-(-p[1] * t).exp_m1()) / p[1])
            .collect())
    };
    let early = lm_fit(
        &problem_from(
            &early_data,
            vec![
                ParamSpec::log("r0", r0_guess),
                ParamSpec::log("gamma_mot", gamma_guess),
            ],
            flux_only,
        )
        .with_jacobian(move |p: &[f64], t: &[f64]| {
            t.iter()
                .map(|&t| {
                    let e = (-p[1] * t).exp();
                    let g = (1.0 - e) / p[1];
                    vec![g, p[0] * (t * e / p[1] - g / p[1])]
                })
                .collect()
        }),
    )?;
    let (r0, gm) = (early.value("r0"), early.value("gamma_mot"));
    let n_split = n0 + r0 * (-(-gm * split).exp_m1()) / gm;

    // Late segment, continuous with the early model at the split.
    let late_t: Vec<f64> = late_data.t.iter().map(|t| t - split).collect();
    let (g_guess, b_guess) = loss_initial_guess(&late_t, &late_data.y, n_split);
    let late = lm_fit(&FitProblem::new(
        late_t,
        late_data.y.clone(),
        late_data.sigma.clone(),
        vec![
            ParamSpec::log("gamma_l", g_guess),
            ParamSpec::linear("beta_l", b_guess).bounded(0.0, f64::INFINITY),
        ],
        move |p: &[f64], t: &[f64]| -> Result<Vec<f64>> {
            let lp = LossParams {
                gamma: p[0],
                beta: p[1],
            };
            Ok(t.iter()
                .map(|&t| loss_curve_closed_form(&lp, n_split, t))
                .collect())
        },
    ))?;

    let mut out = LoadingFit {
        r0: Estimate::from_fit(&early, "r0"),
        gamma_mot: Estimate::from_fit(&early, "gamma_mot"),
        gamma_l: Estimate::from_fit(&late, "gamma_l"),
        beta_l: Estimate::from_fit(&late, "beta_l"),
        split_time: split,
        converged: early.converged && late.converged,
        early,
        late,
        joint: None,
    };

    if options.joint_refinement {
        let start = out.params();
        let joint = lm_fit(&problem_from(
            data,
            vec![
                ParamSpec::log("r0", start.r0),
                ParamSpec::log("gamma_mot", start.gamma_mot),
                ParamSpec::log("gamma_l", start.gamma_l.max(1e-6)),
                ParamSpec::linear("beta_l", start.beta_l).bounded(0.0, f64::INFINITY),
            ],
            move |p: &[f64], t: &[f64]| {
                let params = LoadingParams {
                    r0: p[0],
                    gamma_mot: p[1],
                    gamma_l: p[2],
                    beta_l: p[3],
                };
                loading_curve(&params, n0, t)
            },
        ))?;
        out.r0 = Estimate::from_fit(&joint, "r0");
        out.gamma_mot = Estimate::from_fit(&joint, "gamma_mot");
        out.gamma_l = Estimate::from_fit(&joint, "gamma_l");
        out.beta_l = Estimate::from_fit(&joint, "beta_l");
        out.converged = joint.converged;
        out.joint = Some(joint);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LossFit {
    pub n0: Estimate,
    pub gamma: Estimate,
    pub beta: Estimate,
    pub fit: FitResult,
}

impl LossFit {
    pub fn params(&self) -> LossParams {
        LossParams {
            gamma: self.gamma.value,
            beta: self.beta.value.max(0.0),
        }
    }
}

/// Fits the closed-form loss solution with free initial number N₀ (log), Γ (log) and
/// β (linear, so a vanishing two-body term is representable).
pub fn fit_loss(data: &Series) -> Result<LossFit> {
    require_points(data, 5, "loss fit")?;
    ensure(data.y[0] > 0.0, "y", || {
        "first loss datum must be positive".into()
    })?;
    let t0 = data.t[0];
    let shifted: Vec<f64> = data.t.iter().map(|t| t - t0).collect();
    ensure(shifted.iter().all(|t| *t >= 0.0), "t", || {
        "loss times must start at the earliest point".into()
    })?;
    let n0_guess = data.y[0];
    let (g, b) = loss_initial_guess(&shifted, &data.y, n0_guess);
    let model = |p: &[f64], t: &[f64]| -> Result<Vec<f64>> {
        let (n0, gamma, beta) = (p[0], p[1], p[2]);
        Ok(t.iter()
            .map(|&t| {
                let growth = if gamma * t < 1e-12 {
                    t
                } else {
                    -(-gamma * t).exp_m1() / gamma
                };
                n0 * (-gamma * t).exp() / (1.0 + beta * n0 * growth)
            })
            .collect())
    };
    let jacobian = |p: &[f64], t: &[f64]| -> Vec<Vec<f64>> {
        let (n0, gamma, beta) = (p[0], p[1], p[2]);
        t.iter()
            .map(|&t| {
                let e = (-gamma * t).exp();
                let growth = if gamma * t < 1e-12 {
                    t
                } else {
                    (1.0 - e) / gamma
                };
                let dgrowth = if gamma * t < 1e-12 {
                    -t * t / 2.0
                } else {
                    (t * e - growth) / gamma
                };
                let d = 1.0 + beta * n0 * growth;
                let n = n0 * e / d;
                vec![
                    e / (d * d),
                    -t * n - n * beta * n0 * dgrowth / d,
                    -n * n0 * growth / d,
                ]
            })
            .collect()
    };
    let fit = lm_fit(
        &FitProblem::new(
            shifted,
            data.y.clone(),
            data.sigma.clone(),
            vec![
                ParamSpec::log("n0", n0_guess),
                ParamSpec::log("gamma", g),
                ParamSpec::linear("beta", b),
            ],
            model,
        )
        .with_jacobian(jacobian),
    )?;
    Ok(LossFit {
        n0: Estimate::from_fit(&fit, "n0"),
        gamma: Estimate::from_fit(&fit, "gamma"),
        beta: Estimate::from_fit(&fit, "beta"),
        fit,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BreathingFit {
    /// Natural radial frequency, half the observed oscillation frequency (Hz).
    pub radial_frequency: Estimate,
    pub signal_frequency: Estimate,
    pub damping_time: Estimate,
    pub depth: Estimate,
    pub baseline: Estimate,
    /// The fitted oscillation lies within two periodogram bins of the Nyquist frequency.
    pub near_nyquist: bool,
    pub fit: FitResult,
}

/// Frequency of the largest periodogram peak of the mean-subtracted series, scanned
/// from one cycle per record up to Nyquist on a grid four times finer than the DFT bins.
fn periodogram_peak(t: &[f64], y: &[f64], nyquist: f64, span: f64) -> f64 {
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let df = 0.25 / span;
    let steps = ((nyquist - 1.0 / span) / df).floor().max(0.0) as usize;
    (0..=steps)
        .map(|k| {
            let f = 1.0 / span + k as f64 * df;
            let (mut c, mut s) = (0.0, 0.0);
            for (ti, yi) in t.iter().zip(y) {
                let (sn, cs) = (TWO_PI * f * ti).sin_cos();
                c += (yi - mean) * cs;
                s += (yi - mean) * sn;
            }
            (f, c * c + s * s)
        })
        .fold((1.0 / span, f64::NEG_INFINITY), |best, (f, p)| {
            if p > best.1 {
                (f, p)
            } else {
                best
            }
        })
        .0
}

/// Fits `baseline·[1 + depth·e^{−t/τ}·cos(2πf t)]` to uniformly sampled data and reports
/// ν_r = f/2.
pub fn fit_breathing(data: &Series) -> Result<BreathingFit> {
    require_points(data, 8, "breathing fit")?;
    let n = data.len();
    let dt = (data.t[n - 1] - data.t[0]) / (n - 1) as f64;
    ensure(dt > 0.0, "t", || {
        "breathing samples must be increasing".into()
    })?;
    let span = n as f64 * dt;
    let nyquist = 0.5 / dt;
    let f0 = periodogram_peak(&data.t, &data.y, nyquist, span);
    if f0 * (data.t[n - 1] - data.t[0]) < 3.0 {
        return Err(Error::InsufficientData(format!(
            "record of {:.3e} s covers fewer than 3 periods of the {f0:.1} Hz oscillation",
            data.t[n - 1] - data.t[0]
        )));
    }
    let baseline = data.y.iter().sum::<f64>() / n as f64;
    let amplitude = data
        .y
        .iter()
        .map(|y| (y - baseline).abs())
        .fold(0.0, f64::max);
    let depth0 = (amplitude / baseline.abs().max(1e-300)).min(0.9);
    let tau0 = (data.t[n - 1] - data.t[0]).max(dt) / 2.0;

    let model = |p: &[f64], t: &[f64]| -> Result<Vec<f64>> {
        let (b, d, tau, f) = (p[0], p[1], p[2], p[3]);
        Ok(t.iter()
            .map(|&t| b * (1.0 + d * (-t / tau).exp() * (TWO_PI * f * t).cos()))
            .collect())
    };
    let jacobian = |p: &[f64], t: &[f64]| -> Vec<Vec<f64>> {
        let (b, d, tau, f) = (p[0], p[1], p[2], p[3]);
        t.iter()
            .map(|&t| {
                let env = (-t / tau).exp();
                let (s, c) = (TWO_PI * f * t).sin_cos();
                vec![
                    1.0 + d * env * c,
                    b * env * c,
                    b * d * env * c * t / (tau * tau),
                    -b * d * env * s * TWO_PI * t,
                ]
            })
            .collect()
    };
    // Try both signs of the modulation: the periodogram fixes the frequency, not the phase.
    let mut best: Option<FitResult> = None;
    for sign in [1.0, -1.0] {
        let fit = lm_fit(
            &problem_from(
                data,
                vec![
                    ParamSpec::linear("baseline", baseline),
                    ParamSpec::linear("depth", sign * depth0),
                    ParamSpec::log("damping_time", tau0),
                    ParamSpec::log("signal_frequency", f0).bounded(0.0, nyquist),
                ],
                model,
            )
            .with_jacobian(jacobian),
        )?;
        if best.as_ref().is_none_or(|b| fit.chi2 < b.chi2) {
            best = Some(fit);
        }
    }
    let fit = best.expect("two candidate fits");
    let signal = Estimate::from_fit(&fit, "signal_frequency");
    let bin = 1.0 / span;
    Ok(BreathingFit {
        radial_frequency: signal.scaled(0.5),
        signal_frequency: signal,
        damping_time: Estimate::from_fit(&fit, "damping_time"),
        depth: Estimate::from_fit(&fit, "depth"),
        baseline: Estimate::from_fit(&fit, "baseline"),
        near_nyquist: nyquist - signal.value <= 2.0 * bin,
        fit,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemperatureFitConfig {
    /// Probe beam waist w₀ (m).
    pub waist: f64,
    /// m/s².
    pub gravity: f64,
    /// Atomic mass (kg).
    pub mass: f64,
}

impl TemperatureFitConfig {
    pub fn new(waist: f64, line: &AtomicLine) -> Self {
        TemperatureFitConfig {
            waist,
            gravity: STANDARD_GRAVITY,
            mass: line.mass,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TemperatureFit {
    /// K.
    pub temperature: Estimate,
    /// Hz.
    pub radial_frequency: Estimate,
    pub fit: FitResult,
}

/// Physical limits (K, Hz) for the temperature fit. Noisy records can otherwise run
/// off to infinity along the weakly constrained T–ν_r valley.
const TEMPERATURE_RANGE: (f64, f64) = (1e-9, 1e-2);
const FREQUENCY_RANGE: (f64, f64) = (1.0, 1e5);

/// Fits the ballistic escape probability to measured escape fractions with free
/// temperature and radial frequency (both log-parameterised). A coarse grid search
/// over 1–100 μK and 50–1000 Hz supplies the starting point.
pub fn fit_temperature(data: &Series, config: &TemperatureFitConfig) -> Result<TemperatureFit> {
    require_points(data, 3, "temperature fit")?;
    ensure(config.waist > 0.0, "waist", || {
        format!("must be positive, got {}", config.waist)
    })?;
    ensure(config.mass > 0.0, "mass", || {
        format!("must be positive, got {}", config.mass)
    })?;
    ensure(config.gravity >= 0.0, "gravity", || {
        format!("must be non-negative, got {}", config.gravity)
    })?;
    let cfg = *config;
    let curve = move |temperature: f64, nu: f64, t: &[f64]| -> Vec<f64> {
        let params = BallisticParams {
            temperature,
            radial_frequency: nu,
            waist: cfg.waist,
            gravity: cfg.gravity,
            mass: cfg.mass,
        };
        t.iter()
            .map(|&t| ballistic_escape_probability(&params, t))
            .collect()
    };
    let chi2 = |model: &[f64]| -> f64 {
        model
            .iter()
            .zip(&data.y)
            .zip(&data.sigma)
            .map(|((m, y), s)| ((y - m) / s).powi(2))
            .sum()
    };
    let grid = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
        (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    };
    let mut start = (15e-6, 275.0, f64::INFINITY);
    for &temperature in &grid(1e-6, 100e-6, 25) {
        for &nu in &grid(50.0, 1000.0, 25) {
            let c = chi2(&curve(temperature, nu, &data.t));
            if c < start.2 {
                start = (temperature, nu, c);
            }
        }
    }
    let fit = lm_fit(&problem_from(
        data,
        vec![
            ParamSpec::log("temperature", start.0)
                .bounded(TEMPERATURE_RANGE.0, TEMPERATURE_RANGE.1),
            ParamSpec::log("radial_frequency", start.1)
                .bounded(FREQUENCY_RANGE.0, FREQUENCY_RANGE.1),
        ],
        move |p: &[f64], t: &[f64]| Ok(curve(p[0], p[1], t)),
    ))?;
    let mut fit = fit;
    for (name, range) in [
        ("temperature", TEMPERATURE_RANGE),
        ("radial_frequency", FREQUENCY_RANGE),
    ] {
        let v = fit.value(name);
        if v <= range.0 * (1.0 + 1e-9) || v >= range.1 * (1.0 - 1e-9) {
            fit.converged = false;
            fit.diagnostics.push(format!(
                "{name} pinned at its physical limit {v:e}; the record does not constrain it"
            ));
        }
    }
    Ok(TemperatureFit {
        temperature: Estimate::from_fit(&fit, "temperature"),
        radial_frequency: Estimate::from_fit(&fit, "radial_frequency"),
        fit,
    })
}

/// Phase (or any signal proportional to the bright population) against pulse index at
/// one probe power.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepumpTrain {
    /// W.
    pub power: f64,
    /// `t` holds the pulse index.
    pub data: Series,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepumpPoint {
    pub power: f64,
    /// Fractional signal loss per pulse.
    pub decay_per_pulse: Estimate,
    pub excitation: Estimate,
    pub fit: FitResult,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DepumpFit {
    pub points: Vec<DepumpPoint>,
    /// d p_e / dP, 1/W.
    pub slope: Estimate,
    pub intercept: Estimate,
    pub line: FitResult,
    pub converged: bool,
}

/// Fits `A(1 − r)^k` to each train, converts the decay per pulse to an excitation
/// probability `p_e = r / b_eff`, and fits `p_e = a + s·P` across powers.
pub fn fit_depumping(trains: &[DepumpTrain], effective_branching: f64) -> Result<DepumpFit> {
    if trains.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "depumping fit needs at least 3 powers, got {}",
            trains.len()
        )));
    }
    ensure(
        effective_branching > 0.0 && effective_branching <= 1.0,
        "effective_branching",
        || format!("must lie in (0, 1], got {effective_branching}"),
    )?;
    let mut points = Vec::with_capacity(trains.len());
    for train in trains {
        ensure(train.power >= 0.0, "power", || {
            format!("must be non-negative, got {}", train.power)
        })?;
        require_points(&train.data, 3, "depumping train")?;
        let d = &train.data;
        let n = d.len();
        ensure(d.y[0] > 0.0, "y", || {
            "first pulse signal must be positive".into()
        })?;
        let ratio = (d.y[n - 1] / d.y[0]).max(1e-6);
        let r0 = 1.0 - ratio.powf(1.0 / (d.t[n - 1] - d.t[0]).max(1.0));
        let fit = lm_fit(
            &problem_from(
                d,
                vec![
                    ParamSpec::log("amplitude", d.y[0]),
                    ParamSpec::linear("decay_per_pulse", r0.clamp(-0.5, 0.9))
                        .bounded(-1.0, 1.0 - 1e-12),
                ],
                |p: &[f64], k: &[f64]| Ok(k.iter().map(|&k| p[0] * (1.0 - p[1]).powf(k)).collect()),
            )
            .with_jacobian(|p: &[f64], k: &[f64]| {
                k.iter()
                    .map(|&k| {
                        let q = (1.0 - p[1]).powf(k);
                        vec![q, -p[0] * k * (1.0 - p[1]).powf(k - 1.0)]
                    })
                    .collect()
            }),
        )?;
        let decay = Estimate::from_fit(&fit, "decay_per_pulse");
        points.push(DepumpPoint {
            power: train.power,
            decay_per_pulse: decay,
            excitation: decay.scaled(1.0 / effective_branching),
            fit,
        });
    }
    let mut line_data = Series {
        t: points.iter().map(|p| p.power).collect(),
        y: points.iter().map(|p| p.excitation.value).collect(),
        sigma: points.iter().map(|p| p.excitation.error).collect(),
    };
    // A noiseless train gives a vanishing error; fall back to unit weights.
    if line_data.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        line_data.sigma = vec![1.0; line_data.len()];
    }
    let pmax = line_data.t.iter().copied().fold(0.0, f64::max);
    let ymax = line_data.y.iter().copied().fold(0.0, f64::max);
    let slope0 = if pmax > 0.0 { ymax / pmax } else { 0.0 };
    let line = lm_fit(
        &problem_from(
            &line_data,
            vec![
                ParamSpec::linear("intercept", 0.0),
                ParamSpec::linear("slope", slope0),
            ],
            |p: &[f64], x: &[f64]| Ok(x.iter().map(|&x| p[0] + p[1] * x).collect()),
        )
        .with_jacobian(|_: &[f64], x: &[f64]| x.iter().map(|&x| vec![1.0, x]).collect()),
    )?;
    let converged = line.converged && points.iter().all(|p| p.fit.converged);
    Ok(DepumpFit {
        slope: Estimate::from_fit(&line, "slope"),
        intercept: Estimate::from_fit(&line, "intercept"),
        points,
        line,
        converged,
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaistFit {
    /// ν_r = c·√P, Hz/√W.
    pub coefficient: Estimate,
    /// m.
    pub waist: Estimate,
    pub fit: FitResult,
}

/// Fits ν_r = c√P to a power sweep (`t` = power in W, `y` = ν_r in Hz) and converts c
/// to the trap beam waist.
pub fn fit_waist(data: &Series, trap_wavelength: f64, line: &AtomicLine) -> Result<WaistFit> {
    require_points(data, 2, "waist fit")?;
    ensure(data.t.iter().all(|p| *p > 0.0), "power", || {
        "powers must be positive".into()
    })?;
    let c0 = data
        .y
        .iter()
        .zip(&data.t)
        .map(|(y, p)| y / p.sqrt())
        .sum::<f64>()
        / data.len() as f64;
    let fit = lm_fit(
        &problem_from(
            data,
            vec![ParamSpec::linear("coefficient", c0)],
            |p: &[f64], x: &[f64]| Ok(x.iter().map(|&x| p[0] * x.sqrt()).collect()),
        )
        .with_jacobian(|_: &[f64], x: &[f64]| x.iter().map(|&x| vec![x.sqrt()]).collect()),
    )?;
    let c = Estimate::from_fit(&fit, "coefficient");
    let waist = waist_from_sqrt_power_coefficient(c.value, trap_wavelength, line)?;
    Ok(WaistFit {
        coefficient: c,
        // ν ∝ w⁻², so σ_w/w = σ_c/(2c).
        waist: Estimate {
            value: waist,
            error: waist * c.error / (2.0 * c.value),
        },
        fit,
    })
}
