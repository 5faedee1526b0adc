//! Scenario configuration: lab-unit JSON schema, built-in defaults and validation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::atomic_physics::{ProbePulseConfig, TrapBeam};
use crate::constants::angular;
use crate::error::{ensure, Error, Result};
use crate::interferometer::{Interferometer, NoiseConfig, HALF_FRINGE};
use crate::trap_dynamics::{LoadingParams, LossParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    NoiseScaling,
    Loading,
    Losses,
    LossVsDetuning,
    Breathing,
    FrequencyVsPower,
    TimeOfFlight,
    Depumping,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 8] = [
        ScenarioKind::NoiseScaling,
        ScenarioKind::Loading,
        ScenarioKind::Losses,
        ScenarioKind::LossVsDetuning,
        ScenarioKind::Breathing,
        ScenarioKind::FrequencyVsPower,
        ScenarioKind::TimeOfFlight,
        ScenarioKind::Depumping,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::NoiseScaling => "noise_scaling",
            ScenarioKind::Loading => "loading",
            ScenarioKind::Losses => "losses",
            ScenarioKind::LossVsDetuning => "loss_vs_detuning",
            ScenarioKind::Breathing => "breathing",
            ScenarioKind::FrequencyVsPower => "frequency_vs_power",
            ScenarioKind::TimeOfFlight => "time_of_flight",
            ScenarioKind::Depumping => "depumping",
        }
    }

    /// Stream tag mixed into every derived seed so scenarios never share noise.
    pub(crate) fn tag(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.as_str()).collect();
                Error::Scenario(format!(
                    "unknown scenario `{s}`; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Probe pulse train in lab units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    /// Blue detuning from the bright-level cycling transition.
    pub detuning_mhz: f64,
    pub power_uw: f64,
    pub waist_um: f64,
    pub duration_us: f64,
    pub period_us: f64,
    pub pulse_count: usize,
}

impl ProbeSettings {
    pub fn to_config(&self) -> ProbePulseConfig {
        ProbePulseConfig {
            detuning: angular(self.detuning_mhz * 1e6),
            power: self.power_uw * 1e-6,
            waist: self.waist_um * 1e-6,
            duration: self.duration_us * 1e-6,
            period: self.period_us * 1e-6,
            pulse_count: self.pulse_count,
        }
    }

    pub fn with_power_uw(&self, power_uw: f64) -> ProbePulseConfig {
        ProbeSettings {
            power_uw,
            ..self.clone()
        }
        .to_config()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferometerSettings {
    pub visibility: f64,
    pub fringe_offset_rad: f64,
}

impl InterferometerSettings {
    pub fn to_interferometer(self) -> Interferometer {
        Interferometer {
            visibility: self.visibility,
            fringe_offset: self.fringe_offset_rad,
        }
    }
}

/// Noise sources; seeds are derived per train from the scenario seed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSettings {
    pub shot_noise: bool,
    pub classical_amplitude_rms: f64,
    pub classical_phase_rms_rad: f64,
    pub slow_phase_drift_rad_per_s: f64,
    pub phase_walk_rms_rad: f64,
    pub balanced: bool,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        NoiseSettings {
            shot_noise: true,
            classical_amplitude_rms: 0.0,
            classical_phase_rms_rad: 0.0,
            slow_phase_drift_rad_per_s: 0.0,
            phase_walk_rms_rad: 0.0,
            balanced: true,
        }
    }
}

impl NoiseSettings {
    pub fn to_config(self, seed: u64) -> NoiseConfig {
        NoiseConfig {
            shot_noise_enabled: self.shot_noise,
            classical_amplitude_rms: self.classical_amplitude_rms,
            classical_phase_rms: self.classical_phase_rms_rad,
            slow_phase_drift_rate: self.slow_phase_drift_rad_per_s,
            phase_walk_rms: self.phase_walk_rms_rad,
            balanced: self.balanced,
            rng_seed: seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrapSettings {
    pub power_w: f64,
    pub waist_um: f64,
    pub wavelength_nm: f64,
}

impl TrapSettings {
    pub fn to_beam(self) -> TrapBeam {
        TrapBeam {
            power: self.power_w,
            waist: self.waist_um * 1e-6,
            wavelength: self.wavelength_nm * 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseScalingTruth {
    pub photon_numbers: Vec<f64>,
    /// Pulse separation of the two-point variance.
    pub variance_lag: usize,
    /// When positive, a second sweep records a single port with this fractional
    /// amplitude noise to expose the classical (quadratic) scaling.
    pub unbalanced_amplitude_rms: f64,
}

/// Loading-curve truth. `times_s` defaults to a grid resolving both the loading
/// transient and the subsequent decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingTruth {
    pub r0_per_s: f64,
    pub gamma_mot_per_s: f64,
    pub gamma_l_per_s: f64,
    pub beta_l_per_s: f64,
    #[serde(default)]
    pub times_s: Option<Vec<f64>>,
    #[serde(default)]
    pub split_time_s: Option<f64>,
    pub joint_refinement: bool,
}

impl LoadingTruth {
    /// Compressed-MOT loading.
    pub fn compression() -> Self {
        LoadingTruth {
            r0_per_s: 1.34e7,
            gamma_mot_per_s: 831.0,
            gamma_l_per_s: 3.5,
            beta_l_per_s: 1.1e-4,
            times_s: None,
            split_time_s: None,
            joint_refinement: true,
        }
    }

    /// Molasses loading.
    pub fn molasses() -> Self {
        LoadingTruth {
            r0_per_s: 3.2e4,
            gamma_mot_per_s: 5.0,
            gamma_l_per_s: 1.2,
            beta_l_per_s: 3e-5,
            ..Self::compression()
        }
    }

    pub fn params(&self) -> LoadingParams {
        LoadingParams {
            r0: self.r0_per_s,
            gamma_mot: self.gamma_mot_per_s,
            gamma_l: self.gamma_l_per_s,
            beta_l: self.beta_l_per_s,
        }
    }

    /// 20 points across the loading transient (out to 8/γ_MOT) and 30 across the decay,
    /// which lasts about five combined loss times at the steady-state number.
    pub fn times(&self) -> Vec<f64> {
        if let Some(t) = &self.times_s {
            return t.clone();
        }
        let p = self.params();
        let t_load = 8.0 / p.gamma_mot;
        let n_peak = p.r0 / p.gamma_mot;
        let t_decay = 5.0 / (p.gamma_l + p.beta_l * n_peak);
        let mut t: Vec<f64> = (1..=20).map(|i| t_load * i as f64 / 20.0).collect();
        t.extend((1..=30).map(|i| t_load + t_decay * i as f64 / 30.0));
        t
    }
}

/// Loss truth; the initial number is the scenario's `atom_number`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossTruth {
    pub gamma_per_s: f64,
    pub beta_per_s: f64,
    #[serde(default)]
    pub times_s: Option<Vec<f64>>,
}

impl LossTruth {
    /// Trap with near-resonant light present.
    pub fn light() -> Self {
        LossTruth {
            gamma_per_s: 47.0,
            beta_per_s: 1.1e-2,
            times_s: None,
        }
    }

    pub fn no_light() -> Self {
        LossTruth {
            gamma_per_s: 21.0,
            beta_per_s: 2.3e-4,
            times_s: None,
        }
    }

    pub fn params(&self) -> LossParams {
        LossParams {
            gamma: self.gamma_per_s,
            beta: self.beta_per_s,
        }
    }

    pub fn times(&self) -> Vec<f64> {
        self.times_s
            .clone()
            .unwrap_or_else(|| loss_times(self.gamma_per_s))
    }
}

/// 40 points out to 3/Γ with quadratic spacing, dense where two-body loss acts.
pub(crate) fn loss_times(gamma: f64) -> Vec<f64> {
    let t_end = 3.0 / gamma;
    (0..40).map(|j| t_end * (j as f64 / 39.0).powi(2)).collect()
}

/// Two-body loss as a function of the detuning of near-resonant light, interpolating
/// between a reference value and the dark value with a Lorentzian in Δ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossVsDetuningTruth {
    /// Detunings in units of the line HWHM (negative = red).
    pub detunings_hwhm: Vec<f64>,
    pub gamma_per_s: f64,
    pub beta_dark_per_s: f64,
    pub beta_reference_per_s: f64,
    pub reference_detuning_hwhm: f64,
}

impl LossVsDetuningTruth {
    pub fn beta_at(&self, detuning_hwhm: f64) -> f64 {
        let lorentz = |d: f64| 1.0 / (d * d + 1.0);
        self.beta_dark_per_s
            + (self.beta_reference_per_s - self.beta_dark_per_s) * lorentz(detuning_hwhm)
                / lorentz(self.reference_detuning_hwhm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreathingTruth {
    pub radial_frequency_hz: f64,
    pub damping_time_ms: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyVsPowerTruth {
    pub powers_w: Vec<f64>,
    pub damping_time_ms: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeOfFlightTruth {
    pub temperature_uk: f64,
    pub radial_frequency_hz: f64,
    pub gravity_m_per_s2: f64,
    /// Divide out in-train depumping with a dipole-on reference train.
    pub depump_correction: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DepumpingTruth {
    pub powers_uw: Vec<f64>,
    /// Dark-level fraction returned per pulse interval.
    pub repump: f64,
}

/// Ground-truth parameters of the simulated experiment, one variant per scenario kind.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Truth {
    NoiseScaling(NoiseScalingTruth),
    Loading(LoadingTruth),
    Losses(LossTruth),
    LossVsDetuning(LossVsDetuningTruth),
    Breathing(BreathingTruth),
    FrequencyVsPower(FrequencyVsPowerTruth),
    TimeOfFlight(TimeOfFlightTruth),
    Depumping(DepumpingTruth),
}

impl Truth {
    fn parse(kind: ScenarioKind, value: Value) -> serde_json::Result<Self> {
        Ok(match kind {
            ScenarioKind::NoiseScaling => Truth::NoiseScaling(serde_json::from_value(value)?),
            ScenarioKind::Loading => Truth::Loading(serde_json::from_value(value)?),
            ScenarioKind::Losses => Truth::Losses(serde_json::from_value(value)?),
            ScenarioKind::LossVsDetuning => Truth::LossVsDetuning(serde_json::from_value(value)?),
            ScenarioKind::Breathing => Truth::Breathing(serde_json::from_value(value)?),
            ScenarioKind::FrequencyVsPower => {
                Truth::FrequencyVsPower(serde_json::from_value(value)?)
            }
            ScenarioKind::TimeOfFlight => Truth::TimeOfFlight(serde_json::from_value(value)?),
            ScenarioKind::Depumping => Truth::Depumping(serde_json::from_value(value)?),
        })
    }

    fn kind(&self) -> ScenarioKind {
        match self {
            Truth::NoiseScaling(_) => ScenarioKind::NoiseScaling,
            Truth::Loading(_) => ScenarioKind::Loading,
            Truth::Losses(_) => ScenarioKind::Losses,
            Truth::LossVsDetuning(_) => ScenarioKind::LossVsDetuning,
            Truth::Breathing(_) => ScenarioKind::Breathing,
            Truth::FrequencyVsPower(_) => ScenarioKind::FrequencyVsPower,
            Truth::TimeOfFlight(_) => ScenarioKind::TimeOfFlight,
            Truth::Depumping(_) => ScenarioKind::Depumping,
        }
    }
}

/// A complete, reproducible simulated experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Scenario {
    pub name: ScenarioKind,
    pub seed: u64,
    /// Independent repetitions averaged per data point.
    pub run_count: usize,
    pub probe: ProbeSettings,
    pub interferometer: InterferometerSettings,
    pub noise: NoiseSettings,
    pub trap: TrapSettings,
    /// Bright-level atoms in the probe mode at the start of a measurement.
    pub atom_number: f64,
    pub truth: Truth,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: ScenarioKind,
    seed: u64,
    run_count: usize,
    probe: ProbeSettings,
    interferometer: InterferometerSettings,
    noise: NoiseSettings,
    trap: TrapSettings,
    atom_number: f64,
    truth: Value,
}

fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64))
        .collect()
}

impl Scenario {
    /// Default settings for a scenario kind.
    pub fn builtin(kind: ScenarioKind) -> Self {
        let probe = ProbeSettings {
            detuning_mhz: 100.0,
            power_uw: 0.3,
            waist_um: 20.0,
            duration_us: 2.0,
            period_us: 40.0,
            pulse_count: 10,
        };
        let mut s = Scenario {
            name: kind,
            seed: 1,
            run_count: 20,
            probe,
            interferometer: InterferometerSettings {
                visibility: 0.98,
                fringe_offset_rad: HALF_FRINGE,
            },
            noise: NoiseSettings::default(),
            trap: TrapSettings {
                power_w: 3.5,
                waist_um: 40.0,
                wavelength_nm: 1030.0,
            },
            atom_number: 1e5,
            truth: Truth::Loading(LoadingTruth::compression()),
        };
        let breathing_probe = ProbeSettings {
            power_uw: 0.15,
            period_us: 100.0,
            pulse_count: 100,
            ..s.probe.clone()
        };
        match kind {
            ScenarioKind::NoiseScaling => {
                s.probe.pulse_count = 100;
                s.truth = Truth::NoiseScaling(NoiseScalingTruth {
                    photon_numbers: geomspace(2e6, 1.12e8, 6),
                    variance_lag: 1,
                    unbalanced_amplitude_rms: 0.01,
                });
            }
            ScenarioKind::Loading => {}
            ScenarioKind::Losses => s.truth = Truth::Losses(LossTruth::no_light()),
            ScenarioKind::LossVsDetuning => {
                s.truth = Truth::LossVsDetuning(LossVsDetuningTruth {
                    detunings_hwhm: vec![-8.0, -12.0, -16.0, -20.0, -24.0, -28.0],
                    gamma_per_s: 47.0,
                    beta_dark_per_s: 2.3e-4,
                    beta_reference_per_s: 1.1e-2,
                    reference_detuning_hwhm: -16.0,
                })
            }
            ScenarioKind::Breathing => {
                s.run_count = 50;
                s.probe = breathing_probe;
                s.truth = Truth::Breathing(BreathingTruth {
                    radial_frequency_hz: 226.5,
                    damping_time_ms: 5.0,
                    depth: 0.2,
                });
            }
            ScenarioKind::FrequencyVsPower => {
                s.run_count = 50;
                s.probe = ProbeSettings {
                    pulse_count: 200,
                    ..breathing_probe
                };
                s.trap.waist_um = 90.0;
                s.truth = Truth::FrequencyVsPower(FrequencyVsPowerTruth {
                    powers_w: vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0],
                    damping_time_ms: 20.0,
                    depth: 0.2,
                });
            }
            ScenarioKind::TimeOfFlight => {
                s.run_count = 1;
                s.probe = ProbeSettings {
                    pulse_count: 50,
                    ..breathing_probe
                };
                s.atom_number = 2.5e5;
                s.truth = Truth::TimeOfFlight(TimeOfFlightTruth {
                    temperature_uk: 15.0,
                    radial_frequency_hz: 275.0,
                    gravity_m_per_s2: crate::constants::STANDARD_GRAVITY,
                    depump_correction: true,
                });
            }
            ScenarioKind::Depumping => {
                s.probe = ProbeSettings {
                    waist_um: 21.2,
                    duration_us: 10.0,
                    period_us: 100.0,
                    pulse_count: 40,
                    ..s.probe
                };
                s.truth = Truth::Depumping(DepumpingTruth {
                    powers_uw: vec![0.3, 0.6, 0.9, 1.2],
                    repump: 0.0,
                });
            }
        }
        s
    }

    /// Parses a scenario file. Keys absent from the file take the built-in defaults of
    /// the named scenario; unknown keys are rejected by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text)?;
        let Value::Object(map) = &user else {
            return Err(Error::Scenario(
                "scenario file must contain a JSON object".into(),
            ));
        };
        let name = map
            .get("name")
            .ok_or_else(|| Error::Scenario("missing key `name`".into()))?
            .as_str()
            .ok_or_else(|| Error::Scenario("key `name` must be a string".into()))?;
        let kind: ScenarioKind = name.parse()?;
        let mut merged = serde_json::to_value(Scenario::builtin(kind))?;
        merge(&mut merged, user);
        Scenario::from_value(merged)
    }

    fn from_value(value: Value) -> Result<Self> {
        let raw: RawScenario =
            serde_json::from_value(value).map_err(|e| Error::Scenario(e.to_string()))?;
        let truth = Truth::parse(raw.name, raw.truth)
            .map_err(|e| Error::Scenario(format!("truth: {e}")))?;
        let s = Scenario {
            name: raw.name,
            seed: raw.seed,
            run_count: raw.run_count,
            probe: raw.probe,
            interferometer: raw.interferometer,
            noise: raw.noise,
            trap: raw.trap,
            atom_number: raw.atom_number,
            truth,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.run_count >= 1, "run_count", || {
            "must be at least 1".into()
        })?;
        ensure(self.truth.kind() == self.name, "truth", || {
            format!("truth parameters do not belong to scenario `{}`", self.name)
        })?;
        ensure(self.probe.pulse_count >= 1, "probe.pulse_count", || {
            "must be at least 1".into()
        })?;
        self.probe.to_config().validate()?;
        self.interferometer.to_interferometer().validate()?;
        self.noise.to_config(0).validate()?;
        ensure(
            self.atom_number.is_finite() && self.atom_number >= 0.0,
            "atom_number",
            || format!("must be non-negative, got {}", self.atom_number),
        )?;
        match &self.truth {
            Truth::NoiseScaling(t) => {
                ensure(t.photon_numbers.len() >= 3, "truth.photon_numbers", || {
                    "need at least 3 values".into()
                })?;
                ensure(
                    t.photon_numbers.iter().all(|n| *n > 0.0),
                    "truth.photon_numbers",
                    || "must be positive".into(),
                )?;
                ensure(
                    t.variance_lag >= 1 && t.variance_lag < self.probe.pulse_count,
                    "truth.variance_lag",
                    || format!("must lie in [1, {})", self.probe.pulse_count),
                )?;
            }
            Truth::Loading(t) => {
                t.params().validate()?;
                check_times(&t.times())?;
            }
            Truth::Losses(t) => {
                t.params().validate()?;
                check_times(&t.times())?;
            }
            Truth::LossVsDetuning(t) => {
                ensure(t.detunings_hwhm.len() >= 2, "truth.detunings_hwhm", || {
                    "need at least 2 values".into()
                })?;
                ensure(t.gamma_per_s > 0.0, "truth.gamma_per_s", || {
                    "must be positive".into()
                })?;
            }
            Truth::Breathing(t) => {
                ensure(
                    t.radial_frequency_hz > 0.0,
                    "truth.radial_frequency_hz",
                    || "must be positive".into(),
                )?;
                ensure(t.damping_time_ms > 0.0, "truth.damping_time_ms", || {
                    "must be positive".into()
                })?;
                ensure((0.0..1.0).contains(&t.depth), "truth.depth", || {
                    "must lie in [0, 1)".into()
                })?;
            }
            Truth::FrequencyVsPower(t) => {
                ensure(t.powers_w.len() >= 2, "truth.powers_w", || {
                    "need at least 2 values".into()
                })?;
                ensure(
                    t.powers_w.iter().all(|p| *p > 0.0),
                    "truth.powers_w",
                    || "must be positive".into(),
                )?;
                ensure((0.0..1.0).contains(&t.depth), "truth.depth", || {
                    "must lie in [0, 1)".into()
                })?;
            }
            Truth::TimeOfFlight(t) => {
                ensure(t.temperature_uk > 0.0, "truth.temperature_uk", || {
                    "must be positive".into()
                })?;
                ensure(
                    t.radial_frequency_hz > 0.0,
                    "truth.radial_frequency_hz",
                    || "must be positive".into(),
                )?;
                ensure(self.probe.pulse_count >= 4, "probe.pulse_count", || {
                    "time of flight needs 4 pulses".into()
                })?;
            }
            Truth::Depumping(t) => {
                ensure(t.powers_uw.len() >= 3, "truth.powers_uw", || {
                    "need at least 3 powers".into()
                })?;
                ensure(
                    t.powers_uw.iter().all(|p| *p > 0.0),
                    "truth.powers_uw",
                    || "must be positive".into(),
                )?;
            }
        }
        Ok(())
    }

    /// The probe train settings as an SI pulse configuration.
    pub fn probe_config(&self) -> ProbePulseConfig {
        self.probe.to_config()
    }

    pub fn noise_config(&self, seed: u64) -> NoiseConfig {
        self.noise.to_config(seed)
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    ensure(
        times.iter().all(|t| t.is_finite() && *t >= 0.0),
        "truth.times_s",
        || "times must be finite and non-negative".into(),
    )?;
    ensure(
        times.windows(2).all(|w| w[1] > w[0]),
        "truth.times_s",
        || "times must be increasing".into(),
    )
}

/// Recursively overlays `over` onto `base`; objects merge key by key, everything else replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
