//! Balanced-homodyne Mach–Zehnder pulse detection and its noise statistics.
//!
//! A pulse carrying `n` photons leaves the interferometer through two ports with
//! mean counts `n/2·(1 ∓ 𝒱 cos θ)`, where `θ = φ₀ + φ_Δ + drift` is the total
//! phase. The balanced record stores the differential area `−n𝒱 cos θ`, which at
//! half fringe (`φ₀ = π/2`) is `n𝒱 sin φ_Δ`. With Poissonian total photon number
//! the differential shot-noise variance is exactly `n`.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::atomic_physics::{AtomicLine, ProbePulseConfig};
use crate::error::{ensure, invalid, Error, Result};

pub const HALF_FRINGE: f64 = std::f64::consts::FRAC_PI_2;

/// Static interferometer operating point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interferometer {
    /// Fringe visibility 𝒱 in (0, 1].
    pub visibility: f64,
    /// Fringe offset φ₀, rad.
    pub fringe_offset: f64,
}

impl Default for Interferometer {
    fn default() -> Self {
        Interferometer {
            visibility: 0.98,
            fringe_offset: HALF_FRINGE,
        }
    }
}

impl Interferometer {
    pub fn validate(&self) -> Result<()> {
        ensure(
            self.visibility > 0.0 && self.visibility <= 1.0,
            "visibility",
            || format!("must lie in (0, 1], got {}", self.visibility),
        )?;
        ensure(self.fringe_offset.is_finite(), "fringe_offset", || {
            "must be finite".into()
        })
    }
}

/// Noise sources applied by [`simulate_pulse_train`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub shot_noise_enabled: bool,
    /// Fractional rms fluctuation of the pulse photon number.
    pub classical_amplitude_rms: f64,
    /// Per-pulse white phase noise, rad rms.
    pub classical_phase_rms: f64,
    /// Deterministic linear phase drift, rad/s, measured from the first pulse of a train.
    pub slow_phase_drift_rate: f64,
    /// Random-walk phase increment per pulse, rad rms.
    pub phase_walk_rms: f64,
    /// Differential detection of both ports. When false only one port is recorded
    /// (mean-subtracted), so common-mode amplitude noise is not cancelled.
    pub balanced: bool,
    pub rng_seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            shot_noise_enabled: true,
            classical_amplitude_rms: 0.0,
            classical_phase_rms: 0.0,
            slow_phase_drift_rate: 0.0,
            phase_walk_rms: 0.0,
            balanced: true,
            rng_seed: 0,
        }
    }
}

impl NoiseConfig {
    /// No stochastic noise and no drift.
    pub fn noiseless() -> Self {
        NoiseConfig {
            shot_noise_enabled: false,
            ..Default::default()
        }
    }

    pub fn shot_only(seed: u64) -> Self {
        NoiseConfig {
            rng_seed: seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("classical_amplitude_rms", self.classical_amplitude_rms),
            ("classical_phase_rms", self.classical_phase_rms),
            ("phase_walk_rms", self.phase_walk_rms),
        ] {
            ensure(v.is_finite() && v >= 0.0, name, || {
                format!("must be non-negative, got {v}")
            })?;
        }
        ensure(
            self.slow_phase_drift_rate.is_finite(),
            "slow_phase_drift_rate",
            || "must be finite".into(),
        )
    }
}

/// Integrated pulse areas of one pulse train.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PulseTrainRecord {
    /// Pulse start times, s.
    pub timestamps: Vec<f64>,
    /// Photon-equivalent pulse areas.
    pub areas: Vec<f64>,
    /// Mean photons per pulse.
    pub photons: f64,
    pub visibility: f64,
    pub fringe_offset: f64,
    pub balanced: bool,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    timestamp_s: f64,
    area: f64,
}

impl PulseTrainRecord {
    pub fn len(&self) -> usize {
        self.areas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.areas.is_empty()
    }

    /// Area per unit `sin φ_Δ` at half fringe.
    pub fn phase_gain(&self) -> f64 {
        let g = self.photons * self.visibility;
        if self.balanced {
            g
        } else {
            0.5 * g
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.areas.len() {
            return Err(Error::LengthMismatch {
                left: "timestamps",
                left_len: self.timestamps.len(),
                right: "areas",
                right_len: self.areas.len(),
            });
        }
        ensure(
            self.visibility > 0.0 && self.visibility <= 1.0,
            "visibility",
            || format!("must lie in (0, 1], got {}", self.visibility),
        )?;
        ensure(self.photons > 0.0, "photons", || {
            format!("must be positive, got {}", self.photons)
        })?;
        ensure(
            self.timestamps.windows(2).all(|w| w[1] > w[0]),
            "timestamps",
            || "must be strictly increasing".into(),
        )
    }

    /// Writes `timestamp_s,area` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for (&timestamp_s, &area) in self.timestamps.iter().zip(&self.areas) {
            w.serialize(CsvRow { timestamp_s, area })
                .map_err(csv_error)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `timestamp_s,area` rows; the scalar metadata must be supplied separately.
    pub fn read_csv<R: Read>(
        reader: R,
        photons: f64,
        interferometer: Interferometer,
        balanced: bool,
    ) -> Result<Self> {
        let mut timestamps = Vec::new();
        let mut areas = Vec::new();
        for row in csv::Reader::from_reader(reader).deserialize::<CsvRow>() {
            let row = row.map_err(csv_error)?;
            timestamps.push(row.timestamp_s);
            areas.push(row.area);
        }
        let rec = PulseTrainRecord {
            timestamps,
            areas,
            photons,
            visibility: interferometer.visibility,
            fringe_offset: interferometer.fringe_offset,
            balanced,
            seed: None,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: PulseTrainRecord = serde_json::from_str(text)?;
        rec.validate()?;
        Ok(rec)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InsufficientData(format!("csv: {other:?}")),
    }
}

/// Generates one pulse train. `phase` gives φ_Δ at each pulse time (s, relative to the
/// first pulse); noise draws come from a ChaCha8 stream seeded with `noise.rng_seed`.
pub fn simulate_pulse_train<F>(
    probe: &ProbePulseConfig,
    line: &AtomicLine,
    interferometer: &Interferometer,
    phase: F,
    noise: &NoiseConfig,
) -> Result<PulseTrainRecord>
where
    F: Fn(f64) -> f64,
{
    probe.validate()?;
    interferometer.validate()?;
    noise.validate()?;
    let photons = probe.photons_per_pulse(line);
    ensure(photons > 0.0, "power", || {
        "probe delivers no photons".into()
    })?;
    Ok(simulate_areas(
        photons,
        probe.period,
        probe.pulse_count,
        interferometer,
        phase,
        noise,
    ))
}

/// Core generator, parameterised directly by photon number and period.
pub fn simulate_areas<F>(
    photons: f64,
    period: f64,
    pulse_count: usize,
    interferometer: &Interferometer,
    phase: F,
    noise: &NoiseConfig,
) -> PulseTrainRecord
where
    F: Fn(f64) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let vis = interferometer.visibility;
    let mut timestamps = Vec::with_capacity(pulse_count);
    let mut areas = Vec::with_capacity(pulse_count);
    let mut walk = 0.0;

    for k in 0..pulse_count {
        let t = k as f64 * period;
        // Fixed draw order per pulse keeps streams aligned across configurations.
        let z_amp: f64 = std_normal.sample(&mut rng);
        let z_phase: f64 = std_normal.sample(&mut rng);
        let z_walk: f64 = std_normal.sample(&mut rng);
        let z_shot: f64 = std_normal.sample(&mut rng);

        if k > 0 {
            walk += noise.phase_walk_rms * z_walk;
        }
        let n_k = (photons * (1.0 + noise.classical_amplitude_rms * z_amp)).max(0.0);
        let theta = interferometer.fringe_offset
            + phase(t)
            + noise.slow_phase_drift_rate * t
            + noise.classical_phase_rms * z_phase
            + walk;
        let signal = -n_k * vis * theta.cos();
        let area = if noise.balanced {
            let shot = if noise.shot_noise_enabled {
                n_k.sqrt() * z_shot
            } else {
                0.0
            };
            signal + shot
        } else {
            // Port mean n/2·(1 − 𝒱 cos θ), referenced to the nominal n/2.
            let port = 0.5 * (n_k + signal);
            let shot = if noise.shot_noise_enabled {
                port.max(0.0).sqrt() * z_shot
            } else {
                0.0
            };
            port + shot - 0.5 * photons
        };
        timestamps.push(t);
        areas.push(area);
    }

    PulseTrainRecord {
        timestamps,
        areas,
        photons,
        visibility: vis,
        fringe_offset: interferometer.fringe_offset,
        balanced: noise.balanced,
        seed: Some(noise.rng_seed),
    }
}

/// Two-point variance of a sequence at separation `m`:
/// `(1 / 2(K−m)) Σ (a_{k+m} − a_k)²`.
pub fn two_point_variance_of(values: &[f64], m: usize) -> Result<f64> {
    ensure(m >= 1, "separation", || "must be at least 1".into())?;
    ensure(m < values.len(), "separation", || {
        format!("{m} must be smaller than the pulse count {}", values.len())
    })?;
    let k = values.len() - m;
    let sum: f64 = values.windows(m + 1).map(|w| (w[m] - w[0]).powi(2)).sum();
    Ok(sum / (2.0 * k as f64))
}

pub fn two_point_variance(record: &PulseTrainRecord, m: usize) -> Result<f64> {
    two_point_variance_of(&record.areas, m)
}

/// Per-pulse phase estimates from a probe train and its atom-free reference.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseEstimate {
    /// φ̂_k in [−π/2, π/2], rad.
    pub phases: Vec<f64>,
    /// Indices whose normalised difference exceeded unit magnitude and was clamped.
    pub clamped: Vec<usize>,
}

/// φ̂_k = asin((a_k − r_k)/G) with G the half-fringe phase gain (`n𝒱` for balanced records).
pub fn phase_from_record(
    record: &PulseTrainRecord,
    reference: &PulseTrainRecord,
) -> Result<PhaseEstimate> {
    if record.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: "record",
            left_len: record.len(),
            right: "reference",
            right_len: reference.len(),
        });
    }
    let rel = (record.photons - reference.photons).abs()
        / record.photons.abs().max(reference.photons.abs());
    if !(rel <= 1e-9) {
        return Err(invalid(
            "photons",
            format!(
                "record has {} photons per pulse, reference {}",
                record.photons, reference.photons
            ),
        ));
    }
    ensure(record.balanced == reference.balanced, "balanced", || {
        "record and reference use different detection modes".into()
    })?;
    ensure(
        record.visibility > 0.0 && record.visibility <= 1.0,
        "visibility",
        || format!("must lie in (0, 1], got {}", record.visibility),
    )?;
    let gain = record.phase_gain();
    let mut clamped = Vec::new();
    let phases = record
        .areas
        .iter()
        .zip(&reference.areas)
        .enumerate()
        .map(|(k, (a, r))| {
            let x = (a - r) / gain;
            if x.abs() > 1.0 {
                clamped.push(k);
            }
            x.clamp(-1.0, 1.0).asin()
        })
        .collect();
    Ok(PhaseEstimate { phases, clamped })
}

/// Log-log regression result.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub slope_error: f64,
    pub intercept: f64,
}

/// Ordinary least-squares slope of `ln σ²` against `ln n`.
pub fn noise_scaling_exponent(points: &[(f64, f64)]) -> Result<ScalingFit> {
    if points.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "noise scaling needs at least 3 points, got {}",
            points.len()
        )));
    }
    for &(n, v) in points {
        ensure(n > 0.0 && n.is_finite(), "photons", || {
            format!("must be positive, got {n}")
        })?;
        ensure(v > 0.0 && v.is_finite(), "variance", || {
            format!("must be positive, got {v}")
        })?;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    ensure(sxx > 0.0, "photons", || {
        "need at least two distinct photon numbers".into()
    })?;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let slope_error = (rss / (k - 2.0) / sxx).sqrt();
    Ok(ScalingFit {
        slope,
        slope_error,
        intercept,
    })
}

/// Sample mean and unbiased variance.
pub fn mean_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Reference photon-splitting model: Poisson total, binomial split between ports.
/// Used to validate the Gaussian shot-noise approximation.
pub fn binomial_split_area<R: Rng>(rng: &mut R, photons: f64, visibility: f64, theta: f64) -> f64 {
    use rand_distr::{Binomial, Poisson};
    let total = Poisson::new(photons).expect("positive mean").sample(rng) as u64;
    let p_plus = 0.5 * (1.0 + visibility * theta.cos());
    let plus = Binomial::new(total, p_plus)
        .expect("valid probability")
        .sample(rng) as f64;
    // Differential area n₋ − n₊, sign-matched to the Gaussian model.
    (total as f64 - plus) - plus
}
