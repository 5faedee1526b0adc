//! Time evolution of the trapped atom number and cloud geometry.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::angular::HalfInt;
use crate::atomic_physics::{
    branching_ratios, dipole_trap_properties, excitation_by_level, AtomicLine, ProbePulseConfig,
    TrapBeam,
};
use crate::constants::{BOLTZMANN, STANDARD_GRAVITY, TWO_PI};
use crate::error::{ensure, invalid, Result};
use crate::ode::{integrate, Tolerances};

/// Rate constants of the loading equation `dN/dt = R₀e^{−γ_MOT t} − Γ_L N − β_L N²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadingParams {
    /// Loading rate R₀, atoms/s.
    pub r0: f64,
    /// Decay rate of the loading flux γ_MOT, 1/s.
    pub gamma_mot: f64,
    /// One-body loss Γ_L, 1/s.
    pub gamma_l: f64,
    /// Two-body loss β_L, 1/(atom·s).
    pub beta_l: f64,
}

impl LoadingParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("r0", self.r0),
            ("gamma_mot", self.gamma_mot),
            ("gamma_l", self.gamma_l),
            ("beta_l", self.beta_l),
        ] {
            ensure(v.is_finite() && v >= 0.0, name, || {
                format!("must be non-negative, got {v}")
            })?;
        }
        Ok(())
    }

    pub fn loss(&self) -> LossParams {
        LossParams {
            gamma: self.gamma_l,
            beta: self.beta_l,
        }
    }
}

/// Rate constants of the loss equation `dN/dt = −ΓN − βN²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossParams {
    /// 1/s.
    pub gamma: f64,
    /// 1/(atom·s).
    pub beta: f64,
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        ensure(self.gamma.is_finite() && self.gamma >= 0.0, "gamma", || {
            format!("must be non-negative, got {}", self.gamma)
        })?;
        ensure(self.beta.is_finite() && self.beta >= 0.0, "beta", || {
            format!("must be non-negative, got {}", self.beta)
        })
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    ensure(
        times.iter().all(|t| t.is_finite() && *t >= 0.0),
        "t",
        || "times must be finite and non-negative".into(),
    )?;
    ensure(times.windows(2).all(|w| w[1] >= w[0]), "t", || {
        "time grid must be non-decreasing".into()
    })
}

/// Integrates the loading equation from `n0` atoms at t = 0 and samples it on `times`.
pub fn loading_curve(params: &LoadingParams, n0: f64, times: &[f64]) -> Result<Vec<f64>> {
    loading_curve_with_cutoff(params, n0, times, f64::INFINITY)
}

/// As [`loading_curve`], with the loading flux switched off for t > `t_cut`.
pub fn loading_curve_with_cutoff(
    params: &LoadingParams,
    n0: f64,
    times: &[f64],
    t_cut: f64,
) -> Result<Vec<f64>> {
    params.validate()?;
    ensure(n0.is_finite() && n0 >= 0.0, "n0", || {
        format!("initial atom number must be non-negative, got {n0}")
    })?;
    check_times(times)?;
    let p = *params;
    let loading = move |t: f64, y: &[f64; 1]| {
        [p.r0 * (-p.gamma_mot * t).exp() - p.gamma_l * y[0] - p.beta_l * y[0] * y[0]]
    };
    let loss = move |_: f64, y: &[f64; 1]| [-p.gamma_l * y[0] - p.beta_l * y[0] * y[0]];
    let tol = Tolerances::default();

    // Integrate each regime separately so the flux discontinuity falls on a step boundary.
    let mut grid = vec![0.0];
    grid.extend(times.iter().copied().filter(|&t| t <= t_cut));
    let mut out: Vec<f64> = if t_cut.is_finite() && times.last().is_some_and(|&t| t > t_cut) {
        grid.push(t_cut);
        let sol = integrate(loading, [n0], &grid, tol)?;
        let at_cut = sol.last().unwrap()[0];
        let mut out: Vec<f64> = sol[1..sol.len() - 1].iter().map(|y| y[0]).collect();
        let mut tail = vec![t_cut];
        tail.extend(times.iter().copied().filter(|&t| t > t_cut));
        out.extend(
            integrate(loss, [at_cut], &tail, tol)?[1..]
                .iter()
                .map(|y| y[0]),
        );
        out
    } else {
        integrate(loading, [n0], &grid, tol)?[1..]
            .iter()
            .map(|y| y[0])
            .collect()
    };
    for v in &mut out {
        *v = v.max(0.0);
    }
    Ok(out)
}

/// Closed-form solution of the loss equation at time `t`.
pub fn loss_curve_closed_form(params: &LossParams, n0: f64, t: f64) -> f64 {
    // (1 − e^{−Γt})/Γ, continuous through Γ = 0.
    let x = params.gamma * t;
    let growth = if x.abs() < 1e-12 {
        t
    } else {
        -(-x).exp_m1() / params.gamma
    };
    n0 * (-x).exp() / (1.0 + params.beta * n0 * growth)
}

pub fn loss_curve(params: &LossParams, n0: f64, times: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    ensure(n0.is_finite() && n0 >= 0.0, "n0", || {
        format!("initial atom number must be non-negative, got {n0}")
    })?;
    ensure(times.iter().all(|t| *t >= 0.0), "t", || {
        "times must be non-negative".into()
    })?;
    Ok(times
        .iter()
        .map(|&t| loss_curve_closed_form(params, n0, t))
        .collect())
}

/// Fraction of atoms in the probe volume during a damped breathing oscillation:
/// `baseline·[1 + depth·e^{−t/τ_d}·cos(2π·2ν_r·t)]`.
pub fn breathing_signal(
    times: &[f64],
    nu_r: f64,
    tau_d: f64,
    depth: f64,
    baseline: f64,
) -> Result<Vec<f64>> {
    ensure(nu_r > 0.0, "nu_r", || {
        format!("must be positive, got {nu_r}")
    })?;
    ensure(tau_d > 0.0, "tau_d", || {
        format!("must be positive, got {tau_d}")
    })?;
    ensure((0.0..1.0).contains(&depth), "depth", || {
        format!("must lie in [0, 1), got {depth}")
    })?;
    Ok(times
        .iter()
        .map(|&t| baseline * (1.0 + depth * (-t / tau_d).exp() * (TWO_PI * 2.0 * nu_r * t).cos()))
        .collect())
}

/// Radial trap frequency ν_r (Hz) at each beam power.
pub fn trap_frequency_vs_power(
    powers: &[f64],
    waist: f64,
    trap_wavelength: f64,
    line: &AtomicLine,
) -> Result<Vec<f64>> {
    powers
        .iter()
        .map(|&power| {
            ensure(power > 0.0, "power", || {
                format!("must be positive, got {power}")
            })?;
            let beam = TrapBeam {
                power,
                waist,
                wavelength: trap_wavelength,
            };
            Ok(dipole_trap_properties(&beam, line)?.radial_frequency)
        })
        .collect()
}

/// Inverts ν_r = c·√P for the beam waist.
pub fn waist_from_sqrt_power_coefficient(
    c: f64,
    trap_wavelength: f64,
    line: &AtomicLine,
) -> Result<f64> {
    ensure(c > 0.0, "coefficient", || {
        format!("must be positive, got {c}")
    })?;
    // ν_r ∝ w⁻², so a unit-waist reference fixes the constant.
    let reference = trap_frequency_vs_power(&[1.0], 1.0, trap_wavelength, line)?[0];
    Ok((reference / c).sqrt())
}

/// Parameters of the release-and-recapture escape model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallisticParams {
    /// K.
    pub temperature: f64,
    /// Radial trap frequency ν_r, Hz.
    pub radial_frequency: f64,
    /// Probe 1/e² radius, m.
    pub waist: f64,
    /// m/s².
    pub gravity: f64,
    /// Atomic mass, kg.
    pub mass: f64,
}

impl BallisticParams {
    pub fn new(temperature: f64, radial_frequency: f64, waist: f64, line: &AtomicLine) -> Self {
        BallisticParams {
            temperature,
            radial_frequency,
            waist,
            gravity: STANDARD_GRAVITY,
            mass: line.mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.temperature.is_finite() && self.temperature >= 0.0,
            "temperature",
            || format!("must be non-negative, got {}", self.temperature),
        )?;
        ensure(self.radial_frequency > 0.0, "radial_frequency", || {
            format!("must be positive, got {}", self.radial_frequency)
        })?;
        ensure(self.waist > 0.0, "waist", || {
            format!("must be positive, got {}", self.waist)
        })?;
        ensure(self.mass > 0.0, "mass", || {
            format!("must be positive, got {}", self.mass)
        })
    }

    /// Thermal velocity spread σ_v = √(k_B T / M).
    pub fn sigma_v(&self) -> f64 {
        (BOLTZMANN * self.temperature / self.mass).sqrt()
    }

    /// Initial in-trap radius σ_{r,0} = σ_v / ω_r.
    pub fn sigma_r0(&self) -> f64 {
        self.sigma_v() / (TWO_PI * self.radial_frequency)
    }

    /// σ_r(t)² = σ_{r,0}² + σ_v² t².
    pub fn sigma_r_sq(&self, t: f64) -> f64 {
        self.sigma_r0().powi(2) + (self.sigma_v() * t).powi(2)
    }
}

/// Probability that an atom released at t = 0 has left the probe mode at time `t`.
pub fn ballistic_escape_probability(params: &BallisticParams, t: f64) -> f64 {
    let w2 = params.waist * params.waist;
    let s0 = w2 + 4.0 * params.sigma_r0().powi(2);
    let st = w2 + 4.0 * params.sigma_r_sq(t);
    let fall = params.gravity * t * t;
    (1.0 - s0 / st * (-(fall * fall) / (2.0 * st)).exp()).clamp(0.0, 1.0)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct McEstimate {
    pub value: f64,
    pub std_error: f64,
}

const MC_CHUNK: usize = 1 << 14;

/// Samples thermal positions and velocities, propagates them ballistically with a fall of
/// g t²/2 along one axis, and weights each atom by the probe mode profile exp(−2r²/w₀²).
/// Returns `1 − ⟨weight(t)⟩/⟨weight(0)⟩` for every time, using common random numbers.
pub fn ballistic_mc_oracle(
    params: &BallisticParams,
    times: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<McEstimate>> {
    params.validate()?;
    ensure(samples >= 2, "samples", || {
        "need at least two samples".into()
    })?;
    let sr = params.sigma_r0();
    let sv = params.sigma_v();
    let inv_w2 = 2.0 / (params.waist * params.waist);
    let nt = times.len();
    let chunks = samples.div_ceil(MC_CHUNK);

    // Per-chunk sums of (w0, wt, wt², w0·wt) followed by w0²; chunks are reduced in order.
    let partial: Vec<(Vec<[f64; 4]>, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut sums = vec![[0.0; 4]; nt];
            let mut w0_sq = 0.0;
            for _ in 0..count {
                let z: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                let (x0, y0, vx, vy) = (sr * z[0], sr * z[1], sv * z[2], sv * z[3]);
                let w0 = (-(x0 * x0 + y0 * y0) * inv_w2).exp();
                w0_sq += w0 * w0;
                for (s, &t) in sums.iter_mut().zip(times) {
                    let x = x0 + vx * t + 0.5 * params.gravity * t * t;
                    let y = y0 + vy * t;
                    let wt = (-(x * x + y * y) * inv_w2).exp();
                    s[0] += w0;
                    s[1] += wt;
                    s[2] += wt * wt;
                    s[3] += w0 * wt;
                }
            }
            (sums, w0_sq)
        })
        .collect();

    let n = samples as f64;
    let mut totals = vec![[0.0; 4]; nt];
    let mut w0_sq = 0.0;
    for (sums, sq) in &partial {
        w0_sq += sq;
        for (tot, s) in totals.iter_mut().zip(sums) {
            for i in 0..4 {
                tot[i] += s[i];
            }
        }
    }
    Ok(totals
        .iter()
        .map(|s| {
            let (m0, mt) = (s[0] / n, s[1] / n);
            let ratio = mt / m0;
            // Delta-method variance of a ratio of correlated means.
            let v0 = w0_sq / n - m0 * m0;
            let vt = s[2] / n - mt * mt;
            let c = s[3] / n - m0 * mt;
            let var = (vt - 2.0 * ratio * c + ratio * ratio * v0) / (m0 * m0 * n);
            McEstimate {
                value: 1.0 - ratio,
                std_error: var.max(0.0).sqrt(),
            }
        })
        .collect())
}

/// Per-pulse two-ground-level depumping model with excited states eliminated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepumpParams {
    /// Pulse-integrated excitation of a bright-level atom to each excited level F'.
    /// These are expected scattering numbers and may exceed one at high power.
    pub excitation: BTreeMap<HalfInt, f64>,
    /// Branching ratio b(F' → dark ground level) per excited level.
    pub to_dark: BTreeMap<HalfInt, f64>,
    /// Fraction of dark-level atoms returned to the bright level per pulse interval.
    pub repump: f64,
}

impl DepumpParams {
    /// Builds the model for a probe pulse acting on the bright ground level of `line`.
    pub fn from_probe(probe: &ProbePulseConfig, line: &AtomicLine, repump: f64) -> Result<Self> {
        probe.validate()?;
        let excitation: BTreeMap<_, _> = excitation_by_level(probe, line).into_iter().collect();
        let branching = branching_ratios(line);
        let dark = line.dark_level();
        let to_dark = line
            .excited
            .iter()
            .map(|e| (e.f, branching[&(e.f, dark)].clamp(0.0, 1.0)))
            .collect();
        let params = DepumpParams {
            excitation,
            to_dark,
            repump,
        };
        params.validate()?;
        Ok(params)
    }

    /// Single-channel model: excitation `p_e` to one level that decays dark with ratio `b`.
    pub fn single(p_e: f64, b: f64, repump: f64) -> Result<Self> {
        let level = HalfInt::integer(0);
        let params = DepumpParams {
            excitation: [(level, p_e)].into(),
            to_dark: [(level, b)].into(),
            repump,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.excitation.values().all(|p| p.is_finite() && *p >= 0.0),
            "excitation",
            || "must be non-negative".into(),
        )?;
        ensure(
            self.to_dark.values().all(|b| (0.0..=1.0).contains(b)),
            "to_dark",
            || "branching ratios must lie in [0, 1]".into(),
        )?;
        ensure((0.0..=1.0).contains(&self.repump), "repump", || {
            format!("must lie in [0, 1], got {}", self.repump)
        })?;
        let loss = self.loss_per_pulse();
        if loss > 1.0 {
            return Err(invalid(
                "excitation",
                format!("per-pulse transfer {loss} exceeds 1"),
            ));
        }
        Ok(())
    }

    /// Fraction of bright atoms transferred to the dark level by one pulse, Σ p_{e,F'} b(F'→dark).
    pub fn loss_per_pulse(&self) -> f64 {
        self.excitation
            .iter()
            .map(|(f, p)| p * self.to_dark.get(f).copied().unwrap_or(0.0))
            .sum()
    }

    pub fn total_excitation(&self) -> f64 {
        self.excitation.values().sum()
    }

    /// Excitation-weighted mean dark branching; converts a per-pulse loss back to p_e.
    pub fn effective_branching(&self) -> f64 {
        let total = self.total_excitation();
        if total == 0.0 {
            return 0.0;
        }
        self.loss_per_pulse() / total
    }
}

/// Bright and dark populations before the first pulse and after each of the `pulses` pulses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DepumpTrajectory {
    pub bright: Vec<f64>,
    pub dark: Vec<f64>,
}

pub fn depump_decay(
    params: &DepumpParams,
    pulses: usize,
    n_bright: f64,
    n_total: f64,
) -> Result<DepumpTrajectory> {
    params.validate()?;
    ensure(n_bright >= 0.0 && n_total >= n_bright, "n_bright", || {
        format!("need 0 ≤ N_bright ≤ N_total, got {n_bright} of {n_total}")
    })?;
    let loss = params.loss_per_pulse();
    let mut bright = Vec::with_capacity(pulses + 1);
    let mut dark = Vec::with_capacity(pulses + 1);
    let (mut b, mut d) = (n_bright, n_total - n_bright);
    bright.push(b);
    dark.push(d);
    for _ in 0..pulses {
        let flow = b * loss - params.repump * d;
        b -= flow;
        d += flow;
        bright.push(b);
        dark.push(d);
    }
    Ok(DepumpTrajectory { bright, dark })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_comp() -> LoadingParams {
        LoadingParams {
            r0: 1.34e7,
            gamma_mot: 831.0,
            gamma_l: 3.5,
            beta_l: 1.1e-4,
        }
    }

    #[test]
    fn pure_decay_matches_exponential() {
        let p = LoadingParams {
            r0: 0.0,
            gamma_mot: 1.0,
            gamma_l: 5.0,
            beta_l: 0.0,
        };
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.05).collect();
        let n = loading_curve(&p, 1e5, &times).unwrap();
        for (t, v) in times.iter().zip(n) {
            let exact = 1e5 * (-5.0 * t).exp();
            assert!(
                (v - exact).abs() <= 1e-8 * exact.max(1.0),
                "{t}: {v} vs {exact}"
            );
        }
    }

    #[test]
    fn pure_loading_integral() {
        let p = LoadingParams {
            r0: 2e6,
            gamma_mot: 40.0,
            gamma_l: 0.0,
            beta_l: 0.0,
        };
        let times: Vec<f64> = (0..=20).map(|i| i as f64 * 0.01).collect();
        let n = loading_curve(&p, 100.0, &times).unwrap();
        for (t, v) in times.iter().zip(n) {
            let exact = 100.0 + 2e6 * (1.0 - (-40.0 * t).exp()) / 40.0;
            assert!((v - exact).abs() <= 1e-8 * exact, "{t}: {v} vs {exact}");
        }
    }

    #[test]
    fn negative_initial_number_rejected() {
        assert!(loading_curve(&table_comp(), -1.0, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn compression_curve_rises_then_falls() {
        let times: Vec<f64> = (0..=400).map(|i| 1e-4 * 1.02f64.powi(i)).collect();
        let n = loading_curve(&table_comp(), 0.0, &times).unwrap();
        let (imax, &nmax) = n
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(imax > 0 && imax < n.len() - 1);
        assert!(n.last().unwrap() < &(0.5 * nmax));
        assert!(n.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn cutoff_continues_as_loss() {
        let p = table_comp();
        let t_cut = 0.01;
        let times: Vec<f64> = (1..=50).map(|i| i as f64 * 2e-3).collect();
        let cut = loading_curve_with_cutoff(&p, 0.0, &times, t_cut).unwrap();
        let at_cut = loading_curve(&p, 0.0, &[t_cut]).unwrap()[0];
        for (t, v) in times.iter().zip(&cut) {
            if *t > t_cut {
                let expected = loss_curve_closed_form(&p.loss(), at_cut, t - t_cut);
                assert!(
                    (v - expected).abs() <= 1e-6 * expected,
                    "{t}: {v} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn loss_limits() {
        let n0 = 1e5;
        let exp = LossParams {
            gamma: 21.0,
            beta: 0.0,
        };
        assert!(
            (loss_curve_closed_form(&exp, n0, 0.05) - n0 * (-21.0f64 * 0.05).exp()).abs() < 1e-9
        );
        let alg = LossParams {
            gamma: 0.0,
            beta: 2.3e-4,
        };
        let expected = n0 / (1.0 + 2.3e-4 * n0 * 0.05);
        assert!((loss_curve_closed_form(&alg, n0, 0.05) - expected).abs() < 1e-9 * expected);
        let tiny = LossParams {
            gamma: 1e-14,
            beta: 2.3e-4,
        };
        assert!((loss_curve_closed_form(&tiny, n0, 0.05) / expected - 1.0).abs() < 1e-10);
    }

    #[test]
    fn breathing_examples() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 1e-4).collect();
        let flat = breathing_signal(&times, 226.5, 5e-3, 0.0, 0.7).unwrap();
        assert!(flat.iter().all(|&v| v == 0.7));
        let s = breathing_signal(&[0.0, 1.0 / 453.0], 226.5, 1e9, 0.2, 1.0).unwrap();
        assert!((s[0] - s[1]).abs() < 1e-9);
        let late = breathing_signal(&[0.1], 226.5, 5e-3, 0.3, 1.0).unwrap()[0];
        assert!((late - 1.0).abs() <= 0.3 * (-20.0f64).exp());
        assert!(breathing_signal(&times, 226.5, 5e-3, 1.0, 1.0).is_err());
    }

    #[test]
    fn frequency_scales_as_sqrt_power() {
        let line = AtomicLine::cs_d2();
        let nu = trap_frequency_vs_power(&[1.0, 4.0], 90e-6, 1030e-9, &line).unwrap();
        assert!((nu[1] / nu[0] - 2.0).abs() < 1e-12);
        let c = nu[0];
        let w = waist_from_sqrt_power_coefficient(c, 1030e-9, &line).unwrap();
        assert!((w / 90e-6 - 1.0).abs() < 1e-12);
        let small = trap_frequency_vs_power(&[1e-12], 90e-6, 1030e-9, &line).unwrap()[0];
        assert!(small < 1e-3 * c);
    }

    #[test]
    fn ballistic_limits() {
        let line = AtomicLine::cs_d2();
        let p = BallisticParams::new(15e-6, 275.0, 20e-6, &line);
        assert_eq!(ballistic_escape_probability(&p, 0.0), 0.0);
        let frozen = BallisticParams {
            temperature: 0.0,
            gravity: 0.0,
            ..p
        };
        assert_eq!(ballistic_escape_probability(&frozen, 3e-3), 0.0);
        assert!(ballistic_escape_probability(&p, 4e-3) > 0.95);
    }

    #[test]
    fn oracle_point_source_limit() {
        // σ_{r,0} → 0 through a very stiff trap; overlap is w²/(w² + 4σ_v²t²).
        let line = AtomicLine::cs_d2();
        let p = BallisticParams {
            gravity: 0.0,
            ..BallisticParams::new(15e-6, 1e9, 20e-6, &line)
        };
        let t = 5e-4;
        let est = ballistic_mc_oracle(&p, &[t], 200_000, 3).unwrap()[0];
        let w2 = p.waist * p.waist;
        let exact = 1.0 - w2 / (w2 + 4.0 * (p.sigma_v() * t).powi(2));
        assert!(
            (est.value - exact).abs() < 4.0 * est.std_error + 1e-12,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn oracle_is_seed_deterministic() {
        let line = AtomicLine::cs_d2();
        let p = BallisticParams::new(15e-6, 275.0, 20e-6, &line);
        let a = ballistic_mc_oracle(&p, &[1e-3, 2e-3], 50_000, 9).unwrap();
        let b = ballistic_mc_oracle(&p, &[1e-3, 2e-3], 50_000, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn depump_examples() {
        let none = DepumpParams::single(0.0, 5.0 / 12.0, 0.0).unwrap();
        let tr = depump_decay(&none, 10, 1e5, 1e5).unwrap();
        assert!(tr.bright.iter().all(|&n| n == 1e5));

        let p = DepumpParams::single(0.01, 5.0 / 12.0, 0.0).unwrap();
        let tr = depump_decay(&p, 40, 1e5, 1e5).unwrap();
        for w in tr.bright.windows(2) {
            assert!((w[1] / w[0] - (1.0 - 0.0041666666666667)).abs() < 1e-12);
        }
    }

    #[test]
    fn depump_reaches_steady_state_with_repump() {
        let p = DepumpParams::single(0.1, 0.5, 0.02).unwrap();
        let tr = depump_decay(&p, 2000, 1e5, 1e5).unwrap();
        // Steady state: N_b·0.05 = 0.02·(N − N_b).
        let steady = 1e5 * 0.02 / (0.05 + 0.02);
        assert!((tr.bright.last().unwrap() / steady - 1.0).abs() < 1e-9);
    }

    #[test]
    fn depump_from_probe_uses_f4_prime_branching() {
        let line = AtomicLine::cs_d2();
        let probe = ProbePulseConfig {
            detuning: crate::constants::angular(100e6),
            power: 1.2e-6,
            waist: 21.2e-6,
            duration: 10e-6,
            period: 100e-6,
            pulse_count: 40,
        };
        let p = DepumpParams::from_probe(&probe, &line, 0.0).unwrap();
        assert!(p.to_dark[&HalfInt::integer(5)].abs() < 1e-15);
        assert!((p.to_dark[&HalfInt::integer(4)] - 5.0 / 12.0).abs() < 1e-14);
        let loss = p.loss_per_pulse();
        assert!(loss > 0.005 && loss < 0.05, "{loss}");
    }

    #[test]
    fn depump_rejects_bad_probabilities() {
        assert!(DepumpParams::single(0.5, 1.5, 0.0).is_err());
        assert!(DepumpParams::single(0.5, 0.5, -0.1).is_err());
        assert!(DepumpParams::single(3.0, 0.5, 0.0).is_err());
    }
}
