//! Static atomic data and the dispersive/absorptive atom–light response.
//!
//! Frequencies are stored as angular frequencies (rad/s) and lengths in metres.
//! Conversion to lab units (MHz, nm, μK) happens only at I/O boundaries.
//!
//! The probe detuning used throughout is measured from the reference
//! transition of the line: highest ground `F` to highest excited `F'`
//! (the cycling transition on an alkali D2 line). Blue detuning is positive.

use std::collections::BTreeMap;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::angular::{wigner_6j, HalfInt};
use crate::constants::{angular, ATOMIC_MASS_UNIT, BOLTZMANN, PLANCK, SPEED_OF_LIGHT, TWO_PI};
use crate::error::{ensure, invalid, Error, Result};

/// Environment variable naming a constants file that replaces the built-in Cs D2 data.
pub const CONSTANTS_ENV_VAR: &str = "DIPOLESCOPE_DATA";

const CS_D2_TOML: &str = include_str!("../data/cs_d2.toml");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperfineLevel {
    pub f: HalfInt,
    /// Energy offset as an angular frequency, rad/s.
    pub offset: f64,
}

/// One fine-structure D line with its hyperfine manifolds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtomicLine {
    pub name: String,
    /// Vacuum wavelength, m.
    pub wavelength: f64,
    /// Natural HWHM linewidth γ, rad/s.
    pub hwhm: f64,
    /// Atomic mass, kg.
    pub mass: f64,
    pub ground_j: HalfInt,
    pub excited_j: HalfInt,
    pub nuclear_i: HalfInt,
    /// Ground hyperfine levels sorted by `F`.
    pub ground: Vec<HyperfineLevel>,
    /// Excited hyperfine levels sorted by `F'`.
    pub excited: Vec<HyperfineLevel>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstantsFile {
    name: String,
    wavelength_nm: f64,
    hwhm_mhz: f64,
    mass_amu: f64,
    ground_j: HalfInt,
    excited_j: HalfInt,
    nuclear_i: HalfInt,
    ground_offsets_mhz: BTreeMap<String, f64>,
    excited_offsets_mhz: BTreeMap<String, f64>,
}

fn parse_levels(map: &BTreeMap<String, f64>, what: &str) -> Result<Vec<HyperfineLevel>> {
    let mut levels = map
        .iter()
        .map(|(k, &mhz)| {
            let f: HalfInt = k
                .parse()
                .map_err(|e| Error::Constants(format!("{what} level key `{k}`: {e}")))?;
            Ok(HyperfineLevel {
                f,
                offset: angular(mhz * 1e6),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    levels.sort_by_key(|l| l.f);
    Ok(levels)
}

impl AtomicLine {
    /// Builds a line and checks its structural invariants.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        wavelength: f64,
        hwhm: f64,
        mass: f64,
        ground_j: HalfInt,
        excited_j: HalfInt,
        nuclear_i: HalfInt,
        mut ground: Vec<HyperfineLevel>,
        mut excited: Vec<HyperfineLevel>,
    ) -> Result<Self> {
        ensure(
            wavelength.is_finite() && wavelength > 0.0,
            "wavelength",
            || format!("must be positive, got {wavelength}"),
        )?;
        ensure(hwhm.is_finite() && hwhm > 0.0, "hwhm", || {
            format!("must be positive, got {hwhm}")
        })?;
        ensure(mass.is_finite() && mass > 0.0, "mass", || {
            format!("must be positive, got {mass}")
        })?;
        ground.sort_by_key(|l| l.f);
        excited.sort_by_key(|l| l.f);

        let expect_ground: Vec<_> = HalfInt::couple(ground_j, nuclear_i).collect();
        let got: Vec<_> = ground.iter().map(|l| l.f).collect();
        ensure(got == expect_ground, "ground", || {
            format!("levels {got:?} do not span |J-I|..J+I = {expect_ground:?}")
        })?;
        let expect_excited: Vec<_> = HalfInt::couple(excited_j, nuclear_i).collect();
        let got: Vec<_> = excited.iter().map(|l| l.f).collect();
        ensure(got == expect_excited, "excited", || {
            format!("levels {got:?} do not span |J'-I|..J'+I = {expect_excited:?}")
        })?;
        ensure(
            excited.windows(2).all(|w| w[1].offset > w[0].offset),
            "excited",
            || "offsets must increase strictly with F'".into(),
        )?;
        ensure(
            ground.iter().chain(&excited).all(|l| l.offset.is_finite()),
            "offsets",
            || "must be finite".into(),
        )?;

        Ok(AtomicLine {
            name: name.into(),
            wavelength,
            hwhm,
            mass,
            ground_j,
            excited_j,
            nuclear_i,
            ground,
            excited,
        })
    }

    /// Cesium D2 line from the bundled constants set.
    pub fn cs_d2() -> Self {
        Self::from_constants_str(CS_D2_TOML).expect("bundled Cs D2 constants are valid")
    }

    /// Parses a key/value constants file (TOML, unit-suffixed keys).
    pub fn from_constants_str(text: &str) -> Result<Self> {
        let file: ConstantsFile =
            toml::from_str(text).map_err(|e| Error::Constants(e.to_string()))?;
        let ground = parse_levels(&file.ground_offsets_mhz, "ground")?;
        let excited = parse_levels(&file.excited_offsets_mhz, "excited")?;
        Self::new(
            file.name,
            file.wavelength_nm * 1e-9,
            angular(file.hwhm_mhz * 1e6),
            file.mass_amu * ATOMIC_MASS_UNIT,
            file.ground_j,
            file.excited_j,
            file.nuclear_i,
            ground,
            excited,
        )
    }

    pub fn from_constants_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Constants(format!("{}: {e}", path.display())))?;
        Self::from_constants_str(&text)
    }

    /// The line named by `DIPOLESCOPE_DATA`, or Cs D2 when the variable is unset.
    pub fn from_env_or_default() -> Result<Self> {
        match std::env::var_os(CONSTANTS_ENV_VAR) {
            Some(path) if !path.is_empty() => Self::from_constants_file(path),
            _ => Ok(Self::cs_d2()),
        }
    }

    pub fn wavenumber(&self) -> f64 {
        TWO_PI / self.wavelength
    }

    /// Optical angular frequency of the line, rad/s.
    pub fn angular_frequency(&self) -> f64 {
        TWO_PI * SPEED_OF_LIGHT / self.wavelength
    }

    /// Ground level probed on the reference (cycling) transition.
    pub fn bright_level(&self) -> HalfInt {
        self.ground
            .last()
            .expect("validated line has ground levels")
            .f
    }

    /// Lower ground level, into which probe excitations depump.
    pub fn dark_level(&self) -> HalfInt {
        self.ground
            .first()
            .expect("validated line has ground levels")
            .f
    }

    fn ground_offset(&self, f: HalfInt) -> Option<f64> {
        self.ground.iter().find(|l| l.f == f).map(|l| l.offset)
    }

    /// Detuning Δ_{FF'} = ω − ω_{FF'} of a probe at `detuning` from the reference transition.
    pub fn transition_detuning(&self, detuning: f64, f: HalfInt, excited: &HyperfineLevel) -> f64 {
        let top_g = self.ground.last().unwrap();
        let top_e = self.excited.last().unwrap();
        let ground = self.ground_offset(f).unwrap_or(top_g.offset);
        let shift = (excited.offset - top_e.offset) - (ground - top_g.offset);
        detuning - shift
    }
}

/// Relative dipole strengths S_{JFF'J'} of every hyperfine component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransitionStrengthTable {
    entries: BTreeMap<(HalfInt, HalfInt), f64>,
}

impl TransitionStrengthTable {
    /// Strength of F → F'; zero for components forbidden by |F − F'| ≤ 1.
    pub fn get(&self, f: HalfInt, f_excited: HalfInt) -> f64 {
        self.entries.get(&(f, f_excited)).copied().unwrap_or(0.0)
    }

    pub fn sum_for(&self, f: HalfInt) -> f64 {
        self.entries
            .iter()
            .filter(|((g, _), _)| *g == f)
            .map(|(_, s)| s)
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (HalfInt, HalfInt, f64)> + '_ {
        self.entries.iter().map(|(&(f, fe), &s)| (f, fe, s))
    }
}

/// S_{JFF'J'} = (2F'+1)(2J+1) {J J' 1; F' F I}².
pub fn transition_strengths(line: &AtomicLine) -> TransitionStrengthTable {
    let one = HalfInt::integer(1);
    let mut entries = BTreeMap::new();
    for g in &line.ground {
        for e in &line.excited {
            let w = wigner_6j(line.ground_j, line.excited_j, one, e.f, g.f, line.nuclear_i);
            entries.insert(
                (g.f, e.f),
                e.f.multiplicity() * line.ground_j.multiplicity() * w * w,
            );
        }
    }
    TransitionStrengthTable { entries }
}

/// Spontaneous-decay branching ratios b(F' → F), keyed `(F', F)`.
///
/// b(F'→F) = (2F+1)(2J'+1) {J J' 1; F' F I}², which sums to one over `F`.
pub fn branching_ratios(line: &AtomicLine) -> BTreeMap<(HalfInt, HalfInt), f64> {
    let one = HalfInt::integer(1);
    let mut out = BTreeMap::new();
    for e in &line.excited {
        for g in &line.ground {
            let w = wigner_6j(line.ground_j, line.excited_j, one, e.f, g.f, line.nuclear_i);
            out.insert(
                (e.f, g.f),
                g.f.multiplicity() * line.excited_j.multiplicity() * w * w,
            );
        }
    }
    out
}

/// Probe pulse train settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbePulseConfig {
    /// Detuning from the reference transition, rad/s (positive = blue).
    pub detuning: f64,
    /// Optical power during a pulse, W.
    pub power: f64,
    /// 1/e² intensity radius at the atoms, m.
    pub waist: f64,
    /// Pulse duration τ, s.
    pub duration: f64,
    /// Repetition period T, s.
    pub period: f64,
    pub pulse_count: usize,
}

impl ProbePulseConfig {
    pub fn validate(&self) -> Result<()> {
        ensure(self.detuning.is_finite(), "detuning", || {
            "must be finite".into()
        })?;
        ensure(self.power.is_finite() && self.power >= 0.0, "power", || {
            format!("must be non-negative, got {}", self.power)
        })?;
        ensure(self.duration > 0.0, "duration", || {
            format!("must be positive, got {}", self.duration)
        })?;
        ensure(self.period >= self.duration, "period", || {
            format!(
                "repetition period {} s is shorter than the pulse {} s",
                self.period, self.duration
            )
        })?;
        ensure(self.waist > 0.0, "waist", || {
            format!("must be positive, got {}", self.waist)
        })
    }

    /// Photons per pulse n = Pτλ/(hc).
    pub fn photons_per_pulse(&self, line: &AtomicLine) -> f64 {
        self.power * self.duration * line.wavelength / (PLANCK * SPEED_OF_LIGHT)
    }

    /// Power that delivers `photons` per pulse at this pulse duration.
    pub fn power_for_photons(&self, photons: f64, line: &AtomicLine) -> f64 {
        photons * PLANCK * SPEED_OF_LIGHT / (self.duration * line.wavelength)
    }

    /// Probe cross-section used for the excitation estimate, πw₀².
    pub fn beam_area(&self) -> f64 {
        std::f64::consts::PI * self.waist * self.waist
    }

    /// Gaussian-mode overlap area πw₀²/2 used to convert phase into an effective atom number.
    pub fn mode_area(&self) -> f64 {
        0.5 * self.beam_area()
    }
}

/// Trapped sample as seen by the probe.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrappedSample {
    /// Column density N_F·l per ground level, atoms/m².
    pub column_density: BTreeMap<HalfInt, f64>,
    /// Temperature, K.
    pub temperature: f64,
    /// Radial trap angular frequency, rad/s.
    pub radial_frequency: f64,
    /// Axial trap angular frequency, rad/s (not used by the radial models).
    pub axial_frequency: f64,
}

impl TrappedSample {
    /// A sample with all atoms in one ground level.
    pub fn in_level(f: HalfInt, column_density: f64) -> Self {
        let mut map = BTreeMap::new();
        map.insert(f, column_density);
        TrappedSample {
            column_density: map,
            ..Default::default()
        }
    }

    pub fn with_level(mut self, f: HalfInt, column_density: f64) -> Self {
        self.column_density.insert(f, column_density);
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure(
            self.column_density
                .values()
                .all(|&n| n.is_finite() && n >= 0.0),
            "column_density",
            || "must be non-negative".into(),
        )?;
        ensure(self.temperature >= 0.0, "temperature", || {
            "must be non-negative".into()
        })
    }
}

fn level_terms<'a>(
    line: &'a AtomicLine,
    table: &'a TransitionStrengthTable,
    detuning: f64,
    f: HalfInt,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    line.excited.iter().map(move |e| {
        let delta = line.transition_detuning(detuning, f, e);
        (table.get(f, e.f), delta)
    })
}

/// Column quantity k₀l(n_Δ − 1): the real part is the probe phase shift,
/// the imaginary part the amplitude attenuation.
pub fn refractive_index(sample: &TrappedSample, line: &AtomicLine, detuning: f64) -> Complex64 {
    let table = transition_strengths(line);
    let gamma = line.hwhm;
    let prefactor = line.wavelength * line.wavelength / TWO_PI;
    let mut total = Complex64::new(0.0, 0.0);
    for (&f, &column) in &sample.column_density {
        if column == 0.0 {
            continue;
        }
        for (s, delta) in level_terms(line, &table, detuning, f) {
            let lorentz = Complex64::new(delta, gamma) * (gamma / (delta * delta + gamma * gamma));
            total += lorentz * (prefactor * column * s);
        }
    }
    total
}

/// Peak phase shift φ_F = λ² l N_F / 2π of a level with column density `column`.
pub fn peak_phase(line: &AtomicLine, column: f64) -> f64 {
    line.wavelength * line.wavelength * column / TWO_PI
}

/// Dispersive factor Σ_{F'} S_{FF'} γΔ_{FF'}/(Δ_{FF'}² + γ²) of one ground level.
pub fn dispersion_function(line: &AtomicLine, detuning: f64, f: HalfInt) -> f64 {
    let table = transition_strengths(line);
    let gamma = line.hwhm;
    level_terms(line, &table, detuning, f)
        .map(|(s, d)| s * gamma * d / (d * d + gamma * gamma))
        .sum()
}

/// Probe phase shift φ_Δ = Σ_F φ_F Σ_{F'} S γΔ/(Δ²+γ²), rad.
pub fn phase_shift(sample: &TrappedSample, line: &AtomicLine, detuning: f64) -> f64 {
    sample
        .column_density
        .iter()
        .filter(|(_, &c)| c != 0.0)
        .map(|(&f, &c)| peak_phase(line, c) * dispersion_function(line, detuning, f))
        .sum()
}

/// Absorptive line shape L = Σ_{F'} S_{FF'} γ²/(Δ_{FF'}² + γ²).
pub fn linewidth_function(line: &AtomicLine, detuning: f64, f: HalfInt) -> f64 {
    let table = transition_strengths(line);
    let g2 = line.hwhm * line.hwhm;
    level_terms(line, &table, detuning, f)
        .map(|(s, d)| s * g2 / (d * d + g2))
        .sum()
}

/// Pulse-integrated excitation probability of a bright-level atom, per excited level F'.
pub fn excitation_by_level(probe: &ProbePulseConfig, line: &AtomicLine) -> Vec<(HalfInt, f64)> {
    let table = transition_strengths(line);
    let f = line.bright_level();
    let g2 = line.hwhm * line.hwhm;
    let scale = absorption_scale(probe, line);
    level_terms(line, &table, probe.detuning, f)
        .zip(&line.excited)
        .map(|((s, d), e)| (e.f, scale * s * g2 / (d * d + g2)))
        .collect()
}

/// (λ²/3π)·n/A: cross-section prefactor times photon fluence.
fn absorption_scale(probe: &ProbePulseConfig, line: &AtomicLine) -> f64 {
    let sigma0 = line.wavelength * line.wavelength / (3.0 * std::f64::consts::PI);
    sigma0 * probe.photons_per_pulse(line) / probe.beam_area()
}

/// Total pulse-integrated excitation probability p_e = σ(Δ)·n/A of a bright-level atom.
pub fn excitation_probability(probe: &ProbePulseConfig, line: &AtomicLine) -> f64 {
    absorption_scale(probe, line) * linewidth_function(line, probe.detuning, line.bright_level())
}

/// Phase shift produced by one bright-level atom inside the probe mode, rad.
pub fn phase_per_atom(line: &AtomicLine, detuning: f64, mode_area: f64) -> f64 {
    peak_phase(line, 1.0 / mode_area) * dispersion_function(line, detuning, line.bright_level())
}

/// Converts a measured phase shift into an effective bright-level atom number.
pub fn effective_atom_number(phase: f64, line: &AtomicLine, probe: &ProbePulseConfig) -> f64 {
    phase / phase_per_atom(line, probe.detuning, probe.mode_area())
}

/// Far-detuned trapping beam.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapBeam {
    /// W.
    pub power: f64,
    /// 1/e² radius at the focus, m.
    pub waist: f64,
    /// m.
    pub wavelength: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TrapProperties {
    /// Peak potential depth, J.
    pub depth: f64,
    /// Peak potential depth U/k_B, K.
    pub depth_kelvin: f64,
    /// Radial harmonic trap frequency ν_r, Hz.
    pub radial_frequency: f64,
}

/// Potential depth of a red-detuned beam per unit peak intensity, J·m²/W.
fn depth_per_intensity(line: &AtomicLine, trap_wavelength: f64) -> f64 {
    let w0 = line.angular_frequency();
    let w = TWO_PI * SPEED_OF_LIGHT / trap_wavelength;
    let gamma_full = 2.0 * line.hwhm;
    3.0 * std::f64::consts::PI * SPEED_OF_LIGHT.powi(2) / (2.0 * w0.powi(3))
        * (gamma_full / (w0 - w) + gamma_full / (w0 + w))
}

/// Depth and radial frequency of a single-beam dipole trap, with the
/// rotating and counter-rotating terms of one effective line.
pub fn dipole_trap_properties(beam: &TrapBeam, line: &AtomicLine) -> Result<TrapProperties> {
    ensure(beam.power.is_finite() && beam.power >= 0.0, "power", || {
        format!("must be non-negative, got {}", beam.power)
    })?;
    ensure(beam.waist > 0.0, "waist", || {
        format!("must be positive, got {}", beam.waist)
    })?;
    if !(beam.wavelength > line.wavelength) {
        return Err(invalid(
            "wavelength",
            format!(
                "trap light at {:.1} nm is not red-detuned from the {:.1} nm line",
                beam.wavelength * 1e9,
                line.wavelength * 1e9
            ),
        ));
    }
    let intensity = 2.0 * beam.power / (std::f64::consts::PI * beam.waist * beam.waist);
    let depth = depth_per_intensity(line, beam.wavelength) * intensity;
    let omega_r = (4.0 * depth / (line.mass * beam.waist * beam.waist)).sqrt();
    Ok(TrapProperties {
        depth,
        depth_kelvin: depth / BOLTZMANN,
        radial_frequency: omega_r / TWO_PI,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn h(twice: u32) -> HalfInt {
        HalfInt::from_twice(twice)
    }

    fn toy_line() -> AtomicLine {
        // J = 1/2 -> J' = 1/2 with I = 0: one ground and one excited level.
        AtomicLine::new(
            "toy",
            780e-9,
            angular(3e6),
            1e-25,
            h(1),
            h(1),
            h(0),
            vec![HyperfineLevel {
                f: h(1),
                offset: 0.0,
            }],
            vec![HyperfineLevel {
                f: h(1),
                offset: 0.0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn cs_d2_constants_load() {
        let line = AtomicLine::cs_d2();
        assert_eq!(line.ground.len(), 2);
        assert_eq!(line.excited.len(), 4);
        assert_eq!(line.bright_level(), HalfInt::integer(4));
        assert_eq!(line.dark_level(), HalfInt::integer(3));
        assert!((line.hwhm - angular(2.6e6)).abs() < 1e-6);
    }

    #[test]
    fn rejects_incomplete_manifold() {
        let text = CS_D2_TOML.replace("\"2\" = -603.6047\n", "");
        let err = AtomicLine::from_constants_str(&text).unwrap_err();
        assert!(err.to_string().contains("excited"), "{err}");
    }

    #[test]
    fn rejects_unknown_constant_key() {
        let text = format!("{CS_D2_TOML}\nbogus_hz = 1.0\n");
        let err = AtomicLine::from_constants_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_hz"), "{err}");
    }

    #[test]
    fn rejects_non_monotone_excited_offsets() {
        let text = CS_D2_TOML.replace("\"4\" = -251.09", "\"4\" = 10.0");
        assert!(AtomicLine::from_constants_str(&text).is_err());
    }

    #[test]
    fn cs_d2_f4_strengths() {
        let s = transition_strengths(&AtomicLine::cs_d2());
        let f4 = HalfInt::integer(4);
        assert!((s.get(f4, HalfInt::integer(5)) - 11.0 / 18.0).abs() < 1e-14);
        assert!((s.get(f4, HalfInt::integer(4)) - 7.0 / 24.0).abs() < 1e-14);
        assert!((s.get(f4, HalfInt::integer(3)) - 7.0 / 72.0).abs() < 1e-14);
        assert_eq!(s.get(HalfInt::integer(3), HalfInt::integer(5)), 0.0);
        assert_eq!(s.get(f4, HalfInt::integer(2)), 0.0);
    }

    #[test]
    fn cs_d2_f3_strengths() {
        // Standard Cs tables: S32 = 5/14, S33 = 3/8, S34 = 15/56.
        let s = transition_strengths(&AtomicLine::cs_d2());
        let f3 = HalfInt::integer(3);
        assert!((s.get(f3, HalfInt::integer(2)) - 5.0 / 14.0).abs() < 1e-14);
        assert!((s.get(f3, HalfInt::integer(3)) - 3.0 / 8.0).abs() < 1e-14);
        assert!((s.get(f3, HalfInt::integer(4)) - 15.0 / 56.0).abs() < 1e-14);
    }

    #[test]
    fn branching_from_f4_prime() {
        let b = branching_ratios(&AtomicLine::cs_d2());
        let (f3, f4, f5) = (
            HalfInt::integer(3),
            HalfInt::integer(4),
            HalfInt::integer(5),
        );
        assert!((b[&(f4, f3)] - 5.0 / 12.0).abs() < 1e-14);
        assert!((b[&(f4, f4)] - 7.0 / 12.0).abs() < 1e-14);
        assert!((b[&(f5, f4)] - 1.0).abs() < 1e-14);
        assert!(b[&(f5, f3)].abs() < 1e-15);
    }

    #[test]
    fn empty_sample_has_no_response() {
        let line = AtomicLine::cs_d2();
        let sample = TrappedSample::in_level(HalfInt::integer(4), 0.0);
        let n = refractive_index(&sample, &line, angular(100e6));
        assert_eq!(n, Complex64::new(0.0, 0.0));
        assert_eq!(phase_shift(&sample, &line, angular(100e6)), 0.0);
    }

    #[test]
    fn single_transition_is_odd_and_vanishes_on_resonance() {
        let line = toy_line();
        let sample = TrappedSample::in_level(h(1), 1e13);
        assert_eq!(refractive_index(&sample, &line, 0.0).re, 0.0);
        for d in [1e6, 3e7, 5e8] {
            let plus = phase_shift(&sample, &line, d);
            let minus = phase_shift(&sample, &line, -d);
            assert!(plus > 0.0);
            assert!((plus + minus).abs() <= 1e-15 * plus.abs());
        }
    }

    #[test]
    fn single_transition_linewidth_at_resonance_is_strength() {
        let line = toy_line();
        let s = transition_strengths(&line).get(h(1), h(1));
        assert!((linewidth_function(&line, 0.0, h(1)) - s).abs() < 1e-15);
    }

    #[test]
    fn linewidth_tails_vanish() {
        let line = AtomicLine::cs_d2();
        let l = linewidth_function(&line, angular(1e13), line.bright_level());
        assert!(l < 1e-12);
    }

    #[test]
    fn zero_power_no_excitation() {
        let line = AtomicLine::cs_d2();
        let probe = ProbePulseConfig {
            detuning: angular(100e6),
            power: 0.0,
            waist: 20e-6,
            duration: 2e-6,
            period: 6e-6,
            pulse_count: 1,
        };
        assert_eq!(excitation_probability(&probe, &line), 0.0);
    }

    #[test]
    fn blue_detuned_trap_rejected() {
        let line = AtomicLine::cs_d2();
        let beam = TrapBeam {
            power: 1.0,
            waist: 40e-6,
            wavelength: 780e-9,
        };
        assert!(dipole_trap_properties(&beam, &line).is_err());
    }

    #[test]
    fn probe_validation() {
        let mut probe = ProbePulseConfig {
            detuning: 0.0,
            power: 1e-7,
            waist: 20e-6,
            duration: 2e-6,
            period: 1e-6,
            pulse_count: 10,
        };
        assert!(probe.validate().is_err());
        probe.period = 6e-6;
        assert!(probe.validate().is_ok());
        probe.power = -1.0;
        assert!(probe.validate().is_err());
    }
}
