//! Physical constants (CODATA 2018, SI).

pub const PLANCK: f64 = 6.626_070_15e-34;
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
pub const BOLTZMANN: f64 = 1.380_649e-23;
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Standard gravity, m/s².
pub const STANDARD_GRAVITY: f64 = 9.81;

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Converts a frequency in Hz to an angular frequency in rad/s.
#[inline]
pub fn angular(hz: f64) -> f64 {
    TWO_PI * hz
}

/// Converts an angular frequency in rad/s to Hz.
#[inline]
pub fn hertz(rad_per_s: f64) -> f64 {
    rad_per_s / TWO_PI
}
