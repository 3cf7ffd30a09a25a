//! Physical constants (CODATA 2018, exact SI values where defined).
//!
//! Every module takes its constants from here.

/// Reduced Planck constant ħ in J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Boltzmann constant k_B in J/K.
pub const K_B: f64 = 1.380_649e-23;

/// Speed of light in vacuum in m/s.
pub const C_LIGHT: f64 = 299_792_458.0;

/// 2π, used everywhere a frequency in Hz becomes an angular rate.
pub const TWO_PI: f64 = std::f64::consts::TAU;
