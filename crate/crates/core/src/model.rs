//! Physical parameter sets and the derived quantities every other module
//! consumes.
//!
//! All rates and frequencies are angular (rad/s). Powers are *effective*
//! powers: the mode-matching factor is applied once, when a parameter set is
//! built from incident powers, and never again downstream.

use num_complex::Complex64;

use crate::constants::{C_LIGHT, HBAR, K_B, TWO_PI};
use crate::error::{Error, Result};

/// Which of the two driven optical modes an operation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Beam {
    Pump,
    Probe,
}

impl Beam {
    pub fn other(self) -> Beam {
        match self {
            Beam::Pump => Beam::Probe,
            Beam::Probe => Beam::Pump,
        }
    }
}

impl std::fmt::Display for Beam {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Beam::Pump => f.write_str("pump"),
            Beam::Probe => f.write_str("probe"),
        }
    }
}

/// How the mean thermal phonon number is computed from temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OccupationModel {
    /// k_B·T/(ħ·ω_m), valid for ħω_m ≪ k_B·T.
    #[default]
    Classical,
    /// 1/(exp(ħω_m/k_B·T) − 1).
    Bose,
}

/// One driven cavity mode.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalModeParams {
    /// Decay rate through the input port.
    pub kappa_in: f64,
    /// Decay rate through every other channel.
    pub kappa_ex: f64,
    /// Laser-cavity detuning ω_L − ω_c before the static optomechanical shift.
    pub bare_detuning: f64,
    /// Single-photon coupling of this mode; `None` ties it to the system g₀.
    pub coupling: Option<f64>,
    /// Laser wavelength in meters.
    pub wavelength: f64,
    /// Effective (mode-matched) input power in watts.
    pub power: f64,
    /// Mode-matching factor that was applied to the incident power.
    pub mode_match: f64,
}

impl OpticalModeParams {
    /// Builds a mode from the power incident on the cavity; the stored power
    /// is `mode_match * incident_power`.
    pub fn from_incident_power(
        kappa_in: f64,
        kappa_ex: f64,
        bare_detuning: f64,
        wavelength: f64,
        incident_power: f64,
        mode_match: f64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&mode_match) {
            return Err(Error::domain(format!(
                "mode-matching factor must lie in [0, 1], got {mode_match}"
            )));
        }
        let mode = OpticalModeParams {
            kappa_in,
            kappa_ex,
            bare_detuning,
            coupling: None,
            wavelength,
            power: mode_match * incident_power,
            mode_match,
        };
        mode.validate()?;
        Ok(mode)
    }

    /// Total amplitude decay rate κ = κ_in + κ_ex.
    pub fn kappa(&self) -> f64 {
        self.kappa_in + self.kappa_ex
    }

    /// Laser angular frequency ω_L = 2πc/λ.
    pub fn laser_angular_frequency(&self) -> f64 {
        TWO_PI * C_LIGHT / self.wavelength
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.kappa_in,
            self.kappa_ex,
            self.bare_detuning,
            self.wavelength,
            self.power,
            self.mode_match,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::domain("optical parameters must be finite"));
        }
        if self.kappa_in < 0.0 || self.kappa_ex < 0.0 {
            return Err(Error::domain("optical decay rates must be non-negative"));
        }
        if self.kappa() <= 0.0 {
            return Err(Error::domain("total cavity decay rate must be positive"));
        }
        if self.wavelength <= 0.0 {
            return Err(Error::domain("laser wavelength must be positive"));
        }
        if self.power < 0.0 {
            return Err(Error::domain("input power must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.mode_match) {
            return Err(Error::domain("mode-matching factor must lie in [0, 1]"));
        }
        if let Some(g) = self.coupling {
            if !g.is_finite() || g < 0.0 {
                return Err(Error::domain(
                    "coupling rate must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }
}

/// The mechanical mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanicalParams {
    pub omega_m: f64,
    /// Amplitude decay rate.
    pub gamma_m: f64,
    /// Effective mass in kg.
    pub m_eff: f64,
    /// Bath temperature in K.
    pub temperature: f64,
    pub occupation: OccupationModel,
}

impl MechanicalParams {
    pub fn x_zpf(&self) -> Result<f64> {
        zero_point_motion(self.m_eff, self.omega_m)
    }

    pub fn n_bar(&self) -> Result<f64> {
        match self.occupation {
            OccupationModel::Classical => thermal_occupation(self.temperature, self.omega_m),
            OccupationModel::Bose => thermal_occupation_bose(self.temperature, self.omega_m),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_m.is_finite() && self.omega_m > 0.0) {
            return Err(Error::domain("mechanical frequency must be positive"));
        }
        if !(self.gamma_m.is_finite() && self.gamma_m > 0.0) {
            return Err(Error::domain("mechanical damping must be positive"));
        }
        if !(self.m_eff.is_finite() && self.m_eff > 0.0) {
            return Err(Error::domain("effective mass must be positive"));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(Error::domain("temperature must be non-negative"));
        }
        Ok(())
    }
}

/// Full two-beam, one-mechanical-mode parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub pump: OpticalModeParams,
    pub probe: OpticalModeParams,
    pub mech: MechanicalParams,
    /// Single-photon optomechanical coupling rate g₀.
    pub g0: f64,
    /// Static mechanical shift β₀. There is no procedure here to compute it
    /// self-consistently; it is a user input and defaults to zero.
    pub static_shift: Complex64,
}

impl SystemParams {
    /// Parameters of the membrane-in-the-middle experiment: κ = 2π·66.8 kHz,
    /// κ_in = 2π·8.3 kHz, ω_m = 2π·229.753 kHz, γ_m = 2π·1.64 Hz,
    /// m_eff = 1.74·10⁻¹⁰ kg, T = 295 K, λ = 1064 nm, a pump blue-detuned by
    /// 2π·239.35 kHz at 21 µW, a resonant 1 µW probe and g₀ = 2π·0.336 Hz.
    pub fn reference_defaults() -> Self {
        let kappa = TWO_PI * 66.8e3;
        let kappa_in = TWO_PI * 8.3e3;
        let wavelength = 1064e-9;
        let mode = |detuning: f64, power: f64| OpticalModeParams {
            kappa_in,
            kappa_ex: kappa - kappa_in,
            bare_detuning: detuning,
            coupling: None,
            wavelength,
            power,
            mode_match: 1.0,
        };
        SystemParams {
            pump: mode(TWO_PI * 239.35e3, 21e-6),
            probe: mode(0.0, 1e-6),
            mech: MechanicalParams {
                omega_m: TWO_PI * 229.753e3,
                gamma_m: TWO_PI * 1.64,
                m_eff: 1.74e-10,
                temperature: 295.0,
                occupation: OccupationModel::Classical,
            },
            g0: TWO_PI * 0.336,
            static_shift: Complex64::new(0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.pump.validate()?;
        self.probe.validate()?;
        self.mech.validate()?;
        if !(self.g0.is_finite() && self.g0 > 0.0) {
            return Err(Error::domain("g0 must be positive"));
        }
        if !(self.static_shift.re.is_finite() && self.static_shift.im.is_finite()) {
            return Err(Error::domain("static shift must be finite"));
        }
        Ok(())
    }

    pub fn optical(&self, beam: Beam) -> &OpticalModeParams {
        match beam {
            Beam::Pump => &self.pump,
            Beam::Probe => &self.probe,
        }
    }

    pub fn optical_mut(&mut self, beam: Beam) -> &mut OpticalModeParams {
        match beam {
            Beam::Pump => &mut self.pump,
            Beam::Probe => &mut self.probe,
        }
    }

    /// Coupling g_i of a beam, g₀ unless overridden.
    pub fn coupling(&self, beam: Beam) -> f64 {
        self.optical(beam).coupling.unwrap_or(self.g0)
    }

    /// Effective detuning Δ_i including the static shift.
    pub fn detuning(&self, beam: Beam) -> f64 {
        let mode = self.optical(beam);
        effective_detuning(mode.bare_detuning, self.static_shift, self.coupling(beam))
    }

    /// Squared drive rate E_i² in s⁻².
    pub fn drive_sq(&self, beam: Beam) -> f64 {
        let mode = self.optical(beam);
        2.0 * mode.kappa_in * mode.power / (HBAR * mode.laser_angular_frequency())
    }

    /// E_i²/P_i, the drive per unit effective power.
    pub fn drive_sq_per_watt(&self, beam: Beam) -> f64 {
        let mode = self.optical(beam);
        2.0 * mode.kappa_in / (HBAR * mode.laser_angular_frequency())
    }

    /// α = 2g₀²/(γ_m·ω_m).
    pub fn alpha(&self) -> f64 {
        2.0 * self.g0 * self.g0 / (self.mech.gamma_m * self.mech.omega_m)
    }

    pub fn with_power(mut self, beam: Beam, power: f64) -> Self {
        self.optical_mut(beam).power = power;
        self
    }

    pub fn with_pump_power(self, power: f64) -> Self {
        self.with_power(Beam::Pump, power)
    }

    pub fn with_g0(mut self, g0: f64) -> Self {
        self.g0 = g0;
        self
    }

    /// Mechanical amplitude |A| for a dimensionless amplitude ξ = 2g₀|A|/ω_m.
    pub fn amplitude_from_xi(&self, xi: f64) -> f64 {
        xi * self.mech.omega_m / (2.0 * self.g0)
    }

    pub fn xi_from_amplitude(&self, amplitude: f64) -> f64 {
        2.0 * self.g0 * amplitude / self.mech.omega_m
    }
}

/// Mean thermal occupation in the classical limit, k_B·T/(ħ·ω_m).
pub fn thermal_occupation(temperature: f64, omega_m: f64) -> Result<f64> {
    check_occupation_args(temperature, omega_m)?;
    Ok(K_B * temperature / (HBAR * omega_m))
}

/// Bose-Einstein occupation 1/(exp(ħω/k_B·T) − 1).
pub fn thermal_occupation_bose(temperature: f64, omega_m: f64) -> Result<f64> {
    check_occupation_args(temperature, omega_m)?;
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = HBAR * omega_m / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}

fn check_occupation_args(temperature: f64, omega_m: f64) -> Result<()> {
    if !(omega_m.is_finite() && omega_m > 0.0) {
        return Err(Error::domain(format!(
            "mechanical frequency must be positive, got {omega_m}"
        )));
    }
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(Error::domain(format!(
            "temperature must be non-negative, got {temperature}"
        )));
    }
    Ok(())
}

/// Zero-point motion x_zpf = sqrt(ħ/(2·m_eff·ω_m)) in meters.
pub fn zero_point_motion(m_eff: f64, omega_m: f64) -> Result<f64> {
    if !(m_eff.is_finite() && m_eff > 0.0) {
        return Err(Error::domain(format!(
            "effective mass must be positive, got {m_eff}"
        )));
    }
    if !(omega_m.is_finite() && omega_m > 0.0) {
        return Err(Error::domain(format!(
            "mechanical frequency must be positive, got {omega_m}"
        )));
    }
    Ok((HBAR / (2.0 * m_eff * omega_m)).sqrt())
}

/// Drive rate E = sqrt(2·κ_in·P/(ħ·ω_L)), in s⁻¹ (photon-number amplitude units).
pub fn drive_rate(power: f64, kappa_in: f64, omega_l: f64) -> Result<f64> {
    if !(power.is_finite() && power >= 0.0) {
        return Err(Error::domain(format!(
            "power must be non-negative, got {power}"
        )));
    }
    if !(kappa_in.is_finite() && kappa_in >= 0.0) {
        return Err(Error::domain("input coupling rate must be non-negative"));
    }
    if !(omega_l.is_finite() && omega_l > 0.0) {
        return Err(Error::domain("laser frequency must be positive"));
    }
    Ok((2.0 * kappa_in * power / (HBAR * omega_l)).sqrt())
}

/// Δ = Δ⁽⁰⁾ + (β₀ + β₀*)·g = Δ⁽⁰⁾ + 2·Re(β₀)·g.
pub fn effective_detuning(bare_detuning: f64, static_shift: Complex64, coupling: f64) -> f64 {
    bare_detuning + 2.0 * static_shift.re * coupling
}
