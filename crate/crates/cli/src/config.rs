//! JSON run configuration. Frequencies are given in Hz under `*_2pi` keys and
//! converted to rad/s; powers accept plain numbers or SI-suffixed strings.

use std::fmt;
use std::path::{Path, PathBuf};

use hopfcal::constants::TWO_PI;
use hopfcal::estimation::{FitOptions, SlopeExtraction};
use hopfcal::model::{MechanicalParams, OccupationModel, OpticalModeParams, SystemParams};
use hopfcal::pipeline::PipelineConfig;
use hopfcal::spectral::{CalibrationTone, SidebandModel};
use num_complex::Complex64;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{CliError, CliResult};

/// A power in watts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Power(pub f64);

const SUFFIXES: [(&str, i32); 8] = [
    ("mW", -3),
    ("uW", -6),
    ("µW", -6),
    ("μW", -6),
    ("nW", -9),
    ("pW", -12),
    ("kW", 3),
    ("W", 0),
];

pub fn parse_power(text: &str) -> Result<f64, String> {
    let s = text.trim();
    let (number, exp) = SUFFIXES
        .iter()
        .find(|(suf, _)| s.ends_with(suf))
        .map_or((s, 0), |(suf, e)| (s[..s.len() - suf.len()].trim(), *e));
    let bad = || format!("cannot read `{text}` as a power");
    // "6.1uW" is read as "6.1e-6".
    let p: f64 = if exp == 0 || number.contains(['e', 'E']) {
        number.parse::<f64>().map_err(|_| bad())? * 10f64.powi(exp)
    } else {
        number.parse::<f64>().map_err(|_| bad())?;
        format!("{number}e{exp}").parse().map_err(|_| bad())?
    };
    if !(p.is_finite() && p >= 0.0) {
        return Err(format!("power `{text}` must be finite and non-negative"));
    }
    Ok(p)
}

pub fn parse_power_list(text: &str) -> Result<Vec<f64>, String> {
    text.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(parse_power)
        .collect()
}

impl Serialize for Power {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.0)
    }
}

impl<'de> Deserialize<'de> for Power {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct PowerVisitor;
        impl Visitor<'_> for PowerVisitor {
            type Value = Power;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a power in watts or a string such as \"6.1uW\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Power, E> {
                if v.is_finite() && v >= 0.0 {
                    Ok(Power(v))
                } else {
                    Err(E::custom(format!("power must be non-negative, got {v}")))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Power, E> {
                Ok(Power(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Power, E> {
                self.visit_f64(v as f64)
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Power, E> {
                parse_power(v).map(Power).map_err(E::custom)
            }
        }
        d.deserialize_any(PowerVisitor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Occupation {
    #[default]
    Classical,
    Bose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sidebands {
    GeneralSum,
    #[default]
    ClosedForm,
    Linearized,
}

/// Per-beam settings; absent fields take the beam's defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub detuning_2pi: Option<f64>,
    /// Effective (mode-matched) power.
    pub power: Option<Power>,
    pub kappa_2pi: Option<f64>,
    pub kappa_in_2pi: Option<f64>,
    pub coupling_2pi: Option<f64>,
    pub wavelength: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub kappa_2pi: f64,
    pub kappa_in_2pi: f64,
    pub omega_m_2pi: f64,
    pub gamma_m_2pi: f64,
    pub m_eff: f64,
    pub temperature: f64,
    pub occupation: Occupation,
    pub g0_2pi: f64,
    pub wavelength: f64,
    /// Static mechanical shift β₀ as [re, im].
    pub static_shift: [f64; 2],
    pub pump: BeamConfig,
    pub probe: BeamConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            kappa_2pi: 66.8e3,
            kappa_in_2pi: 8.3e3,
            omega_m_2pi: 229.753e3,
            gamma_m_2pi: 1.64,
            m_eff: 1.74e-10,
            temperature: 295.0,
            occupation: Occupation::Classical,
            g0_2pi: 0.336,
            wavelength: 1064e-9,
            static_shift: [0.0, 0.0],
            pump: BeamConfig::default(),
            probe: BeamConfig::default(),
        }
    }
}

impl SystemConfig {
    fn beam(&self, b: &BeamConfig, detuning_2pi: f64, power: f64) -> OpticalModeParams {
        let kappa = b.kappa_2pi.unwrap_or(self.kappa_2pi) * TWO_PI;
        let kappa_in = b.kappa_in_2pi.unwrap_or(self.kappa_in_2pi) * TWO_PI;
        OpticalModeParams {
            kappa_in,
            kappa_ex: kappa - kappa_in,
            bare_detuning: b.detuning_2pi.unwrap_or(detuning_2pi) * TWO_PI,
            coupling: b.coupling_2pi.map(|g| g * TWO_PI),
            wavelength: b.wavelength.unwrap_or(self.wavelength),
            power: b.power.map_or(power, |p| p.0),
            mode_match: 1.0,
        }
    }

    pub fn to_params(&self) -> CliResult<SystemParams> {
        let sys = SystemParams {
            pump: self.beam(&self.pump, 239.35e3, 21e-6),
            probe: self.beam(&self.probe, 0.0, 1e-6),
            mech: MechanicalParams {
                omega_m: self.omega_m_2pi * TWO_PI,
                gamma_m: self.gamma_m_2pi * TWO_PI,
                m_eff: self.m_eff,
                temperature: self.temperature,
                occupation: match self.occupation {
                    Occupation::Classical => OccupationModel::Classical,
                    Occupation::Bose => OccupationModel::Bose,
                },
            },
            g0: self.g0_2pi * TWO_PI,
            static_shift: Complex64::new(self.static_shift[0], self.static_shift[1]),
        };
        sys.validate()
            .map_err(|e| CliError::Config(format!("system: {e}")))?;
        Ok(sys)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationSection {
    /// Simulated time in s; absent chooses it from the envelope equation.
    pub duration: Option<f64>,
    pub dt: Option<f64>,
    pub pump_on_time: f64,
    pub thermal_noise: bool,
    pub optical_noise: bool,
    pub record_stride: usize,
    /// Extra thinning of the trajectory written to disk.
    pub trajectory_stride: usize,
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            duration: None,
            dt: None,
            pump_on_time: 0.05,
            thermal_noise: true,
            optical_noise: false,
            record_stride: 64,
            trajectory_stride: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub lock_in_bandwidth: f64,
    pub lock_in_order: u32,
    pub settle_time: f64,
    pub envelope_decimation: usize,
    pub window: Option<f64>,
    pub window_fraction: f64,
    pub plateau_fraction: f64,
    pub rise_ratio: f64,
    pub low_level: f64,
    pub high_level: f64,
    pub log_scale: bool,
    pub curve_points: usize,
    pub write_envelopes: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            lock_in_bandwidth: 182.0,
            lock_in_order: 4,
            settle_time: 0.01,
            envelope_decimation: 16,
            window: None,
            window_fraction: 0.2,
            plateau_fraction: 0.05,
            rise_ratio: 3.0,
            low_level: 0.1,
            high_level: 0.9,
            log_scale: false,
            curve_points: 121,
            write_envelopes: false,
        }
    }
}

impl AnalysisSection {
    pub fn extraction(&self) -> SlopeExtraction {
        SlopeExtraction {
            window: self.window,
            plateau_fraction: self.plateau_fraction,
            rise_ratio: self.rise_ratio,
            low_level: self.low_level,
            high_level: self.high_level,
            window_fraction: self.window_fraction,
            min_window: 10,
            log_scale: self.log_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    /// Modulation depth, rad.
    pub beta: f64,
    pub beta_std: f64,
    pub omega_b_2pi: f64,
    /// Overrides the occupation computed from the system block.
    pub n_bar: Option<f64>,
    pub n_bar_std: f64,
    /// Overrides the detection factor computed from the probe mode.
    pub detection_factor: Option<f64>,
    pub detection_factor_std: f64,
    /// Relative uncertainties of the mechanical and tone areas.
    pub area_m_rel_std: f64,
    pub area_b_rel_std: f64,
    pub mech_band_hz: Option<[f64; 2]>,
    pub tone_band_hz: Option<[f64; 2]>,
    pub sideband_model: Sidebands,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        CalibrationSection {
            beta: 19.5e-3,
            beta_std: 0.1e-3,
            omega_b_2pi: 237.0e3,
            n_bar: None,
            n_bar_std: 0.5e5,
            detection_factor: None,
            detection_factor_std: 0.14,
            area_m_rel_std: 0.0,
            area_b_rel_std: 0.0,
            mech_band_hz: None,
            tone_band_hz: None,
            sideband_model: Sidebands::ClosedForm,
        }
    }
}

impl CalibrationSection {
    pub fn tone(&self) -> CalibrationTone {
        CalibrationTone {
            beta: self.beta,
            omega_b: self.omega_b_2pi * TWO_PI,
        }
    }

    pub fn model(&self) -> SidebandModel {
        match self.sideband_model {
            Sidebands::GeneralSum => SidebandModel::GeneralSum,
            Sidebands::ClosedForm => SidebandModel::ClosedForm,
            Sidebands::Linearized => SidebandModel::Linearized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub powers: Vec<Power>,
    /// Number of seeds, counted up from the run seed.
    pub seeds: u64,
    pub below_threshold_duration: f64,
    pub calibration_tone: bool,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            powers: (0..6).map(|k| Power(6e-6 + 4.8e-6 * k as f64)).collect(),
            seeds: 1,
            below_threshold_duration: 0.5,
            calibration_tone: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub simulation: SimulationSection,
    pub analysis: AnalysisSection,
    pub calibration: CalibrationSection,
    pub pipeline: PipelineSection,
    pub output_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemConfig::default(),
            simulation: SimulationSection::default(),
            analysis: AnalysisSection::default(),
            calibration: CalibrationSection::default(),
            pipeline: PipelineSection::default(),
            output_dir: PathBuf::from("hopfcal-out"),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_json(&text)
                    .map_err(|e| CliError::Config(format!("{}: {}", p.display(), strip(e))))
            }
            None => Ok(RunConfig::default()),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        self.system.to_params()?;
        let a = &self.analysis;
        if !(a.lock_in_bandwidth > 0.0) || a.lock_in_order == 0 {
            return Err(CliError::Config(
                "analysis: lock-in bandwidth and order must be positive".into(),
            ));
        }
        if a.envelope_decimation == 0 || self.simulation.record_stride == 0 {
            return Err(CliError::Config(
                "strides and decimation must be at least 1".into(),
            ));
        }
        if self.simulation.trajectory_stride == 0 {
            return Err(CliError::Config(
                "simulation: trajectory_stride must be at least 1".into(),
            ));
        }
        if !(0.0 < a.low_level && a.low_level < a.high_level && a.high_level < 1.0) {
            return Err(CliError::Config(
                "analysis: need 0 < low_level < high_level < 1".into(),
            ));
        }
        if !(a.window_fraction > 0.0 && a.window_fraction <= 1.0) {
            return Err(CliError::Config(
                "analysis: window_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn params(&self) -> CliResult<SystemParams> {
        self.system.to_params()
    }

    pub fn pipeline(&self, sys: &SystemParams, powers: Vec<f64>) -> PipelineConfig {
        let s = &self.simulation;
        let a = &self.analysis;
        PipelineConfig {
            seeds: (0..self.pipeline.seeds.max(1))
                .map(|k| self.seed + k)
                .collect(),
            thermal_noise: s.thermal_noise,
            optical_noise: s.optical_noise,
            dt: s.dt,
            pump_on_time: s.pump_on_time,
            record_stride: s.record_stride,
            lock_in_bandwidth: a.lock_in_bandwidth,
            lock_in_order: a.lock_in_order,
            settle_time: a.settle_time,
            envelope_decimation: a.envelope_decimation,
            extraction: a.extraction(),
            fit: FitOptions::default(),
            tone: self
                .pipeline
                .calibration_tone
                .then(|| self.calibration.tone()),
            sideband_model: self.calibration.model(),
            below_threshold_duration: self.pipeline.below_threshold_duration,
            keep_envelopes: a.write_envelopes,
            ..PipelineConfig::new(sys.clone(), powers)
        }
    }
}

fn strip(e: CliError) -> String {
    match e {
        CliError::Config(m) => m,
        other => other.to_string(),
    }
}
