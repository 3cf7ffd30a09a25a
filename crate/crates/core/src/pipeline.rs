//! End-to-end round trip: simulate rises over a power sweep, demodulate,
//! extract the maximum slopes and estimate g₀ three ways.

use num_complex::Complex64;
use rayon::prelude::*;

use crate::amplitude::{g0_from_threshold, integrate_amplitude, steady_state_amplitude};
use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::estimation::{
    extract_max_slope, fit_slope_power, fit_threshold_linear, FitOptions, FitResult,
    LinearThreshold, SlopeExtraction, SlopeMeasurement, SlopeOutcome,
};
use crate::langevin::{
    max_step, simulate_full, EnvelopeTrace, InitialState, LockIn, Observable, SimulationConfig,
};
use crate::model::{Beam, SystemParams};
use crate::spectral::{
    detection_factor, forward_calibration_spectrum, g0_from_calibration, integrated_area,
    CalibrationTone, DetectionChain, ReflectionParams, SidebandModel, SpectrumLayout,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// True parameters, including the g₀ to be recovered.
    pub sys: SystemParams,
    /// Effective pump powers, W.
    pub powers: Vec<f64>,
    pub seeds: Vec<u64>,
    pub thermal_noise: bool,
    pub optical_noise: bool,
    /// Integration step; `None` uses the largest admissible step.
    pub dt: Option<f64>,
    /// Earliest pump switch-on, s.
    pub pump_on_time: f64,
    pub record_stride: usize,
    /// Lock-in bandwidth, Hz.
    pub lock_in_bandwidth: f64,
    pub lock_in_order: u32,
    /// Envelope samples before this time are dropped, s.
    pub settle_time: f64,
    pub envelope_decimation: usize,
    pub extraction: SlopeExtraction,
    pub fit: FitOptions,
    pub tone: Option<CalibrationTone>,
    pub chain: DetectionChain,
    pub sideband_model: SidebandModel,
    pub layout: SpectrumLayout,
    /// Simulated time for powers with no limit cycle, s.
    pub below_threshold_duration: f64,
    pub keep_envelopes: bool,
}

impl PipelineConfig {
    pub fn new(sys: SystemParams, powers: Vec<f64>) -> Self {
        PipelineConfig {
            sys,
            powers,
            seeds: vec![0],
            thermal_noise: true,
            optical_noise: false,
            dt: None,
            pump_on_time: 0.05,
            record_stride: 64,
            lock_in_bandwidth: 182.0,
            lock_in_order: 4,
            settle_time: 0.01,
            envelope_decimation: 16,
            extraction: SlopeExtraction {
                window_fraction: 0.2,
                ..SlopeExtraction::default()
            },
            fit: FitOptions::default(),
            tone: Some(CalibrationTone {
                beta: 19.5e-3,
                omega_b: TWO_PI * 237.0e3,
            }),
            chain: DetectionChain::default(),
            sideband_model: SidebandModel::ClosedForm,
            layout: SpectrumLayout::default(),
            below_threshold_duration: 0.5,
            keep_envelopes: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sys.validate()?;
        if self.powers.is_empty() {
            return Err(Error::config("the power sweep is empty"));
        }
        if self.powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::config("pump powers must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if !(self.lock_in_bandwidth.is_finite() && self.lock_in_bandwidth > 0.0) {
            return Err(Error::config("lock-in bandwidth must be positive"));
        }
        if self.lock_in_order == 0 {
            return Err(Error::config("lock-in order must be at least 1"));
        }
        if !(self.settle_time >= 0.0 && self.pump_on_time >= self.settle_time) {
            return Err(Error::config("settle time must lie in [0, pump_on_time]"));
        }
        if !(self.below_threshold_duration > self.pump_on_time) {
            return Err(Error::config(
                "below-threshold duration must exceed the pump switch-on",
            ));
        }
        if let Some(t) = &self.tone {
            t.validate()?;
        }
        Ok(())
    }
}

/// Timing of one run, chosen from the envelope equation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunPlan {
    pub pump_on_time: f64,
    pub duration: f64,
    /// Predicted time from switch-on to 99% of the limit cycle, if one exists.
    pub rise_time: Option<f64>,
}

/// Rms thermal amplitude 2g₀√n̄/ω_m.
fn thermal_amplitude(sys: &SystemParams) -> Result<f64> {
    Ok(2.0 * sys.g0 * sys.mech.n_bar()?.sqrt() / sys.mech.omega_m)
}

pub fn plan_run(sys: &SystemParams, cfg: &PipelineConfig) -> Result<RunPlan> {
    let Some(st) = steady_state_amplitude(sys)? else {
        return Ok(RunPlan {
            pump_on_time: cfg.pump_on_time,
            duration: cfg.below_threshold_duration,
            rise_time: None,
        });
    };
    let mut xi0 = thermal_amplitude(sys)?;
    if !cfg.thermal_noise {
        xi0 *= (-sys.mech.gamma_m * cfg.pump_on_time).exp();
    }
    let mut tau_end = 20.0;
    let tau99 = if xi0 >= 0.99 * st {
        0.0
    } else {
        loop {
            let traj = integrate_amplitude(sys, xi0, tau_end, tau_end / 20_000.0)?;
            if let Some(s) = traj.iter().find(|s| s.xi >= 0.99 * st) {
                break s.tau;
            }
            tau_end *= 4.0;
            if tau_end > 1e5 {
                return Err(Error::numeric(
                    "the envelope does not approach its limit cycle",
                ));
            }
        }
    };
    let rise = tau99 / sys.mech.gamma_m;
    let pump_on = cfg.pump_on_time.max(0.1 * rise);
    Ok(RunPlan {
        pump_on_time: pump_on,
        duration: pump_on + 1.4 * rise,
        rise_time: Some(rise),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub power: f64,
    pub seed: u64,
    pub plan: RunPlan,
    pub outcome: SlopeOutcome,
    pub envelope: Option<EnvelopeTrace>,
}

impl RunRecord {
    pub fn trace_id(&self) -> String {
        format!("P{:.4e}_seed{}", self.power, self.seed)
    }

    /// Non-rising traces count as zero slope.
    pub fn measurement(&self) -> SlopeMeasurement {
        let (slope, sd) = match self.outcome {
            SlopeOutcome::Rise(r) => (r.slope, Some(r.std_error)),
            SlopeOutcome::NoRise { .. } => (0.0, None),
        };
        SlopeMeasurement {
            pump_power: self.power,
            max_slope: slope,
            uncertainty: sd.filter(|s| *s > 0.0),
            trace_id: self.trace_id(),
        }
    }
}

/// Simulation configuration for one (power, seed) run.
pub fn simulation_for(
    cfg: &PipelineConfig,
    power: f64,
    seed: u64,
) -> Result<(SystemParams, SimulationConfig, RunPlan)> {
    let sys = cfg.sys.clone().with_pump_power(power);
    let plan = plan_run(&sys, cfg)?;
    let initial = if cfg.thermal_noise {
        InitialState::Thermal
    } else {
        InitialState::Fixed(Complex64::new(sys.mech.n_bar()?.sqrt(), 0.0))
    };
    let sim = SimulationConfig {
        dt: cfg.dt.unwrap_or_else(|| max_step(&sys)),
        duration: plan.duration,
        seed,
        pump_on_time: plan.pump_on_time,
        thermal_noise: cfg.thermal_noise,
        optical_noise: cfg.optical_noise,
        record_stride: cfg.record_stride,
        initial,
    };
    Ok((sys, sim, plan))
}

/// Simulate → demodulate → extract for one power and seed.
pub fn run_one(cfg: &PipelineConfig, power: f64, seed: u64) -> Result<RunRecord> {
    let label = format!("P = {power:e} W, seed {seed}");
    let (sys, sim, plan) =
        simulation_for(cfg, power, seed).map_err(|e| e.context(&format!("plan ({label})")))?;
    let traj = simulate_full(&sys, &sim).map_err(|e| e.context(&format!("simulate ({label})")))?;
    let env = LockIn::new(sys.mech.omega_m / TWO_PI, cfg.lock_in_bandwidth)
        .with_order(cfg.lock_in_order)
        .demodulate(&traj, &sys, &Observable::Displacement)
        .map_err(|e| e.context(&format!("demodulate ({label})")))?
        .since(cfg.settle_time)
        .decimate(cfg.envelope_decimation);
    let outcome = extract_max_slope(&env, &cfg.extraction)
        .map_err(|e| e.context(&format!("extract ({label})")))?;
    Ok(RunRecord {
        power,
        seed,
        plan,
        outcome,
        envelope: cfg.keep_envelopes.then_some(env),
    })
}

/// Location and spread of a set of estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spread {
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation; zero for a single value.
    pub std: f64,
    pub count: usize,
}

impl Spread {
    pub fn of(values: &[f64]) -> Option<Spread> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        };
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Spread {
            median,
            mean,
            std,
            count: n,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub measurements: Vec<SlopeMeasurement>,
    pub slope_fit: std::result::Result<FitResult, Error>,
    pub threshold: std::result::Result<LinearThreshold, Error>,
    pub threshold_g0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneEstimate {
    pub dv2_m: f64,
    pub dv2_b: f64,
    pub detection_factor: f64,
    pub g0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub true_g0: f64,
    pub runs: Vec<RunRecord>,
    pub seeds: Vec<SeedSummary>,
    pub slope_g0: Option<Spread>,
    pub threshold_g0: Option<Spread>,
    pub tone: Option<ToneEstimate>,
    /// Powers at which some run showed no rise.
    pub not_crossed: Vec<f64>,
}

/// Calibration-tone estimate from a forward-modelled thermal spectrum.
pub fn tone_estimate(cfg: &PipelineConfig, tone: &CalibrationTone) -> Result<ToneEstimate> {
    let sys = &cfg.sys;
    let n_bar = sys.mech.n_bar()?;
    let p = ReflectionParams {
        detuning: sys.detuning(Beam::Probe),
        kappa: sys.probe.kappa(),
        kappa_in: sys.probe.kappa_in,
        omega_m: sys.mech.omega_m,
    };
    let fwd = forward_calibration_spectrum(
        sys.g0,
        n_bar,
        tone,
        &p,
        &cfg.chain,
        cfg.sideband_model,
        &cfg.layout,
    )?;
    let dv2_m = integrated_area(&fwd.record, fwd.mech_band)?;
    let dv2_b = integrated_area(&fwd.record, fwd.tone_band)?;
    let k = detection_factor(p.kappa, p.kappa_in, p.omega_m, tone.omega_b)?;
    Ok(ToneEstimate {
        dv2_m,
        dv2_b,
        detection_factor: k,
        g0: g0_from_calibration(dv2_m, dv2_b, tone, n_bar, k)?,
    })
}

/// Fits each seed's sweep and aggregates the estimates.
pub fn summarize(cfg: &PipelineConfig, runs: Vec<RunRecord>) -> Result<PipelineReport> {
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let mut measurements: Vec<SlopeMeasurement> = runs
            .iter()
            .filter(|r| r.seed == seed)
            .map(RunRecord::measurement)
            .collect();
        measurements.sort_by(|a, b| a.pump_power.total_cmp(&b.pump_power));
        // simulated slopes are weighted equally
        let unweighted: Vec<SlopeMeasurement> = measurements
            .iter()
            .map(|m| SlopeMeasurement {
                uncertainty: None,
                ..m.clone()
            })
            .collect();
        let slope_fit = fit_slope_power(&unweighted, &cfg.sys, &cfg.fit);
        let threshold = fit_threshold_linear(&unweighted);
        let threshold_g0 = threshold
            .as_ref()
            .ok()
            .and_then(|t| g0_from_threshold(t.p_th, &cfg.sys).ok());
        seeds.push(SeedSummary {
            seed,
            measurements,
            slope_fit,
            threshold,
            threshold_g0,
        });
    }
    let slope_values: Vec<f64> = seeds
        .iter()
        .filter_map(|s| {
            s.slope_fit
                .as_ref()
                .ok()
                .filter(|f| f.converged)
                .map(|f| f.g0)
        })
        .collect();
    let threshold_values: Vec<f64> = seeds.iter().filter_map(|s| s.threshold_g0).collect();
    let tone = match &cfg.tone {
        Some(t) => Some(tone_estimate(cfg, t).map_err(|e| e.context("calibration tone"))?),
        None => None,
    };
    let mut not_crossed: Vec<f64> = runs
        .iter()
        .filter(|r| r.outcome.rise().is_none())
        .map(|r| r.power)
        .collect();
    not_crossed.sort_by(f64::total_cmp);
    not_crossed.dedup();
    Ok(PipelineReport {
        true_g0: cfg.sys.g0,
        runs,
        seeds,
        slope_g0: Spread::of(&slope_values),
        threshold_g0: Spread::of(&threshold_values),
        tone,
        not_crossed,
    })
}

/// Runs every (power, seed) pair concurrently, then summarizes.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineReport> {
    cfg.validate()?;
    let jobs: Vec<(f64, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.powers.iter().map(move |&p| (p, s)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(p, s)| run_one(cfg, p, s))
        .collect::<Result<Vec<_>>>()?;
    summarize(cfg, runs)
}

/// Runs `f` on a pool of `threads` workers, or the global pool for `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}
