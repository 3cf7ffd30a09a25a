//! Stochastic integration of the classical Langevin equations for two driven
//! cavity modes coupled to one mechanical mode:
//!
//! ```text
//! α̇ᵢ = (iΔ⁽⁰⁾ᵢ − κᵢ)αᵢ + Eᵢ + 2i·gᵢ·Re[β]·αᵢ + √(2κᵢ)·αᵢ^opt
//! β̇  = (−iω_m − γ_m)β + i·Σᵢ gᵢ|αᵢ|² + √(2γ_m)·β^in
//! ```
//!
//! which follows from H_int = −ħ·Σᵢ gᵢ·aᵢ†aᵢ·(b + b†). The linear part is
//! propagated exactly (integrating factor) and the drift with a Lawson RK4
//! stage scheme; the additive noise enters as an Euler–Maruyama increment at
//! the start of each step. Amplitudes are in photon^(1/2) and phonon^(1/2)
//! units.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::model::{Beam, SystemParams};
use crate::spectral::DetectionChain;

const STREAM_THERMAL: u64 = 0;
const STREAM_PROBE: u64 = 1;
const STREAM_PUMP: u64 = 2;
const STREAM_INITIAL: u64 = 3;

/// Initial mechanical amplitude; the optical modes always start empty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum InitialState {
    /// Complex Gaussian with ⟨|β|²⟩ = n̄_m + 1/2, drawn from the seed.
    #[default]
    Thermal,
    Fixed(Complex64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Integration step in seconds.
    pub dt: f64,
    /// Simulated time in seconds.
    pub duration: f64,
    pub seed: u64,
    /// The pump drive is zero before this instant.
    pub pump_on_time: f64,
    pub thermal_noise: bool,
    pub optical_noise: bool,
    /// Record every `record_stride`-th step.
    pub record_stride: usize,
    pub initial: InitialState,
}

impl SimulationConfig {
    /// Thermal noise on, optical noise off, pump on from t = 0, recording
    /// every step at the largest admissible step.
    pub fn new(sys: &SystemParams, duration: f64) -> Self {
        SimulationConfig {
            dt: max_step(sys),
            duration,
            seed: 0,
            pump_on_time: 0.0,
            thermal_noise: true,
            optical_noise: false,
            record_stride: 1,
            initial: InitialState::Thermal,
        }
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn validate(&self, sys: &SystemParams) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        let limit = max_step(sys);
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::config(format!(
                "dt = {:e} s does not resolve the fastest rate; use dt <= {limit:e} s",
                self.dt
            )));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("duration must be positive"));
        }
        if !(self.pump_on_time.is_finite() && self.pump_on_time >= 0.0) {
            return Err(Error::config("pump switch-on time must be non-negative"));
        }
        if self.pump_on_time > self.duration {
            return Err(Error::config("pump switch-on time exceeds the duration"));
        }
        if self.record_stride == 0 {
            return Err(Error::config("record stride must be at least 1"));
        }
        if let InitialState::Fixed(b) = self.initial {
            if !(b.re.is_finite() && b.im.is_finite()) {
                return Err(Error::config("initial amplitude must be finite"));
            }
        }
        Ok(())
    }
}

/// Largest admissible step, 1/(50·max(κ_pm, κ_pr, ω_m)).
pub fn max_step(sys: &SystemParams) -> f64 {
    let fastest = sys
        .pump
        .kappa()
        .max(sys.probe.kappa())
        .max(sys.mech.omega_m);
    1.0 / (50.0 * fastest)
}

/// Recorded samples of a simulation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub alpha_pr: Vec<Complex64>,
    pub alpha_pm: Vec<Complex64>,
    pub beta: Vec<Complex64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn sample_rate(&self) -> Option<f64> {
        (self.times.len() >= 2).then(|| 1.0 / (self.times[1] - self.times[0]))
    }

    fn push(&mut self, t: f64, y: &State) {
        self.times.push(t);
        self.alpha_pr.push(y.pr);
        self.alpha_pm.push(y.pm);
        self.beta.push(y.b);
    }
}

/// White-noise samples; each entry is a rate, so the increment over one
/// step is `sample * dt`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseSamples {
    pub dt: f64,
    pub beta_in: Vec<Complex64>,
    pub alpha_opt_pr: Vec<Complex64>,
    pub alpha_opt_pm: Vec<Complex64>,
}

impl NoiseSamples {
    pub fn len(&self) -> usize {
        self.beta_in.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta_in.is_empty()
    }

    /// The same Brownian path sampled at twice the step.
    pub fn coarsen(&self) -> NoiseSamples {
        let pair = |v: &[Complex64]| v.chunks_exact(2).map(|c| 0.5 * (c[0] + c[1])).collect();
        NoiseSamples {
            dt: 2.0 * self.dt,
            beta_in: pair(&self.beta_in),
            alpha_opt_pr: pair(&self.alpha_opt_pr),
            alpha_opt_pm: pair(&self.alpha_opt_pm),
        }
    }
}

/// Circular complex Gaussian source with ⟨|z|²⟩ = variance/dt per sample.
struct GaussianStream {
    rng: ChaCha8Rng,
    scale: f64,
}

impl GaussianStream {
    fn new(seed: u64, stream: u64, variance: f64, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        GaussianStream {
            rng,
            scale: (variance / (2.0 * dt)).sqrt(),
        }
    }

    #[inline]
    fn sample(&mut self) -> Complex64 {
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        Complex64::new(self.scale * re, self.scale * im)
    }
}

/// Draws the thermal (variance n̄ + 1/2) and optical vacuum (variance 1/2)
/// input noises used by [`simulate_full`] for the same seed.
pub fn generate_noise(n_steps: usize, dt: f64, n_bar: f64, seed: u64) -> Result<NoiseSamples> {
    if n_steps == 0 {
        return Err(Error::domain("at least one noise sample is required"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    if !(n_bar.is_finite() && n_bar >= 0.0) {
        return Err(Error::domain(format!(
            "occupation must be non-negative, got {n_bar}"
        )));
    }
    let draw = |stream, variance| {
        let mut g = GaussianStream::new(seed, stream, variance, dt);
        (0..n_steps).map(|_| g.sample()).collect::<Vec<_>>()
    };
    Ok(NoiseSamples {
        dt,
        beta_in: draw(STREAM_THERMAL, n_bar + 0.5),
        alpha_opt_pr: draw(STREAM_PROBE, 0.5),
        alpha_opt_pm: draw(STREAM_PUMP, 0.5),
    })
}

#[derive(Debug, Clone, Copy)]
struct State {
    pr: Complex64,
    pm: Complex64,
    b: Complex64,
}

impl State {
    fn is_finite(&self) -> bool {
        [self.pr, self.pm, self.b]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

struct Drift {
    e_pr: f64,
    e_pm: f64,
    g_pr: f64,
    g_pm: f64,
    pump_on: f64,
}

impl Drift {
    #[inline]
    fn eval(&self, y: &State, t: f64) -> State {
        let x = 2.0 * y.b.re;
        let e_pm = if t >= self.pump_on { self.e_pm } else { 0.0 };
        State {
            pr: Complex64::new(self.e_pr - self.g_pr * x * y.pr.im, self.g_pr * x * y.pr.re),
            pm: Complex64::new(e_pm - self.g_pm * x * y.pm.im, self.g_pm * x * y.pm.re),
            b: Complex64::new(
                0.0,
                self.g_pr * y.pr.norm_sqr() + self.g_pm * y.pm.norm_sqr(),
            ),
        }
    }
}

/// Exponentials of the linear generator over half and full steps.
struct Propagator {
    half: [Complex64; 3],
    full: [Complex64; 3],
}

impl Propagator {
    fn new(sys: &SystemParams, h: f64) -> Self {
        let gen = [
            Complex64::new(-sys.probe.kappa(), sys.probe.bare_detuning),
            Complex64::new(-sys.pump.kappa(), sys.pump.bare_detuning),
            Complex64::new(-sys.mech.gamma_m, -sys.mech.omega_m),
        ];
        Propagator {
            half: gen.map(|l| (l * (0.5 * h)).exp()),
            full: gen.map(|l| (l * h).exp()),
        }
    }

    #[inline]
    fn apply(f: &[Complex64; 3], y: &State) -> State {
        State {
            pr: f[0] * y.pr,
            pm: f[1] * y.pm,
            b: f[2] * y.b,
        }
    }
}

#[inline]
fn axpy(a: f64, x: &State, y: &State) -> State {
    State {
        pr: y.pr + a * x.pr,
        pm: y.pm + a * x.pm,
        b: y.b + a * x.b,
    }
}

/// One Lawson RK4 step of the drift from (y, t).
#[inline]
fn lawson_step(y: &State, t: f64, h: f64, drift: &Drift, p: &Propagator) -> State {
    let half = h * 0.5;
    let k1 = drift.eval(y, t);
    let ey = Propagator::apply(&p.half, y);
    let k1h = Propagator::apply(&p.half, &k1);
    let k2 = drift.eval(&axpy(half, &k1h, &ey), t + half);
    let k3 = drift.eval(&axpy(half, &k2, &ey), t + half);
    let e2y = Propagator::apply(&p.full, y);
    let k3h = Propagator::apply(&p.half, &k3);
    let k4 = drift.eval(&axpy(h, &k3h, &e2y), t + h);
    let k1f = Propagator::apply(&p.full, &k1);
    let k23 = Propagator::apply(&p.half, &axpy(1.0, &k2, &k3));
    State {
        pr: e2y.pr + h / 6.0 * (k1f.pr + 2.0 * k23.pr + k4.pr),
        pm: e2y.pm + h / 6.0 * (k1f.pm + 2.0 * k23.pm + k4.pm),
        b: e2y.b + h / 6.0 * (k1f.b + 2.0 * k23.b + k4.b),
    }
}

trait NoiseSource {
    /// Increments (already multiplied by their √(2·rate)·dt prefactors).
    fn next(&mut self, k: usize) -> State;
}

struct Silent;

impl NoiseSource for Silent {
    fn next(&mut self, _k: usize) -> State {
        let z = Complex64::new(0.0, 0.0);
        State { pr: z, pm: z, b: z }
    }
}

struct Streams {
    thermal: Option<GaussianStream>,
    probe: Option<GaussianStream>,
    pump: Option<GaussianStream>,
    c_b: f64,
    c_pr: f64,
    c_pm: f64,
}

impl NoiseSource for Streams {
    #[inline]
    fn next(&mut self, _k: usize) -> State {
        let z = Complex64::new(0.0, 0.0);
        State {
            pr: self.probe.as_mut().map_or(z, |g| self.c_pr * g.sample()),
            pm: self.pump.as_mut().map_or(z, |g| self.c_pm * g.sample()),
            b: self.thermal.as_mut().map_or(z, |g| self.c_b * g.sample()),
        }
    }
}

struct Given<'a> {
    noise: &'a NoiseSamples,
    use_thermal: bool,
    use_optical: bool,
    c_b: f64,
    c_pr: f64,
    c_pm: f64,
}

impl NoiseSource for Given<'_> {
    fn next(&mut self, k: usize) -> State {
        let z = Complex64::new(0.0, 0.0);
        let (pr, pm) = if self.use_optical {
            (
                self.c_pr * self.noise.alpha_opt_pr[k],
                self.c_pm * self.noise.alpha_opt_pm[k],
            )
        } else {
            (z, z)
        };
        let b = if self.use_thermal {
            self.c_b * self.noise.beta_in[k]
        } else {
            z
        };
        State { pr, pm, b }
    }
}

fn initial_state(sys: &SystemParams, cfg: &SimulationConfig) -> Result<State> {
    let zero = Complex64::new(0.0, 0.0);
    let b = match cfg.initial {
        InitialState::Fixed(b) => b,
        InitialState::Thermal => {
            // variance/dt with dt = 1 gives ⟨|β|²⟩ = n̄ + 1/2
            let n_bar = sys.mech.n_bar()?;
            GaussianStream::new(cfg.seed, STREAM_INITIAL, n_bar + 0.5, 1.0).sample()
        }
    };
    Ok(State {
        pr: zero,
        pm: zero,
        b,
    })
}

fn run<N: NoiseSource>(
    sys: &SystemParams,
    cfg: &SimulationConfig,
    mut noise: N,
) -> Result<Trajectory> {
    let h = cfg.dt;
    let steps = cfg.steps();
    let drift = Drift {
        e_pr: sys.drive_sq(Beam::Probe).sqrt(),
        e_pm: sys.drive_sq(Beam::Pump).sqrt(),
        g_pr: sys.coupling(Beam::Probe),
        g_pm: sys.coupling(Beam::Pump),
        pump_on: cfg.pump_on_time,
    };
    let prop = Propagator::new(sys, h);
    let mut y = initial_state(sys, cfg)?;
    let mut traj = Trajectory::default();
    let capacity = steps / cfg.record_stride + 1;
    traj.times.reserve(capacity);
    traj.alpha_pr.reserve(capacity);
    traj.alpha_pm.reserve(capacity);
    traj.beta.reserve(capacity);
    traj.push(0.0, &y);
    for k in 0..steps {
        let t = k as f64 * h;
        let dw = noise.next(k);
        y = axpy(1.0, &dw, &y);
        y = lawson_step(&y, t, h, &drift, &prop);
        if !y.is_finite() {
            return Err(Error::numeric(format!(
                "state became non-finite at step {} (t = {:e} s)",
                k + 1,
                t + h
            )));
        }
        if (k + 1) % cfg.record_stride == 0 {
            traj.push((k + 1) as f64 * h, &y);
        }
    }
    Ok(traj)
}

fn noise_prefactors(sys: &SystemParams, dt: f64) -> (f64, f64, f64) {
    (
        (2.0 * sys.mech.gamma_m).sqrt() * dt,
        (2.0 * sys.probe.kappa()).sqrt() * dt,
        (2.0 * sys.pump.kappa()).sqrt() * dt,
    )
}

/// Integrates the coupled Langevin equations with noise drawn from `cfg.seed`.
pub fn simulate_full(sys: &SystemParams, cfg: &SimulationConfig) -> Result<Trajectory> {
    sys.validate()?;
    cfg.validate(sys)?;
    if !cfg.thermal_noise && !cfg.optical_noise {
        return run(sys, cfg, Silent);
    }
    let (c_b, c_pr, c_pm) = noise_prefactors(sys, cfg.dt);
    let n_bar = sys.mech.n_bar()?;
    let optical = |stream| {
        cfg.optical_noise
            .then(|| GaussianStream::new(cfg.seed, stream, 0.5, cfg.dt))
    };
    let streams = Streams {
        thermal: cfg
            .thermal_noise
            .then(|| GaussianStream::new(cfg.seed, STREAM_THERMAL, n_bar + 0.5, cfg.dt)),
        probe: optical(STREAM_PROBE),
        pump: optical(STREAM_PUMP),
        c_b,
        c_pr,
        c_pm,
    };
    run(sys, cfg, streams)
}

/// As [`simulate_full`] but driven by pre-drawn noise (whose `dt` must match
/// `cfg.dt`); the flags in `cfg` still select which channels are applied.
pub fn simulate_with_noise(
    sys: &SystemParams,
    cfg: &SimulationConfig,
    noise: &NoiseSamples,
) -> Result<Trajectory> {
    sys.validate()?;
    cfg.validate(sys)?;
    if ((noise.dt - cfg.dt) / cfg.dt).abs() > 1e-12 {
        return Err(Error::config("noise samples were drawn for a different dt"));
    }
    if noise.len() < cfg.steps()
        || noise.alpha_opt_pr.len() < cfg.steps()
        || noise.alpha_opt_pm.len() < cfg.steps()
    {
        return Err(Error::config(format!(
            "{} noise samples supplied for {} steps",
            noise.len(),
            cfg.steps()
        )));
    }
    let (c_b, c_pr, c_pm) = noise_prefactors(sys, cfg.dt);
    let source = Given {
        noise,
        use_thermal: cfg.thermal_noise,
        use_optical: cfg.optical_noise,
        c_b,
        c_pr,
        c_pm,
    };
    run(sys, cfg, source)
}

/// Real signal handed to the lock-in.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Observable {
    /// Membrane displacement 2·Re[β]·x_zpf in meters.
    #[default]
    Displacement,
    /// Homodyne voltage of the reflected probe,
    /// 2·g_T·S·√(P_lo·P_in)·Im[−1 + 2κ_in·α_pr/E_pr].
    Homodyne(DetectionChain),
}

impl Observable {
    pub fn signal(&self, traj: &Trajectory, sys: &SystemParams) -> Result<Vec<f64>> {
        match self {
            Observable::Displacement => {
                let scale = 2.0 * sys.mech.x_zpf()?;
                Ok(traj.beta.iter().map(|b| scale * b.re).collect())
            }
            Observable::Homodyne(chain) => {
                chain.validate()?;
                let e_pr = sys.drive_sq(Beam::Probe).sqrt();
                if e_pr == 0.0 {
                    return Err(Error::config("homodyne detection requires a probe beam"));
                }
                let gain = chain.field_gain();
                let r = 2.0 * sys.probe.kappa_in / e_pr;
                Ok(traj.alpha_pr.iter().map(|a| gain * r * a.im).collect())
            }
        }
    }
}

/// Demodulated amplitude of a real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeTrace {
    pub times: Vec<f64>,
    /// Magnitude of the filtered baseband, in the units of the signal.
    pub v: Vec<f64>,
    /// −3 dB bandwidth in Hz.
    pub bandwidth: f64,
    /// Reference frequency in Hz.
    pub reference_frequency: f64,
}

impl EnvelopeTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Samples with `t >= t0`.
    pub fn since(&self, t0: f64) -> EnvelopeTrace {
        let start = self.times.partition_point(|&t| t < t0);
        EnvelopeTrace {
            times: self.times[start..].to_vec(),
            v: self.v[start..].to_vec(),
            bandwidth: self.bandwidth,
            reference_frequency: self.reference_frequency,
        }
    }

    /// Every `factor`-th sample.
    pub fn decimate(&self, factor: usize) -> EnvelopeTrace {
        let f = factor.max(1);
        EnvelopeTrace {
            times: self.times.iter().step_by(f).copied().collect(),
            v: self.v.iter().step_by(f).copied().collect(),
            bandwidth: self.bandwidth,
            reference_frequency: self.reference_frequency,
        }
    }

    /// Samples with `t0 <= t < t1`.
    pub fn window(&self, t0: f64, t1: f64) -> EnvelopeTrace {
        let a = self.times.partition_point(|&t| t < t0);
        let b = self.times.partition_point(|&t| t < t1);
        EnvelopeTrace {
            times: self.times[a..b].to_vec(),
            v: self.v[a..b].to_vec(),
            bandwidth: self.bandwidth,
            reference_frequency: self.reference_frequency,
        }
    }
}

/// Digital lock-in: mixing with e^{−i2πf_ref·t} followed by a cascade of
/// identical one-pole low-pass filters. For a tone A·cos(2πf_ref·t + φ) the
/// settled output is A/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockIn {
    /// Hz.
    pub reference_frequency: f64,
    /// −3 dB bandwidth of the whole cascade, Hz.
    pub bandwidth: f64,
    pub order: u32,
}

impl LockIn {
    pub fn new(reference_frequency: f64, bandwidth: f64) -> Self {
        LockIn {
            reference_frequency,
            bandwidth,
            order: 4,
        }
    }

    pub fn with_order(mut self, order: u32) -> Self {
        self.order = order;
        self
    }

    /// Corner frequency of each stage such that the cascade is 3 dB down at
    /// `bandwidth`.
    pub fn stage_corner(&self) -> f64 {
        self.bandwidth / (2f64.powf(1.0 / self.order as f64) - 1.0).sqrt()
    }

    fn check(&self, sample_rate: f64) -> Result<()> {
        if self.order == 0 {
            return Err(Error::config("filter order must be at least 1"));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(Error::config("bandwidth must be positive"));
        }
        if !(self.reference_frequency.is_finite() && self.reference_frequency > 0.0) {
            return Err(Error::config("reference frequency must be positive"));
        }
        if self.bandwidth >= self.reference_frequency {
            return Err(Error::config(format!(
                "bandwidth {} Hz must be below the reference frequency {} Hz",
                self.bandwidth, self.reference_frequency
            )));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        if self.reference_frequency >= 0.5 * sample_rate {
            return Err(Error::config(format!(
                "reference {} Hz is above the Nyquist frequency {} Hz",
                self.reference_frequency,
                0.5 * sample_rate
            )));
        }
        Ok(())
    }

    /// Filters a signal sampled uniformly from `t0` at `sample_rate`.
    pub fn apply(&self, signal: &[f64], t0: f64, sample_rate: f64) -> Result<EnvelopeTrace> {
        self.check(sample_rate)?;
        let dt = 1.0 / sample_rate;
        let a = 1.0 - (-TWO_PI * self.stage_corner() * dt).exp();
        let w = TWO_PI * self.reference_frequency;
        let mut stages = vec![Complex64::new(0.0, 0.0); self.order as usize];
        let mut times = Vec::with_capacity(signal.len());
        let mut v = Vec::with_capacity(signal.len());
        for (k, &x) in signal.iter().enumerate() {
            let t = t0 + k as f64 * dt;
            let mut z = x * Complex64::from_polar(1.0, -w * t);
            for s in stages.iter_mut() {
                *s += a * (z - *s);
                z = *s;
            }
            times.push(t);
            v.push(z.norm());
        }
        Ok(EnvelopeTrace {
            times,
            v,
            bandwidth: self.bandwidth,
            reference_frequency: self.reference_frequency,
        })
    }

    /// Demodulates the chosen observable of a uniformly recorded trajectory.
    pub fn demodulate(
        &self,
        traj: &Trajectory,
        sys: &SystemParams,
        observable: &Observable,
    ) -> Result<EnvelopeTrace> {
        let fs = traj
            .sample_rate()
            .ok_or_else(|| Error::data("trajectory has fewer than two samples"))?;
        let signal = observable.signal(traj, sys)?;
        self.apply(&signal, traj.times[0], fs)
    }
}

/// Displacement envelope of `traj` with a 4th-order lock-in.
pub fn demodulate(
    traj: &Trajectory,
    sys: &SystemParams,
    f_ref: f64,
    bandwidth: f64,
) -> Result<EnvelopeTrace> {
    LockIn::new(f_ref, bandwidth).demodulate(traj, sys, &Observable::Displacement)
}

/// Dimensionless amplitude ξ = 2g₀|A|/ω_m of a displacement envelope, using
/// |A| = V/x_zpf.
pub fn xi_from_displacement_envelope(v: f64, sys: &SystemParams) -> Result<f64> {
    Ok(sys.xi_from_amplitude(v / sys.mech.x_zpf()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet() -> SystemParams {
        let mut sys = SystemParams::reference_defaults();
        sys.pump.power = 0.0;
        sys.probe.power = 0.0;
        sys
    }

    fn silent_cfg(sys: &SystemParams, duration: f64) -> SimulationConfig {
        SimulationConfig {
            thermal_noise: false,
            initial: InitialState::Fixed(Complex64::new(1.0, 0.0)),
            ..SimulationConfig::new(sys, duration)
        }
    }

    #[test]
    fn free_decay_matches_closed_form() {
        let sys = quiet();
        let w = sys.mech.omega_m;
        let mut cfg = silent_cfg(&sys, 10.0 * TWO_PI / w);
        cfg.dt = 1.0 / (200.0 * w);
        let traj = simulate_full(&sys, &cfg).unwrap();
        let l = Complex64::new(-sys.mech.gamma_m, -w);
        for (t, b) in traj.times.iter().zip(&traj.beta) {
            let exact = (l * *t).exp();
            assert!((b - exact).norm() < 1e-4 * exact.norm());
        }
    }

    #[test]
    fn driven_cavity_relaxes_to_e_over_kappa() {
        let mut sys = quiet();
        sys.probe.power = 1e-6;
        sys.probe.coupling = Some(0.0);
        sys.pump.coupling = Some(0.0);
        let cfg = silent_cfg(&sys, 40.0 / sys.probe.kappa());
        let traj = simulate_full(&sys, &cfg).unwrap();
        let expected = sys.drive_sq(Beam::Probe).sqrt() / sys.probe.kappa();
        let last = traj.alpha_pr.last().unwrap();
        assert!((last - expected).norm() < 1e-9 * expected);
    }

    #[test]
    fn step_limit_is_enforced() {
        let sys = SystemParams::reference_defaults();
        let mut cfg = SimulationConfig::new(&sys, 1e-3);
        cfg.dt *= 1.5;
        assert!(matches!(simulate_full(&sys, &cfg), Err(Error::Config(_))));
        cfg.dt = max_step(&sys);
        cfg.record_stride = 0;
        assert!(matches!(simulate_full(&sys, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn pump_switches_on_at_the_requested_time() {
        let sys = SystemParams::reference_defaults();
        let mut cfg = silent_cfg(&sys, 1e-4);
        cfg.pump_on_time = 5e-5;
        let traj = simulate_full(&sys, &cfg).unwrap();
        for (t, a) in traj.times.iter().zip(&traj.alpha_pm) {
            if *t <= cfg.pump_on_time {
                assert_eq!(a.norm(), 0.0);
            }
        }
        assert!(traj.alpha_pm.last().unwrap().norm() > 0.0);
    }

    #[test]
    fn overflow_is_reported_with_step() {
        let sys = quiet();
        let mut cfg = silent_cfg(&sys, 1e-5);
        cfg.initial = InitialState::Fixed(Complex64::new(f64::MAX, f64::MAX));
        match simulate_full(&sys, &cfg) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("step 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn noise_streams_are_reproducible() {
        let a = generate_noise(1000, 1e-8, 10.0, 7).unwrap();
        let b = generate_noise(1000, 1e-8, 10.0, 7).unwrap();
        let c = generate_noise(1000, 1e-8, 10.0, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.beta_in, c.beta_in);
        assert!(generate_noise(0, 1e-8, 1.0, 0).is_err());
    }

    #[test]
    fn seeded_simulation_uses_generated_noise() {
        let sys = SystemParams::reference_defaults();
        let mut cfg = SimulationConfig::new(&sys, 2e-5);
        cfg.optical_noise = true;
        cfg.seed = 11;
        let n = generate_noise(cfg.steps(), cfg.dt, sys.mech.n_bar().unwrap(), cfg.seed).unwrap();
        let a = simulate_full(&sys, &cfg).unwrap();
        let b = simulate_with_noise(&sys, &cfg, &n).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lock_in_halves_a_tone() {
        let fs = 1e6;
        let f = 50e3;
        let amp = 3.0;
        let signal: Vec<f64> = (0..200_000)
            .map(|k| amp * (TWO_PI * f * k as f64 / fs + 0.4).cos())
            .collect();
        let env = LockIn::new(f, 200.0).apply(&signal, 0.0, fs).unwrap();
        let settled = env.v.last().unwrap();
        assert!((settled - amp / 2.0).abs() < 1e-4 * amp);
    }

    #[test]
    fn cascade_is_three_db_down_at_bandwidth() {
        let fs = 1e6;
        let lock = LockIn::new(100e3, 500.0);
        let tone = |df: f64| {
            let signal: Vec<f64> = (0..400_000)
                .map(|k| (TWO_PI * (100e3 + df) * k as f64 / fs).cos())
                .collect();
            *lock.apply(&signal, 0.0, fs).unwrap().v.last().unwrap() * 2.0
        };
        let g = tone(500.0);
        assert!((g - 0.5f64.sqrt()).abs() < 0.01, "gain {g}");
    }

    #[test]
    fn lock_in_rejects_bad_settings() {
        let s = vec![0.0; 10];
        assert!(LockIn::new(100.0, 100.0).apply(&s, 0.0, 1e3).is_err());
        assert!(LockIn::new(600.0, 10.0).apply(&s, 0.0, 1e3).is_err());
        assert!(LockIn::new(100.0, 10.0)
            .with_order(0)
            .apply(&s, 0.0, 1e3)
            .is_err());
    }
}
