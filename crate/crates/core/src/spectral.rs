//! Frequency-domain calibration with a phase-modulation tone.
//!
//! A resonant probe reflected off the cavity carries sidebands at the
//! mechanical frequency ω_m (amplitude ξ = g₀·q/ω_m, q = √(2n̄) for thermal
//! motion) and at the tone frequency ω_b (modulation depth β). The ratio of
//! the two integrated peaks gives
//!
//! ```text
//! g₀ = (1/√(2n̄))·(β·ω_b/√2)·√(ΔV²_m/ΔV²_b)·𝒦
//! ```
//!
//! with the detection factor 𝒦 of the homodyne scheme.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::constants::TWO_PI;
use crate::error::{Error, Result};
use crate::special::{bessel_j, bessel_j_orders, default_truncation};

/// First zero of J₀.
pub const J0_FIRST_ZERO: f64 = 2.404_825_557_695_773;

/// Photodetection and amplification of the homodyne signal.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionChain {
    /// Photodiode sensitivity S in A/W.
    pub sensitivity: f64,
    /// Transimpedance gain g_T in V/A.
    pub transimpedance: f64,
    /// Local-oscillator power in W.
    pub lo_power: f64,
    /// Signal power in W.
    pub input_power: f64,
    /// Termination resistance R₀ in Ω.
    pub termination: f64,
}

impl Default for DetectionChain {
    /// A unit chain: every S₀ dependence cancels in the calibration ratio.
    fn default() -> Self {
        DetectionChain {
            sensitivity: 1.0,
            transimpedance: 1.0,
            lo_power: 1.0,
            input_power: 1.0,
            termination: 1.0,
        }
    }
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            self.sensitivity,
            self.transimpedance,
            self.lo_power,
            self.input_power,
            self.termination,
        ];
        if fields.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::domain("detection chain parameters must be positive"))
        }
    }

    /// Voltage per unit Im[ℛ], 2·g_T·S·√(P_lo·P_in).
    pub fn field_gain(&self) -> f64 {
        2.0 * self.transimpedance * self.sensitivity * (self.lo_power * self.input_power).sqrt()
    }

    /// 𝒮₀ = (2·g_T·S)²·P_lo·P_in/R₀.
    pub fn s0(&self) -> f64 {
        self.field_gain().powi(2) / self.termination
    }
}

/// Phase-modulation calibration tone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTone {
    /// Modulation depth in rad.
    pub beta: f64,
    /// Tone angular frequency in rad/s.
    pub omega_b: f64,
}

impl CalibrationTone {
    /// Depths above this are outside the small-β regime of the closed forms.
    pub const SMALL_BETA: f64 = 0.2;

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::domain("modulation depth must be positive"));
        }
        if !(self.omega_b.is_finite() && self.omega_b > 0.0) {
            return Err(Error::domain("tone frequency must be positive"));
        }
        Ok(())
    }

    pub fn is_small_signal(&self) -> bool {
        self.beta <= Self::SMALL_BETA
    }
}

/// Single-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpectrumRecord {
    /// Hz, strictly increasing.
    pub freqs: Vec<f64>,
    /// V²/Hz.
    pub psd: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl SpectrumRecord {
    pub fn new(freqs: Vec<f64>, psd: Vec<f64>) -> Result<Self> {
        let rec = SpectrumRecord {
            freqs,
            psd,
            metadata: BTreeMap::new(),
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.freqs.len() != self.psd.len() {
            return Err(Error::data("frequency and PSD columns differ in length"));
        }
        if self.freqs.len() < 2 {
            return Err(Error::data("spectrum needs at least two bins"));
        }
        if self.freqs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::data("frequencies must be strictly increasing"));
        }
        if let Some(k) = self.psd.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::data(format!(
                "PSD must be finite and non-negative (bin {k}: {})",
                self.psd[k]
            )));
        }
        Ok(())
    }

    /// Trapezoidal integral over the whole record.
    pub fn total_power(&self) -> f64 {
        self.freqs
            .windows(2)
            .zip(self.psd.windows(2))
            .map(|(f, p)| 0.5 * (p[0] + p[1]) * (f[1] - f[0]))
            .sum()
    }
}

/// Which approximation of the reflection sidebands to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SidebandModel {
    /// Full Bessel sums over the mechanical harmonics, lowest order in β.
    GeneralSum,
    /// Leading mechanical harmonic only, with exact J₀ and J₁.
    #[default]
    ClosedForm,
    /// Leading harmonic with J₀ → 1 and J₁(x) → x/2.
    Linearized,
}

/// Cavity and tone parameters shared by both sidebands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReflectionParams {
    pub detuning: f64,
    pub kappa: f64,
    pub kappa_in: f64,
    pub omega_m: f64,
}

impl ReflectionParams {
    fn validate(&self) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::domain("cavity linewidth must be positive"));
        }
        if !(self.kappa_in.is_finite() && self.kappa_in >= 0.0) {
            return Err(Error::domain("input coupling must be non-negative"));
        }
        if !(self.omega_m.is_finite() && self.omega_m > 0.0) {
            return Err(Error::domain("mechanical frequency must be positive"));
        }
        if !self.detuning.is_finite() {
            return Err(Error::domain("detuning must be finite"));
        }
        Ok(())
    }
}

fn check_amplitudes(xi: f64, beta: f64) -> Result<()> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::domain(format!("xi must be non-negative, got {xi}")));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::domain(format!(
            "beta must be non-negative, got {beta}"
        )));
    }
    Ok(())
}

fn j01(x: f64, model: SidebandModel) -> Result<(f64, f64)> {
    match model {
        SidebandModel::Linearized => Ok((1.0, 0.5 * x)),
        _ => Ok((bessel_j(0, x)?, bessel_j(1, x)?)),
    }
}

/// Signed Bessel values J_k(x) for |k| ≤ n.
struct Orders {
    pos: Vec<f64>,
}

impl Orders {
    fn new(x: f64, n: usize) -> Result<Self> {
        Ok(Orders {
            pos: bessel_j_orders(x, n)?,
        })
    }

    fn get(&self, k: i64) -> f64 {
        let v = self.pos[k.unsigned_abs() as usize];
        if k < 0 && k % 2 != 0 {
            -v
        } else {
            v
        }
    }
}

/// ℛ_±(ω_m), the reflection sidebands at the mechanical frequency.
pub fn reflection_sidebands_mech(
    xi: f64,
    beta: f64,
    p: &ReflectionParams,
    model: SidebandModel,
) -> Result<(Complex64, Complex64)> {
    check_amplitudes(xi, beta)?;
    p.validate()?;
    let carrier = match model {
        SidebandModel::Linearized => 1.0,
        _ => bessel_j(0, -beta)?,
    };
    let kin2 = 2.0 * p.kappa_in;
    match model {
        SidebandModel::GeneralSum => {
            let n = default_truncation(xi) as i64;
            let j = Orders::new(-xi, n as usize + 1)?;
            let mut plus = Complex64::new(0.0, 0.0);
            let mut minus = Complex64::new(0.0, 0.0);
            for k in -n..=n {
                let den = Complex64::new(p.kappa, k as f64 * p.omega_m - p.detuning);
                plus += j.get(k) * j.get(k - 1) / den;
                minus += j.get(k) * j.get(k + 1) / den;
            }
            Ok((carrier * kin2 * plus, carrier * kin2 * minus))
        }
        _ => {
            let (j0, j1) = j01(-xi, model)?;
            let c = Complex64::new(p.kappa, -p.detuning);
            let iw = Complex64::new(0.0, p.omega_m);
            let common = carrier * j0 * j1 * kin2 / c;
            Ok((common * (-iw / (iw + c)), common * (iw / (iw - c))))
        }
    }
}

/// ℛ_±(ω_b), the reflection sidebands at the calibration tone.
pub fn reflection_sidebands_cal(
    beta: f64,
    xi: f64,
    p: &ReflectionParams,
    omega_b: f64,
    model: SidebandModel,
) -> Result<(Complex64, Complex64)> {
    check_amplitudes(xi, beta)?;
    p.validate()?;
    if !(omega_b.is_finite() && omega_b > 0.0) {
        return Err(Error::domain("tone frequency must be positive"));
    }
    let kin2 = 2.0 * p.kappa_in;
    let one = Complex64::new(1.0, 0.0);
    let bracket = |sign: f64| -> Result<Complex64> {
        match model {
            SidebandModel::GeneralSum => {
                let n = default_truncation(xi) as i64;
                let j = Orders::new(-xi, n as usize)?;
                let mut acc = Complex64::new(0.0, 0.0);
                for k in -n..=n {
                    let den =
                        Complex64::new(p.kappa, k as f64 * p.omega_m + sign * omega_b - p.detuning);
                    acc += j.get(k).powi(2) / den;
                }
                Ok(-one + kin2 * acc)
            }
            _ => {
                let (j0, _) = j01(-xi, model)?;
                let den = Complex64::new(p.kappa, sign * omega_b - p.detuning);
                Ok(-one + kin2 * j0 * j0 / den)
            }
        }
    };
    let (jp, jm) = match model {
        SidebandModel::Linearized => (0.5 * beta, -0.5 * beta),
        _ => (bessel_j(1, beta)?, bessel_j(-1, beta)?),
    };
    Ok((jp * bracket(1.0)?, jm * bracket(-1.0)?))
}

/// (𝒮₀/4)·|ℛ₊ − ℛ₋*|², the spectral weight of one pair of sidebands.
pub fn homodyne_psd_peak(
    r_plus: Complex64,
    r_minus: Complex64,
    chain: &DetectionChain,
) -> Result<f64> {
    chain.validate()?;
    Ok(chain.s0() / 4.0 * (r_plus - r_minus.conj()).norm_sqr())
}

/// Detection factor 𝒦 of the homodyne scheme:
/// √2·(κ/2κ_in)·√(1 + (κ − 2κ_in)²/ω_b²)·√((κ² + ω_m²)/(κ² + ω_b²)).
pub fn detection_factor(kappa: f64, kappa_in: f64, omega_m: f64, omega_b: f64) -> Result<f64> {
    if [kappa, kappa_in, omega_m, omega_b]
        .iter()
        .any(|v| !(v.is_finite() && *v > 0.0))
    {
        return Err(Error::domain("detection-factor arguments must be positive"));
    }
    let k2 = kappa * kappa;
    Ok(2f64.sqrt()
        * (kappa / (2.0 * kappa_in))
        * (1.0 + (kappa - 2.0 * kappa_in).powi(2) / (omega_b * omega_b)).sqrt()
        * ((k2 + omega_m * omega_m) / (k2 + omega_b * omega_b)).sqrt())
}

/// g₀ from the mechanical and tone peak areas.
pub fn g0_from_calibration(
    dv2_m: f64,
    dv2_b: f64,
    tone: &CalibrationTone,
    n_bar: f64,
    k: f64,
) -> Result<f64> {
    tone.validate()?;
    for (name, v) in [
        ("dV2_m", dv2_m),
        ("dV2_b", dv2_b),
        ("n_bar", n_bar),
        ("K", k),
    ] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::domain(format!("{name} must be positive, got {v}")));
        }
    }
    Ok(
        (tone.beta * tone.omega_b / 2f64.sqrt()) * (dv2_m / dv2_b).sqrt() * k
            / (2.0 * n_bar).sqrt(),
    )
}

/// Resonant-probe, small-signal prediction of √(ΔV²_m/ΔV²_b).
pub fn calibration_ratio_closed_form(
    g0: f64,
    n_bar: f64,
    tone: &CalibrationTone,
    kappa: f64,
    kappa_in: f64,
    omega_m: f64,
) -> Result<f64> {
    tone.validate()?;
    let w = tone.omega_b;
    let k = detection_factor(kappa, kappa_in, omega_m, w)?;
    // 𝒦 contains the remaining cavity factors
    Ok(g0 * (2.0 * n_bar).sqrt() / (tone.beta * w) * 2f64.sqrt() / k)
}

/// ξ of thermal motion, g₀·√(2n̄)/ω_m.
pub fn thermal_xi(g0: f64, n_bar: f64, omega_m: f64) -> f64 {
    g0 * (2.0 * n_bar).sqrt() / omega_m
}

/// Integrated weights (ΔV²_m, ΔV²_b) of the mechanical and tone peaks,
/// R₀·(𝒮₀/4)·|ℛ₊ − ℛ₋*|² at ω_m and ω_b.
pub fn peak_areas(
    xi: f64,
    tone: &CalibrationTone,
    p: &ReflectionParams,
    chain: &DetectionChain,
    model: SidebandModel,
) -> Result<(f64, f64)> {
    tone.validate()?;
    let (mp, mm) = reflection_sidebands_mech(xi, tone.beta, p, model)?;
    let (bp, bm) = reflection_sidebands_cal(tone.beta, xi, p, tone.omega_b, model)?;
    Ok((
        chain.termination * homodyne_psd_peak(mp, mm, chain)?,
        chain.termination * homodyne_psd_peak(bp, bm, chain)?,
    ))
}

/// J₁(β)/J₀(β).
pub fn bessel_ratio(beta: f64) -> Result<f64> {
    Ok(bessel_j(1, beta)? / bessel_j(0, beta)?)
}

/// Inverts J₁(β)/J₀(β) = ratio for β ∈ [0, j₀,₁).
pub fn modulation_depth_from_ratio(ratio: f64) -> Result<f64> {
    if !(ratio.is_finite() && ratio >= 0.0) {
        return Err(Error::domain(format!(
            "sideband-to-carrier ratio must be finite and non-negative, got {ratio}"
        )));
    }
    if ratio == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, J0_FIRST_ZERO);
    let mut b = (2.0 * ratio).min(0.5 * J0_FIRST_ZERO);
    for _ in 0..200 {
        let r = bessel_ratio(b)?;
        let f = r - ratio;
        if f > 0.0 {
            hi = b;
        } else {
            lo = b;
        }
        // d/dβ (J₁/J₀) = 1 − r/β + r²
        let d = 1.0 - r / b + r * r;
        let mut next = b - f / d;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - b).abs() <= 1e-12 * next.max(1e-300) || hi - lo <= 1e-15 {
            return Ok(next);
        }
        b = next;
    }
    Err(Error::numeric(format!(
        "modulation depth did not converge for ratio {ratio}"
    )))
}

/// Background-subtracted area of the single peak inside `band` (Hz), with
/// straight lines fitted to the first and last `plateau_fraction` of the
/// cumulative integral and their offset taken at the peak maximum.
pub fn integrated_area_with(
    rec: &SpectrumRecord,
    band: (f64, f64),
    plateau_fraction: f64,
) -> Result<f64> {
    rec.validate()?;
    let (f_lo, f_hi) = band;
    if !(f_lo < f_hi) {
        return Err(Error::domain("band must satisfy f_lo < f_hi"));
    }
    if !(plateau_fraction > 0.0 && plateau_fraction < 0.5) {
        return Err(Error::domain("plateau fraction must lie in (0, 0.5)"));
    }
    let first = *rec.freqs.first().unwrap_or(&f64::NAN);
    let last = *rec.freqs.last().unwrap_or(&f64::NAN);
    if f_lo < first || f_hi > last {
        return Err(Error::domain(format!(
            "band [{f_lo}, {f_hi}] Hz exceeds the record [{first}, {last}] Hz"
        )));
    }
    let a = rec.freqs.partition_point(|&f| f < f_lo);
    let b = rec.freqs.partition_point(|&f| f <= f_hi);
    let f = &rec.freqs[a..b];
    let p = &rec.psd[a..b];
    let n = f.len();
    let seg = ((n as f64 * plateau_fraction).round() as usize).max(2);
    if 2 * seg + 1 > n {
        return Err(Error::data(format!("only {n} bins inside the band")));
    }
    let mut cum = Vec::with_capacity(n);
    cum.push(0.0);
    for k in 1..n {
        cum.push(cum[k - 1] + 0.5 * (p[k] + p[k - 1]) * (f[k] - f[k - 1]));
    }
    let peak = p
        .iter()
        .enumerate()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(k, _)| f[k])
        .ok_or_else(|| Error::data("empty band"))?;
    let (s0, c0) = line_fit(&f[..seg], &cum[..seg]);
    let (s1, c1) = line_fit(&f[n - seg..], &cum[n - seg..]);
    Ok((c1 + s1 * peak) - (c0 + s0 * peak))
}

/// [`integrated_area_with`] using 20% plateaus.
pub fn integrated_area(rec: &SpectrumRecord, band: (f64, f64)) -> Result<f64> {
    integrated_area_with(rec, band, 0.2)
}

/// Ordinary least squares y = slope·x + intercept.
fn line_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (slope, my - slope * mx)
}

/// Welch estimate with a periodic Hann window, normalized so that the
/// integral of the PSD equals the window-weighted mean square.
pub fn welch_psd(
    trace: &[f64],
    sample_rate: f64,
    segment_length: usize,
    overlap: f64,
) -> Result<SpectrumRecord> {
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(Error::domain("sample rate must be positive"));
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::domain("overlap must lie in [0, 1)"));
    }
    if segment_length < 2 {
        return Err(Error::data("segments need at least two samples"));
    }
    if trace.len() < segment_length {
        return Err(Error::data(format!(
            "trace of {} samples is shorter than one segment of {segment_length}",
            trace.len()
        )));
    }
    let n = segment_length;
    let hop = ((n as f64 * (1.0 - overlap)).round() as usize).max(1);
    let window: Vec<f64> = (0..n)
        .map(|k| 0.5 - 0.5 * (TWO_PI * k as f64 / n as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut segments = 0usize;
    let mut start = 0;
    while start + n <= trace.len() {
        for (b, (x, w)) in buf
            .iter_mut()
            .zip(trace[start..start + n].iter().zip(&window))
        {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, z) in acc.iter_mut().zip(&buf) {
            *a += z.norm_sqr();
        }
        segments += 1;
        start += hop;
    }
    let scale = 1.0 / (sample_rate * wss * segments as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, a)| {
            let one_sided = if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
                1.0
            } else {
                2.0
            };
            a * scale * one_sided
        })
        .collect();
    let freqs = (0..bins)
        .map(|k| k as f64 * sample_rate / n as f64)
        .collect();
    let mut rec = SpectrumRecord {
        freqs,
        psd,
        metadata: BTreeMap::new(),
    };
    rec.metadata
        .insert("sample_rate_Hz".into(), sample_rate.to_string());
    rec.metadata.insert("segment_length".into(), n.to_string());
    rec.metadata.insert("overlap".into(), overlap.to_string());
    rec.metadata.insert("segments".into(), segments.to_string());
    rec.metadata.insert("window".into(), "hann".into());
    Ok(rec)
}

/// A Lorentzian line of given area.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralLine {
    pub center_hz: f64,
    /// V².
    pub area: f64,
    pub hwhm_hz: f64,
}

impl SpectralLine {
    pub fn density(&self, f: f64) -> f64 {
        let g = self.hwhm_hz;
        self.area * g / std::f64::consts::PI / ((f - self.center_hz).powi(2) + g * g)
    }
}

/// Sum of Lorentzian lines on a flat background (V²/Hz) sampled at `freqs`.
pub fn synthesize_spectrum(
    freqs: &[f64],
    lines: &[SpectralLine],
    background: f64,
) -> Result<SpectrumRecord> {
    if !(background.is_finite() && background >= 0.0) {
        return Err(Error::domain("background must be non-negative"));
    }
    if lines
        .iter()
        .any(|l| !(l.area >= 0.0 && l.hwhm_hz > 0.0 && l.center_hz.is_finite()))
    {
        return Err(Error::domain(
            "lines need non-negative areas and positive widths",
        ));
    }
    let psd = freqs
        .iter()
        .map(|&f| background + lines.iter().map(|l| l.density(f)).sum::<f64>())
        .collect();
    SpectrumRecord::new(freqs.to_vec(), psd)
}

/// Synthetic calibration spectrum and the bands that isolate its two peaks.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSpectrum {
    pub record: SpectrumRecord,
    /// Injected mechanical peak area, V².
    pub dv2_m: f64,
    /// Injected tone peak area, V².
    pub dv2_b: f64,
    pub mech_band: (f64, f64),
    pub tone_band: (f64, f64),
}

/// Shape of a synthetic calibration spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumLayout {
    /// Half width of the mechanical line, Hz.
    pub mech_hwhm_hz: f64,
    /// Half width of the tone line, Hz.
    pub tone_hwhm_hz: f64,
    /// Band half width in units of each line's half width.
    pub band_halfwidths: f64,
    /// Bins per line half width.
    pub bins_per_halfwidth: f64,
    /// Flat background relative to the mechanical peak density.
    pub relative_background: f64,
}

impl Default for SpectrumLayout {
    fn default() -> Self {
        SpectrumLayout {
            mech_hwhm_hz: 1.64,
            tone_hwhm_hz: 0.5,
            band_halfwidths: 200.0,
            bins_per_halfwidth: 5.0,
            relative_background: 1e-3,
        }
    }
}

/// Mechanical and tone peaks with the areas predicted by the reflection
/// model for thermal motion of coupling `g0`, as Lorentzians on a flat
/// background.
pub fn forward_calibration_spectrum(
    g0: f64,
    n_bar: f64,
    tone: &CalibrationTone,
    p: &ReflectionParams,
    chain: &DetectionChain,
    model: SidebandModel,
    layout: &SpectrumLayout,
) -> Result<ForwardSpectrum> {
    if !(g0.is_finite() && g0 > 0.0 && n_bar.is_finite() && n_bar > 0.0) {
        return Err(Error::domain("g0 and n_bar must be positive"));
    }
    let xi = thermal_xi(g0, n_bar, p.omega_m);
    let (dv2_m, dv2_b) = peak_areas(xi, tone, p, chain, model)?;
    let mech = SpectralLine {
        center_hz: p.omega_m / TWO_PI,
        area: dv2_m,
        hwhm_hz: layout.mech_hwhm_hz,
    };
    let cal = SpectralLine {
        center_hz: tone.omega_b / TWO_PI,
        area: dv2_b,
        hwhm_hz: layout.tone_hwhm_hz,
    };
    let band = |l: &SpectralLine| {
        let w = layout.band_halfwidths * l.hwhm_hz;
        (l.center_hz - w, l.center_hz + w)
    };
    let (mech_band, tone_band) = (band(&mech), band(&cal));
    let mut freqs = Vec::new();
    for (line, (lo, hi)) in [(&mech, mech_band), (&cal, tone_band)] {
        let df = line.hwhm_hz / layout.bins_per_halfwidth;
        let n = ((hi - lo) / df).round() as usize;
        freqs.extend((0..=n).map(|k| lo + k as f64 * df));
    }
    freqs.sort_by(f64::total_cmp);
    freqs.dedup();
    let background = layout.relative_background * mech.density(mech.center_hz);
    let record = synthesize_spectrum(&freqs, &[mech, cal], background)?;
    Ok(ForwardSpectrum {
        record,
        dv2_m,
        dv2_b,
        mech_band,
        tone_band,
    })
}
