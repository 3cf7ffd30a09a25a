//! Slope-method estimation of g₀: maximum rise slopes from envelope traces,
//! the Levenberg–Marquardt fit of slope against pump power, the linear
//! threshold fit, and the thermal displacement calibration.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::amplitude::SlopeModel;
use crate::error::{Error, Result};
use crate::langevin::EnvelopeTrace;
use crate::model::SystemParams;

/// One point of a slope-versus-power dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeMeasurement {
    /// Effective pump power, W.
    pub pump_power: f64,
    /// Maximum rise slope of the envelope, signal units per second.
    pub max_slope: f64,
    pub uncertainty: Option<f64>,
    pub trace_id: String,
}

impl SlopeMeasurement {
    pub fn new(pump_power: f64, max_slope: f64) -> Self {
        SlopeMeasurement {
            pump_power,
            max_slope,
            uncertainty: None,
            trace_id: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pump_power.is_finite() && self.pump_power > 0.0) {
            return Err(Error::data(format!(
                "pump power must be positive, got {}",
                self.pump_power
            )));
        }
        if !(self.max_slope.is_finite() && self.max_slope >= 0.0) {
            return Err(Error::data(format!(
                "slope must be non-negative, got {}",
                self.max_slope
            )));
        }
        if let Some(u) = self.uncertainty {
            if !(u.is_finite() && u > 0.0) {
                return Err(Error::data(format!(
                    "uncertainty must be positive, got {u}"
                )));
            }
        }
        Ok(())
    }
}

/// Settings for [`extract_max_slope`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeExtraction {
    /// Fit window in seconds; `None` uses `window_fraction` of the rise.
    pub window: Option<f64>,
    /// Fraction of the trace at each end used for the plateau medians.
    pub plateau_fraction: f64,
    /// Minimum final/initial plateau ratio that counts as a rise.
    pub rise_ratio: f64,
    pub low_level: f64,
    pub high_level: f64,
    pub window_fraction: f64,
    pub min_window: usize,
    /// Fit ln V instead of V.
    pub log_scale: bool,
}

impl Default for SlopeExtraction {
    fn default() -> Self {
        SlopeExtraction {
            window: None,
            plateau_fraction: 0.05,
            rise_ratio: 3.0,
            low_level: 0.1,
            high_level: 0.9,
            window_fraction: 0.05,
            min_window: 10,
            log_scale: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiseSlope {
    pub slope: f64,
    pub std_error: f64,
    /// Centre of the steepest window, s.
    pub time: f64,
    pub window_samples: usize,
    /// Crossing times of the low and high levels, s.
    pub t_low: f64,
    pub t_high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SlopeOutcome {
    Rise(RiseSlope),
    /// The trace never left its initial plateau.
    NoRise {
        initial: f64,
        final_level: f64,
    },
}

impl SlopeOutcome {
    pub fn rise(&self) -> Option<&RiseSlope> {
        match self {
            SlopeOutcome::Rise(r) => Some(r),
            SlopeOutcome::NoRise { .. } => None,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn uniform_step(times: &[f64]) -> Result<f64> {
    let n = times.len();
    let dt = (times[n - 1] - times[0]) / (n - 1) as f64;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::data("envelope times must increase"));
    }
    let irregular = times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-6 * dt);
    if irregular {
        return Err(Error::data("envelope must be uniformly sampled"));
    }
    Ok(dt)
}

/// Running sums for straight-line fits over a sliding window of fixed width.
struct SlidingLine<'a> {
    y: &'a [f64],
    w: usize,
    start: usize,
    sum_y: f64,
    sum_ky: f64,
    sum_yy: f64,
}

impl<'a> SlidingLine<'a> {
    fn new(y: &'a [f64], w: usize, start: usize) -> Self {
        let mut s = SlidingLine {
            y,
            w,
            start,
            sum_y: 0.0,
            sum_ky: 0.0,
            sum_yy: 0.0,
        };
        s.refresh();
        s
    }

    fn refresh(&mut self) {
        let win = &self.y[self.start..self.start + self.w];
        self.sum_y = win.iter().sum();
        self.sum_ky = win.iter().enumerate().map(|(j, v)| j as f64 * v).sum();
        self.sum_yy = win.iter().map(|v| v * v).sum();
    }

    fn advance(&mut self) {
        let out = self.y[self.start];
        let inc = self.y[self.start + self.w];
        // local indices shift down by one
        self.sum_ky += -(self.sum_y - out) + (self.w - 1) as f64 * inc;
        self.sum_y += inc - out;
        self.sum_yy += inc * inc - out * out;
        self.start += 1;
    }

    /// (slope per sample, residual sum of squares)
    fn fit(&self) -> (f64, f64) {
        let w = self.w as f64;
        let c = (w - 1.0) / 2.0;
        let sxx = w * (w * w - 1.0) / 12.0;
        let sxy = self.sum_ky - c * self.sum_y;
        let syy = self.sum_yy - self.sum_y * self.sum_y / w;
        let b = sxy / sxx;
        (b, (syy - b * sxy).max(0.0))
    }
}

/// Two-pass centred line fit: (slope per sample, residual sum of squares).
fn direct_fit(y: &[f64]) -> (f64, f64) {
    let w = y.len() as f64;
    let c = (w - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / w;
    let sxx = w * (w * w - 1.0) / 12.0;
    let sxy: f64 = y
        .iter()
        .enumerate()
        .map(|(j, v)| (j as f64 - c) * (v - ym))
        .sum();
    let b = sxy / sxx;
    let rss = y
        .iter()
        .enumerate()
        .map(|(j, v)| (v - ym - b * (j as f64 - c)).powi(2))
        .sum();
    (b, rss)
}

/// Steepest sliding-window least-squares slope during the rise of `env`.
pub fn extract_max_slope(env: &EnvelopeTrace, opts: &SlopeExtraction) -> Result<SlopeOutcome> {
    let n = env.len();
    if n < 2 * opts.min_window.max(10) {
        return Err(Error::data(format!("envelope too short ({n} samples)")));
    }
    if env.v.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("envelope contains non-finite samples"));
    }
    let dt = uniform_step(&env.times)?;
    let edge = ((opts.plateau_fraction * n as f64).round() as usize).max(1);
    let initial = median(&env.v[..edge]);
    let final_level = median(&env.v[n - edge..]);
    if !(final_level > opts.rise_ratio * initial.max(0.0)) || final_level <= 0.0 {
        return Ok(SlopeOutcome::NoRise {
            initial,
            final_level,
        });
    }

    let span = final_level - initial;
    let low = initial + opts.low_level * span;
    let high = initial + opts.high_level * span;
    let Some(i_high) = env.v.iter().position(|&v| v >= high) else {
        return Ok(SlopeOutcome::NoRise {
            initial,
            final_level,
        });
    };
    let i_low = env.v[..i_high]
        .iter()
        .rposition(|&v| v < low)
        .map_or(0, |i| i + 1);

    let w = match opts.window {
        Some(t) => {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::domain(format!("window must be positive, got {t}")));
            }
            let w = (t / dt).round() as usize;
            if w < opts.min_window.max(3) {
                return Err(Error::domain(format!(
                    "window of {w} samples is below the minimum of {}",
                    opts.min_window
                )));
            }
            w
        }
        None => ((opts.window_fraction * (i_high - i_low) as f64).round() as usize)
            .max(opts.min_window.max(3)),
    }
    .min(n);

    let y: Vec<f64> = if opts.log_scale {
        if env.v.iter().any(|&v| v <= 0.0) {
            return Err(Error::data(
                "log-scale extraction needs a positive envelope",
            ));
        }
        env.v.iter().map(|v| v.ln()).collect()
    } else {
        env.v.iter().map(|v| v - initial).collect()
    };

    let half = (w - 1) / 2;
    let first = i_low.saturating_sub(half).min(n - w);
    let last = i_high.saturating_sub(half).min(n - w).max(first);
    let mut line = SlidingLine::new(&y, w, first);
    let mut best = (f64::NEG_INFINITY, first);
    loop {
        let (b, _) = line.fit();
        if b > best.0 {
            best = (b, line.start);
        }
        if line.start >= last {
            break;
        }
        line.advance();
        if (line.start - first).is_multiple_of(4096) {
            line.refresh();
        }
    }
    let start = best.1;
    let (b, rss) = direct_fit(&y[start..start + w]);
    let wf = w as f64;
    let sxx = wf * (wf * wf - 1.0) / 12.0;
    let se = if w > 2 {
        (rss / (wf - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    Ok(SlopeOutcome::Rise(RiseSlope {
        slope: b / dt,
        std_error: se / dt,
        time: env.times[start] + (wf - 1.0) / 2.0 * dt,
        window_samples: w,
        t_low: env.times[i_low],
        t_high: env.times[i_high],
    }))
}

/// Result of [`fit_slope_power`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    /// rad/s.
    pub g0: f64,
    /// Transduction constant in slope units.
    pub a: f64,
    /// Covariance of (g₀, a); the g₀ row and column vanish when g₀ was held fixed.
    pub covariance: [[f64; 2]; 2],
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl FitResult {
    pub fn g0_std(&self) -> f64 {
        self.covariance[0][0].max(0.0).sqrt()
    }

    pub fn a_std(&self) -> f64 {
        self.covariance[1][1].max(0.0).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub g0_init: Option<f64>,
    /// Hold g₀ at this value and fit `a` only.
    pub fixed_g0: Option<f64>,
    pub lambda0: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            g0_init: None,
            fixed_g0: None,
            lambda0: 1e-3,
            tolerance: 1e-8,
            max_iterations: 200,
        }
    }
}

/// S_mx(P; g₀) and ∂S_mx/∂g₀ at each pump power; zero below threshold.
pub fn max_slope_with_derivative(
    sys: &SystemParams,
    powers: &[f64],
    g0: f64,
) -> Result<Vec<(f64, f64)>> {
    let exact_envelope = sys.static_shift.norm() == 0.0;
    powers
        .par_iter()
        .map(|&p| {
            let s = sys.clone().with_pump_power(p).with_g0(g0);
            let Some(mx) = SlopeModel::new(&s)?.max_slope_point()? else {
                return Ok((0.0, 0.0));
            };
            let d = if exact_envelope {
                // the slope function depends on g₀ only through α ∝ g₀²
                2.0 / g0 * (mx.s_mx + mx.xi_mx)
            } else {
                let h = 1e-6 * g0;
                let at = |g: f64| -> Result<f64> {
                    let s = sys.clone().with_pump_power(p).with_g0(g);
                    Ok(SlopeModel::new(&s)?
                        .max_slope_point()?
                        .map_or(0.0, |m| m.s_mx))
                };
                (at(g0 + h)? - at(g0 - h)?) / (2.0 * h)
            };
            Ok((mx.s_mx, d))
        })
        .collect()
}

fn weights(data: &[SlopeMeasurement]) -> (Vec<f64>, bool) {
    if data.iter().all(|d| d.uncertainty.is_some()) {
        (data.iter().map(|d| d.uncertainty.unwrap()).collect(), true)
    } else {
        (vec![1.0; data.len()], false)
    }
}

struct Problem<'a> {
    sys: &'a SystemParams,
    powers: Vec<f64>,
    y: Vec<f64>,
    sigma: Vec<f64>,
}

impl Problem<'_> {
    /// Weighted residuals and Jacobian of the model a·S_mx(P; g₀).
    fn evaluate(&self, g0: f64, a: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let m = max_slope_with_derivative(self.sys, &self.powers, g0)?;
        let n = self.y.len();
        let mut r = DVector::zeros(n);
        let mut j = DMatrix::zeros(n, 2);
        for k in 0..n {
            let (s, ds) = m[k];
            r[k] = (self.y[k] - a * s) / self.sigma[k];
            j[(k, 0)] = a * ds / self.sigma[k];
            j[(k, 1)] = s / self.sigma[k];
        }
        Ok((r, j))
    }

    fn chi2(&self, g0: f64, a: f64) -> Result<f64> {
        let m = max_slope_with_derivative(self.sys, &self.powers, g0)?;
        Ok(m.iter()
            .zip(self.y.iter().zip(&self.sigma))
            .map(|(&(s, _), (y, sg))| ((y - a * s) / sg).powi(2))
            .sum())
    }

    fn best_a(&self, g0: f64) -> Result<f64> {
        let m = max_slope_with_derivative(self.sys, &self.powers, g0)?;
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &(s, _)) in m.iter().enumerate() {
            let w = self.sigma[k].powi(-2);
            num += w * s * self.y[k];
            den += w * s * s;
        }
        Ok(if den > 0.0 { num / den } else { 0.0 })
    }
}

/// Levenberg–Marquardt fit of slope_k = a·S_mx(P_k; g₀) over (g₀, a).
///
/// `sys` supplies every parameter except g₀. Points without uncertainties are
/// weighted equally and the covariance is then scaled by the reduced χ².
pub fn fit_slope_power(
    data: &[SlopeMeasurement],
    sys: &SystemParams,
    opts: &FitOptions,
) -> Result<FitResult> {
    for d in data {
        d.validate()?;
    }
    let free_g0 = opts.fixed_g0.is_none();
    let n_par = if free_g0 { 2 } else { 1 };
    let rising = data.iter().filter(|d| d.max_slope > 0.0).count();
    if rising < n_par {
        return Err(Error::BelowThreshold(format!(
            "{rising} of {} points show a rise",
            data.len()
        )));
    }
    if data.len() < n_par + 1 {
        return Err(Error::data(format!(
            "need at least {} points, got {}",
            n_par + 1,
            data.len()
        )));
    }
    let (sigma, weighted) = weights(data);
    let problem = Problem {
        sys,
        powers: data.iter().map(|d| d.pump_power).collect(),
        y: data.iter().map(|d| d.max_slope).collect(),
        sigma,
    };

    let mut g0 = match opts.fixed_g0 {
        Some(g) if g.is_finite() && g > 0.0 => g,
        Some(g) => return Err(Error::domain(format!("fixed g0 must be positive, got {g}"))),
        None => initial_g0(data, sys, opts)?,
    };
    if free_g0 {
        // raise the guess until some point is above threshold
        let mut tries = 0;
        while max_slope_with_derivative(sys, &problem.powers, g0)?
            .iter()
            .all(|&(s, _)| s == 0.0)
        {
            g0 *= 1.5;
            tries += 1;
            if tries > 60 {
                return Err(Error::BelowThreshold(
                    "no coupling puts the data above threshold".into(),
                ));
            }
        }
    }
    let mut a = problem.best_a(g0)?;
    if !(a > 0.0) {
        return Err(Error::BelowThreshold(format!(
            "the model predicts no rise at g0 = {g0:e}"
        )));
    }

    let mut lambda = opts.lambda0;
    let mut chi2 = problem.chi2(g0, a)?;
    let mut converged = chi2 == 0.0;
    let mut iterations = 0;
    let (mut r, mut j) = problem.evaluate(g0, a)?;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let jr = if free_g0 {
            j.clone()
        } else {
            j.columns(1, 1).into_owned()
        };
        let jtj = jr.transpose() * &jr;
        let jtr = jr.transpose() * &r;
        let mut accepted = false;
        while lambda < 1e20 {
            let mut lhs = jtj.clone();
            for i in 0..n_par {
                lhs[(i, i)] += lambda * jtj[(i, i)].max(f64::MIN_POSITIVE);
            }
            let Some(step) = lhs.cholesky().map(|c| c.solve(&jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let (ng, na) = if free_g0 {
                (g0 + step[0], a + step[1])
            } else {
                (g0, a + step[0])
            };
            if !(ng > 0.0 && na > 0.0 && ng.is_finite() && na.is_finite()) {
                lambda *= 10.0;
                continue;
            }
            let trial = problem.chi2(ng, na)?;
            if trial <= chi2 {
                let small = (ng - g0).abs() <= opts.tolerance * g0.abs()
                    && (na - a).abs() <= opts.tolerance * a.abs();
                g0 = ng;
                a = na;
                chi2 = trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                converged = small || chi2 == 0.0;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no downhill step left at any damping: a stationary point
            converged = true;
        }
        (r, j) = problem.evaluate(g0, a)?;
    }

    let jr = if free_g0 {
        j.clone()
    } else {
        j.columns(1, 1).into_owned()
    };
    let dof = data.len() as f64 - n_par as f64;
    let scale = if weighted { 1.0 } else { chi2 / dof };
    let inv = (jr.transpose() * &jr)
        .try_inverse()
        .ok_or_else(|| Error::numeric("singular normal matrix at the solution"))?;
    let mut covariance = [[0.0; 2]; 2];
    if free_g0 {
        for p in 0..2 {
            for q in 0..2 {
                covariance[p][q] = scale * 0.5 * (inv[(p, q)] + inv[(q, p)]);
            }
        }
    } else {
        covariance[1][1] = scale * inv[(0, 0)];
    }
    Ok(FitResult {
        g0,
        a,
        covariance,
        chi2,
        iterations,
        converged,
    })
}

fn initial_g0(data: &[SlopeMeasurement], sys: &SystemParams, opts: &FitOptions) -> Result<f64> {
    if let Some(g) = opts.g0_init {
        if g.is_finite() && g > 0.0 {
            return Ok(g);
        }
        return Err(Error::domain(format!(
            "initial g0 must be positive, got {g}"
        )));
    }
    let from_line = fit_threshold_linear(data)
        .ok()
        .and_then(|t| crate::amplitude::g0_from_threshold(t.p_th, sys).ok());
    Ok(from_line.unwrap_or(sys.g0))
}

/// Straight-line fit slope = c·(P − P_th) through the rising points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearThreshold {
    /// W.
    pub p_th: f64,
    /// `None` when the points determine the line exactly and carry no uncertainties.
    pub std_error: Option<f64>,
    pub c: f64,
}

pub fn fit_threshold_linear(data: &[SlopeMeasurement]) -> Result<LinearThreshold> {
    for d in data {
        d.validate()?;
    }
    let pts: Vec<&SlopeMeasurement> = data.iter().filter(|d| d.max_slope > 0.0).collect();
    if pts.len() < 2 {
        return Err(Error::BelowThreshold(format!(
            "{} rising points, at least 2 needed",
            pts.len()
        )));
    }
    let weighted = pts.iter().all(|d| d.uncertainty.is_some());
    let w: Vec<f64> = pts
        .iter()
        .map(|d| {
            if weighted {
                d.uncertainty.unwrap().powi(-2)
            } else {
                1.0
            }
        })
        .collect();
    let sw: f64 = w.iter().sum();
    let xm = pts
        .iter()
        .zip(&w)
        .map(|(d, w)| w * d.pump_power)
        .sum::<f64>()
        / sw;
    let ym = pts
        .iter()
        .zip(&w)
        .map(|(d, w)| w * d.max_slope)
        .sum::<f64>()
        / sw;
    let sxx: f64 = pts
        .iter()
        .zip(&w)
        .map(|(d, w)| w * (d.pump_power - xm).powi(2))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::data("rising points share a single power"));
    }
    let sxy: f64 = pts
        .iter()
        .zip(&w)
        .map(|(d, w)| w * (d.pump_power - xm) * (d.max_slope - ym))
        .sum();
    let c = sxy / sxx;
    if !(c > 0.0) {
        return Err(Error::data(format!(
            "fitted slope must be positive, got {c:e}"
        )));
    }
    let p_th = xm - ym / c;

    let n = pts.len();
    let chi2: f64 = pts
        .iter()
        .zip(&w)
        .map(|(d, w)| w * (d.max_slope - ym - c * (d.pump_power - xm)).powi(2))
        .sum();
    let s2 = if weighted {
        Some(1.0)
    } else if n > 2 {
        Some(chi2 / (n - 2) as f64)
    } else {
        None
    };
    // P_th = x̄ − ȳ/c with x̄ fixed; ȳ and c are uncorrelated about the weighted mean
    let std_error = s2.map(|s2| {
        let var_ym = s2 / sw;
        let var_c = s2 / sxx;
        (var_ym / (c * c) + ym * ym * var_c / c.powi(4)).sqrt()
    });
    Ok(LinearThreshold { p_th, std_error, c })
}

/// Meters per signal unit from a pump-off thermal envelope segment:
/// √(2n̄)·x_zpf / RMS(V).
pub fn displacement_calibration(env: &EnvelopeTrace, n_bar: f64, x_zpf: f64) -> Result<f64> {
    if !(n_bar.is_finite() && n_bar > 0.0) {
        return Err(Error::domain(format!(
            "occupation must be positive, got {n_bar}"
        )));
    }
    if !(x_zpf.is_finite() && x_zpf > 0.0) {
        return Err(Error::domain(format!(
            "x_zpf must be positive, got {x_zpf}"
        )));
    }
    let n = env.len();
    if n < 4 {
        return Err(Error::data(format!("segment too short ({n} samples)")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&env.v[..n / 2]), mean(&env.v[n / 2..]));
    let overall = mean(&env.v);
    if !(overall > 0.0) || (a - b).abs() > 0.1 * overall {
        return Err(Error::data(format!(
            "segment is not stationary (half means {a:e} and {b:e})"
        )));
    }
    let rms = (env.v.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Ok((2.0 * n_bar).sqrt() * x_zpf / rms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(times: Vec<f64>, v: Vec<f64>) -> EnvelopeTrace {
        EnvelopeTrace {
            times,
            v,
            bandwidth: 100.0,
            reference_frequency: 1.0,
        }
    }

    #[test]
    fn sliding_sums_match_direct_fits() {
        let y: Vec<f64> = (0..300)
            .map(|k| ((k as f64) * 0.37).sin() + 0.01 * k as f64)
            .collect();
        let mut line = SlidingLine::new(&y, 25, 0);
        for _ in 0..200 {
            line.advance();
        }
        let (b, rss) = line.fit();
        let fresh = SlidingLine::new(&y, 25, 200);
        let (b2, rss2) = fresh.fit();
        assert!((b - b2).abs() < 1e-12);
        assert!((rss - rss2).abs() < 1e-10);
    }

    #[test]
    fn flat_trace_has_no_rise() {
        let n = 1000;
        let t: Vec<f64> = (0..n).map(|k| k as f64 * 1e-3).collect();
        let out = extract_max_slope(&trace(t, vec![1.0; n]), &SlopeExtraction::default()).unwrap();
        assert!(out.rise().is_none());
    }

    #[test]
    fn irregular_sampling_is_rejected() {
        let mut t: Vec<f64> = (0..100).map(|k| k as f64).collect();
        t[50] += 0.3;
        let v: Vec<f64> = (0..100).map(|k| k as f64).collect();
        assert!(extract_max_slope(&trace(t, v), &SlopeExtraction::default()).is_err());
    }

    #[test]
    fn threshold_fit_needs_positive_slope() {
        let data = [
            SlopeMeasurement::new(5e-6, 2.0),
            SlopeMeasurement::new(10e-6, 1.0),
        ];
        assert!(matches!(fit_threshold_linear(&data), Err(Error::Data(_))));
        let data = [
            SlopeMeasurement::new(5e-6, 0.0),
            SlopeMeasurement::new(10e-6, 0.0),
        ];
        assert!(matches!(
            fit_threshold_linear(&data),
            Err(Error::BelowThreshold(_))
        ));
    }

    #[test]
    fn calibration_identity() {
        let n_bar: f64 = 50.0;
        let x = 1e-3;
        let q = (2.0 * n_bar).sqrt() * x;
        let env = trace((0..10).map(|k| k as f64).collect(), vec![q; 10]);
        assert!((displacement_calibration(&env, n_bar, x).unwrap() - 1.0).abs() < 1e-12);
    }
}
