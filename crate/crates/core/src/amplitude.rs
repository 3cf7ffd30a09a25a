//! Slowly-varying amplitude dynamics of the self-oscillating mechanical mode.
//!
//! In the dimensionless variables ξ = 2g₀|A|/ω_m and τ = γ_m·t the envelope
//! obeys dξ/dτ = −𝒮(ξ) with the slope function
//!
//! ```text
//! 𝒮(ξ) = ξ + α·Im[E²_pm·Σ_pm(ξ) + E²_pr·Σ_pr(ξ)],   α = 2g₀²/(γ_m·ω_m)
//! ```
//!
//! 𝒮 is negative where the amplitude grows. The limit-cycle radius is the
//! smallest positive root of 𝒮; the largest growth rate on the way there is
//! reported as the non-negative number S_mx = −𝒮(ξ_mx), where 𝒮′(ξ_mx) = 0.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{Beam, SystemParams};
use crate::roots::brent;
use crate::special::CavityKernel;

/// Controls the search for the limit-cycle root.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootSearch {
    /// Upper end of the bracket (0, xi_max].
    pub xi_max: f64,
    /// Step of the sign scan.
    pub scan_step: f64,
    /// Required |𝒮| at the returned root.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for RootSearch {
    fn default() -> Self {
        RootSearch {
            xi_max: 20.0,
            scan_step: 1e-3,
            tolerance: 1e-10,
            max_iterations: 200,
        }
    }
}

/// Envelope state at dimensionless time τ = γ_m·t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeState {
    pub xi: f64,
    /// Envelope phase φ in radians.
    pub phi: f64,
    pub tau: f64,
}

/// Point of fastest growth below the limit cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxSlope {
    pub xi_mx: f64,
    /// −𝒮(ξ_mx) ≥ 0, in units of ξ per unit τ.
    pub s_mx: f64,
}

/// Effective mechanical damping and frequency shift at a given amplitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub gamma_eff: f64,
    pub delta_omega_eff: f64,
}

/// 𝒮 sampled on a grid with its characteristic points.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeCurve {
    pub xi_grid: Vec<f64>,
    pub s_values: Vec<f64>,
    pub xi_st: Option<f64>,
    pub xi_mx: Option<f64>,
    pub s_mx: Option<f64>,
}

#[derive(Debug, Clone)]
struct BeamTerm {
    drive_sq: f64,
    kernel: CavityKernel,
}

/// Precomputed slope function for one parameter set.
#[derive(Debug, Clone)]
pub struct SlopeModel {
    alpha: f64,
    g0: f64,
    gamma_m: f64,
    omega_m: f64,
    terms: Vec<BeamTerm>,
    search: RootSearch,
}

impl SlopeModel {
    pub fn new(sys: &SystemParams) -> Result<Self> {
        sys.validate()?;
        let mut terms = Vec::with_capacity(2);
        // Σ_i depends on the beam only through (Δ_i, κ_i).
        for beam in [Beam::Pump, Beam::Probe] {
            let drive_sq = sys.drive_sq(beam);
            if drive_sq == 0.0 {
                continue;
            }
            let kernel = CavityKernel::new(
                sys.detuning(beam),
                sys.optical(beam).kappa(),
                sys.mech.omega_m,
            )?;
            terms.push(BeamTerm { drive_sq, kernel });
        }
        Ok(SlopeModel {
            alpha: sys.alpha(),
            g0: sys.g0,
            gamma_m: sys.mech.gamma_m,
            omega_m: sys.mech.omega_m,
            terms,
            search: RootSearch::default(),
        })
    }

    pub fn with_search(mut self, search: RootSearch) -> Self {
        self.search = search;
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Σᵢ E²ᵢ·Σᵢ(ξ).
    pub fn weighted_sigma(&self, xi: f64) -> Result<Complex64> {
        let mut acc = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            acc += t.drive_sq * t.kernel.sigma(xi)?;
        }
        Ok(acc)
    }

    fn weighted_sigma_and_prime(&self, xi: f64) -> Result<(Complex64, Complex64)> {
        let mut s = Complex64::new(0.0, 0.0);
        let mut ds = Complex64::new(0.0, 0.0);
        for t in &self.terms {
            let (a, b) = t.kernel.sigma_and_prime(xi)?;
            s += t.drive_sq * a;
            ds += t.drive_sq * b;
        }
        Ok((s, ds))
    }

    /// lim Σᵢ E²ᵢ·Σᵢ(ξ)/ξ as ξ → 0.
    pub fn weighted_small_xi_slope(&self) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.drive_sq * t.kernel.small_xi_slope())
            .sum()
    }

    /// 𝒮(ξ).
    pub fn slope(&self, xi: f64) -> Result<f64> {
        Ok(xi + self.alpha * self.weighted_sigma(xi)?.im)
    }

    /// 𝒮′(ξ) = 1 + α·Im[Σᵢ E²ᵢ·Σ′ᵢ(ξ)].
    pub fn slope_prime(&self, xi: f64) -> Result<f64> {
        Ok(self.slope_and_prime(xi)?.1)
    }

    pub fn slope_and_prime(&self, xi: f64) -> Result<(f64, f64)> {
        let (s, ds) = self.weighted_sigma_and_prime(xi)?;
        Ok((xi + self.alpha * s.im, 1.0 + self.alpha * ds.im))
    }

    /// 𝒮′(0) = γ_eff(0)/γ_m; negative above threshold.
    pub fn initial_slope(&self) -> f64 {
        1.0 + self.alpha * self.weighted_small_xi_slope().im
    }

    /// 𝒮(ξ)/ξ, continuous at ξ = 0.
    fn reduced_slope(&self, xi: f64) -> Result<f64> {
        if xi == 0.0 {
            Ok(self.initial_slope())
        } else {
            Ok(self.slope(xi)? / xi)
        }
    }

    /// Smallest positive root of 𝒮, or `None` when small amplitudes decay
    /// (𝒮′(0) ≥ 0, i.e. at or below threshold).
    pub fn steady_state(&self) -> Result<Option<f64>> {
        if self.initial_slope() >= 0.0 {
            return Ok(None);
        }
        let RootSearch {
            xi_max,
            scan_step,
            tolerance,
            max_iterations,
        } = self.search;
        let steps = (xi_max / scan_step).ceil() as usize;
        let mut lo = 0.0;
        let mut f_lo = self.initial_slope();
        for k in 1..=steps {
            let hi = (k as f64 * scan_step).min(xi_max);
            let f_hi = self.reduced_slope(hi)?;
            if f_hi >= 0.0 {
                // 𝒮/ξ shares the positive roots of 𝒮 and is regular at 0
                let root = brent(
                    |x| self.reduced_slope(x),
                    lo,
                    hi,
                    f_lo,
                    f_hi,
                    1e-15,
                    0.0,
                    max_iterations,
                )?;
                let residual = self.slope(root)?;
                if residual.abs() >= tolerance {
                    return Err(Error::numeric(format!(
                        "limit-cycle root at xi = {root} has residual {residual:e}"
                    )));
                }
                return Ok(Some(root));
            }
            lo = hi;
            f_lo = f_hi;
        }
        Err(Error::numeric(format!(
            "slope function stays negative on (0, {xi_max}]; no limit cycle inside the search bracket"
        )))
    }

    /// ξ_mx ∈ (0, ξ_st) minimizing 𝒮, with S_mx = −𝒮(ξ_mx).
    pub fn max_slope_point(&self) -> Result<Option<MaxSlope>> {
        let Some(xi_st) = self.steady_state()? else {
            return Ok(None);
        };
        self.max_slope_below(xi_st).map(Some)
    }

    fn max_slope_below(&self, xi_st: f64) -> Result<MaxSlope> {
        const GRID: usize = 256;
        let max_iter = self.search.max_iterations;
        let mut best: Option<MaxSlope> = None;
        let mut consider = |xi: f64, s: f64| {
            if best.is_none_or(|b| -s > b.s_mx) {
                best = Some(MaxSlope {
                    xi_mx: xi,
                    s_mx: -s,
                });
            }
        };
        let mut x_prev = 0.0;
        let mut d_prev = self.initial_slope();
        for k in 1..=GRID {
            let x = xi_st * k as f64 / GRID as f64;
            let d = self.slope_prime(x)?;
            if d_prev < 0.0 && d >= 0.0 {
                let root = brent(
                    |z| self.slope_prime(z),
                    x_prev,
                    x,
                    d_prev,
                    d,
                    1e-14 * xi_st.max(1e-300),
                    0.0,
                    max_iter,
                )?;
                consider(root, self.slope(root)?);
            }
            x_prev = x;
            d_prev = d;
        }
        best.ok_or_else(|| {
            Error::numeric(format!(
                "no interior minimum of the slope function found below xi_st = {xi_st}"
            ))
        })
    }

    /// γ_m^eff and Δω_m^eff at amplitude ξ, from |A| = ξ·ω_m/(2g₀).
    pub fn effective_rates(&self, xi: f64) -> Result<EffectiveRates> {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(Error::domain(format!("xi must be non-negative, got {xi}")));
        }
        if xi == 0.0 {
            let l = self.weighted_small_xi_slope();
            let scale = 2.0 * self.g0 * self.g0 / self.omega_m;
            return Ok(EffectiveRates {
                gamma_eff: self.gamma_m + scale * l.im,
                delta_omega_eff: scale * l.re,
            });
        }
        let amplitude = xi * self.omega_m / (2.0 * self.g0);
        let s = self.weighted_sigma(xi)?;
        Ok(EffectiveRates {
            gamma_eff: self.gamma_m * (1.0 + self.g0 / (self.gamma_m * amplitude) * s.im),
            delta_omega_eff: self.g0 / amplitude * s.re,
        })
    }

    /// dφ/dτ = Δω_m^eff/γ_m.
    pub fn phase_rate(&self, xi: f64) -> Result<f64> {
        if xi == 0.0 {
            return Ok(self.alpha * self.weighted_small_xi_slope().re);
        }
        Ok(self.alpha * self.weighted_sigma(xi)?.re / xi)
    }
}

/// 𝒮(ξ) for a parameter set.
pub fn slope_function(xi: f64, sys: &SystemParams) -> Result<f64> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::domain(format!("xi must be non-negative, got {xi}")));
    }
    SlopeModel::new(sys)?.slope(xi)
}

pub fn steady_state_amplitude(sys: &SystemParams) -> Result<Option<f64>> {
    SlopeModel::new(sys)?.steady_state()
}

pub fn max_slope_point(sys: &SystemParams) -> Result<Option<MaxSlope>> {
    SlopeModel::new(sys)?.max_slope_point()
}

pub fn effective_rates(xi: f64, sys: &SystemParams) -> Result<EffectiveRates> {
    SlopeModel::new(sys)?.effective_rates(xi)
}

/// Samples 𝒮 on `xi_grid` and locates ξ_st, ξ_mx and S_mx.
pub fn slope_curve(sys: &SystemParams, xi_grid: &[f64]) -> Result<SlopeCurve> {
    let model = SlopeModel::new(sys)?;
    let s_values = xi_grid
        .iter()
        .map(|&x| model.slope(x))
        .collect::<Result<Vec<_>>>()?;
    let xi_st = model.steady_state()?;
    let mx = match xi_st {
        Some(st) => Some(model.max_slope_below(st)?),
        None => None,
    };
    Ok(SlopeCurve {
        xi_grid: xi_grid.to_vec(),
        s_values,
        xi_st,
        xi_mx: mx.map(|m| m.xi_mx),
        s_mx: mx.map(|m| m.s_mx),
    })
}

fn small_xi_limit(sys: &SystemParams, beam: Beam) -> Result<Complex64> {
    let kernel = CavityKernel::new(
        sys.detuning(beam),
        sys.optical(beam).kappa(),
        sys.mech.omega_m,
    )?;
    Ok(kernel.small_xi_slope())
}

/// Minimum effective power of `which` for which a limit cycle exists,
/// with the other beam held at its configured power.
///
/// With the other beam resonant this is P_th = ħω_L·γ_m·ω_m/(2κ_in·2g₀²·|L|),
/// L = lim Im Σ(ξ)/ξ.
pub fn threshold_power(sys: &SystemParams, which: Beam) -> Result<f64> {
    sys.validate()?;
    let l = small_xi_limit(sys, which)?.im;
    if l >= 0.0 {
        return Err(Error::NoThreshold(format!(
            "the {which} beam does not antidamp the mechanics (lim Im Σ/ξ = {l:e})"
        )));
    }
    let other = which.other();
    let other_term = if sys.drive_sq(other) > 0.0 {
        sys.alpha() * sys.drive_sq(other) * small_xi_limit(sys, other)?.im
    } else {
        0.0
    };
    let p = -(1.0 + other_term) / (sys.alpha() * sys.drive_sq_per_watt(which) * l);
    Ok(p.max(0.0))
}

/// The parameter-only constant 𝒜·P_pm = lim −ξ/Im[(E²_pm/P_pm)·Σ_pm(ξ)], in watts.
pub fn threshold_constant(sys: &SystemParams) -> Result<f64> {
    sys.validate()?;
    let l = small_xi_limit(sys, Beam::Pump)?.im;
    if l >= 0.0 {
        return Err(Error::NoThreshold(format!(
            "the pump beam does not antidamp the mechanics (lim Im Σ/ξ = {l:e})"
        )));
    }
    Ok(-1.0 / (sys.drive_sq_per_watt(Beam::Pump) * l))
}

/// g₀ = sqrt(γ_m·ω_m·𝒜/2) with 𝒜 = threshold_constant/P_th.
pub fn g0_from_threshold(p_th: f64, sys: &SystemParams) -> Result<f64> {
    if !(p_th.is_finite() && p_th > 0.0) {
        return Err(Error::domain(format!(
            "threshold power must be positive, got {p_th}"
        )));
    }
    let constant = threshold_constant(sys)?;
    let a = constant / p_th;
    Ok((sys.mech.gamma_m * sys.mech.omega_m * a / 2.0).sqrt())
}

/// Classical RK4 integration of dξ/dτ = −𝒮(ξ), dφ/dτ = Δω_m^eff/γ_m from
/// (ξ₀, φ = 0) to τ_end. The returned states include τ = 0.
pub fn integrate_amplitude(
    sys: &SystemParams,
    xi0: f64,
    tau_end: f64,
    dtau: f64,
) -> Result<Vec<AmplitudeState>> {
    if !(xi0.is_finite() && xi0 > 0.0) {
        return Err(Error::domain(format!(
            "initial amplitude must be positive, got {xi0}"
        )));
    }
    if !(dtau.is_finite() && dtau > 0.0) {
        return Err(Error::domain(format!("step must be positive, got {dtau}")));
    }
    if !(tau_end.is_finite() && tau_end >= 0.0) {
        return Err(Error::domain("end time must be non-negative"));
    }
    let model = SlopeModel::new(sys)?;
    let steps = (tau_end / dtau).round().max(1.0) as usize;
    let h = tau_end / steps as f64;
    let rhs = |xi: f64| -> Result<(f64, f64)> {
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(Error::numeric(format!(
                "amplitude left the physical domain (xi = {xi}); reduce dtau"
            )));
        }
        Ok((-model.slope(xi)?, model.phase_rate(xi)?))
    };
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = AmplitudeState {
        xi: xi0,
        phi: 0.0,
        tau: 0.0,
    };
    out.push(state);
    for k in 1..=steps {
        let (k1x, k1p) = rhs(state.xi)?;
        let (k2x, k2p) = rhs(state.xi + 0.5 * h * k1x)?;
        let (k3x, k3p) = rhs(state.xi + 0.5 * h * k2x)?;
        let (k4x, k4p) = rhs(state.xi + h * k3x)?;
        let xi = state.xi + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        let phi = state.phi + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        if !(xi.is_finite() && xi >= 0.0) {
            return Err(Error::numeric(format!(
                "amplitude integration unstable at step {k} (xi = {xi}); reduce dtau"
            )));
        }
        state = AmplitudeState {
            xi,
            phi,
            tau: k as f64 * h,
        };
        out.push(state);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;

    fn resonant() -> SystemParams {
        let mut sys = SystemParams::reference_defaults();
        sys.pump.bare_detuning = 0.0;
        sys.probe.bare_detuning = 0.0;
        sys
    }

    #[test]
    fn slope_is_zero_at_origin() {
        let sys = SystemParams::reference_defaults();
        assert_eq!(slope_function(0.0, &sys).unwrap(), 0.0);
        assert_eq!(slope_function(0.0, &resonant()).unwrap(), 0.0);
    }

    #[test]
    fn resonant_beams_leave_pure_damping() {
        let sys = resonant();
        for &xi in &[0.1, 1.0, 3.7, 9.0] {
            let s = slope_function(xi, &sys).unwrap();
            assert!((s - xi).abs() < 1e-12 * xi, "xi={xi} s={s}");
        }
        assert_eq!(steady_state_amplitude(&sys).unwrap(), None);
        assert!(matches!(
            threshold_power(&sys, Beam::Pump),
            Err(Error::NoThreshold(_))
        ));
        let rates = effective_rates(0.8, &sys).unwrap();
        assert!((rates.gamma_eff - sys.mech.gamma_m).abs() < 1e-12 * sys.mech.gamma_m);
        assert!(rates.delta_omega_eff.abs() < 1e-9);
    }

    #[test]
    fn below_threshold_has_no_limit_cycle() {
        let sys = SystemParams::reference_defaults().with_pump_power(1e-6);
        assert_eq!(steady_state_amplitude(&sys).unwrap(), None);
        assert_eq!(max_slope_point(&sys).unwrap(), None);
    }

    #[test]
    fn growth_region_precedes_root() {
        let sys = SystemParams::reference_defaults();
        let st = steady_state_amplitude(&sys).unwrap().unwrap();
        let model = SlopeModel::new(&sys).unwrap();
        for k in 1..50 {
            let xi = st * k as f64 / 50.0;
            assert!(model.slope(xi).unwrap() < 0.0);
        }
        let d = 1e-4 * st;
        assert!(model.slope(st - d).unwrap() < 0.0);
        assert!(model.slope(st + d).unwrap() > 0.0);
        assert!(model.slope(st).unwrap().abs() < 1e-10);
    }

    #[test]
    fn effective_damping_identity() {
        let sys = SystemParams::reference_defaults();
        let model = SlopeModel::new(&sys).unwrap();
        for &xi in &[0.05, 0.6, 1.9, 3.3] {
            let r = model.effective_rates(xi).unwrap();
            let via_slope = sys.mech.gamma_m * model.slope(xi).unwrap() / xi;
            assert!((r.gamma_eff - via_slope).abs() <= 1e-10 * via_slope.abs());
        }
        let st = model.steady_state().unwrap().unwrap();
        let at_st = model.effective_rates(st).unwrap();
        assert!(at_st.gamma_eff.abs() < 1e-9 * sys.mech.gamma_m);
        let r0 = model.effective_rates(0.0).unwrap();
        let r_small = model.effective_rates(1e-7).unwrap();
        assert!((r0.gamma_eff - r_small.gamma_eff).abs() < 1e-6 * r0.gamma_eff.abs());
    }

    #[test]
    fn threshold_scaling_with_g0() {
        let sys = SystemParams::reference_defaults();
        let p = threshold_power(&sys, Beam::Pump).unwrap();
        let p2 = threshold_power(&sys.clone().with_g0(2.0 * sys.g0), Beam::Pump).unwrap();
        assert!(((p / p2) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_round_trip() {
        let sys = SystemParams::reference_defaults();
        let p = threshold_power(&sys, Beam::Pump).unwrap();
        let g0 = g0_from_threshold(p, &sys).unwrap();
        assert!(((g0 - sys.g0) / sys.g0).abs() < 1e-8);
        assert!(g0_from_threshold(0.0, &sys).is_err());
    }

    #[test]
    fn threshold_constant_is_parameter_only() {
        let sys = SystemParams::reference_defaults();
        let c = threshold_constant(&sys).unwrap();
        let c2 = threshold_constant(&sys.clone().with_g0(3.0).with_pump_power(7e-6)).unwrap();
        assert_eq!(c, c2);
    }

    #[test]
    fn pure_decay_integration() {
        let sys = resonant();
        let traj = integrate_amplitude(&sys, 1.0, 3.0, 1e-3).unwrap();
        for s in traj.iter().step_by(100) {
            assert!((s.xi - (-s.tau).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn integration_rejects_bad_arguments() {
        let sys = SystemParams::reference_defaults();
        assert!(integrate_amplitude(&sys, 0.0, 1.0, 1e-3).is_err());
        assert!(integrate_amplitude(&sys, 0.1, 1.0, 0.0).is_err());
        // an absurd step overshoots into negative amplitudes
        let fast = SystemParams::reference_defaults().with_pump_power(2e-4);
        assert!(matches!(
            integrate_amplitude(&fast, 1.0, 50.0, 5.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn probe_pump_exchange_symmetry() {
        let mut a = SystemParams::reference_defaults();
        a.probe.bare_detuning = TWO_PI * 120e3;
        a.probe.power = 3e-6;
        let mut b = a.clone();
        std::mem::swap(&mut b.pump, &mut b.probe);
        for &xi in &[0.2, 1.1, 2.5] {
            let sa = slope_function(xi, &a).unwrap();
            let sb = slope_function(xi, &b).unwrap();
            assert!((sa - sb).abs() <= 1e-12 * sa.abs().max(1.0));
        }
    }
}
