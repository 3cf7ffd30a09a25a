//! Bessel functions of the first kind and the nonlinear cavity kernel Σ.
//!
//! J_n(x) for integer order is computed with Miller's backward recurrence,
//! normalized by J₀ + 2·Σ J₂ₖ = 1, and with the ascending power series for
//! small arguments.
//!
//! The kernel is
//!
//! ```text
//! Σ(ξ) = Σₙ J_n(−ξ)·J_{n+1}(−ξ) / ([i·n·ω_m − W]·[−i·(n+1)·ω_m − W*]),   W = iΔ − κ
//! ```
//!
//! and is kept with the literal negative Bessel argument. The sum runs over
//! n ∈ [−N−1, N], a range closed under n → −n−1, so that the term-by-term
//! cancellation at Δ = 0 is exact up to rounding.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Below this |x| the ascending series is used for every order.
const SERIES_CUTOFF: f64 = 0.5;
const RESCALE_ABOVE: f64 = 1e200;
const RESCALE_BY: f64 = 1e-200;

/// J_n(x) for any integer order and finite real argument.
pub fn bessel_j(n: i32, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "Bessel argument must be finite, got {x}"
        )));
    }
    let order = n.unsigned_abs() as usize;
    let seq = bessel_j_orders(x, order)?;
    let value = seq[order];
    // J_{−n}(x) = (−1)ⁿ J_n(x)
    if n < 0 && order % 2 == 1 {
        Ok(-value)
    } else {
        Ok(value)
    }
}

/// J_0(x), …, J_nmax(x).
pub fn bessel_j_orders(x: f64, nmax: usize) -> Result<Vec<f64>> {
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "Bessel argument must be finite, got {x}"
        )));
    }
    let ax = x.abs();
    let mut seq = if ax == 0.0 {
        let mut v = vec![0.0; nmax + 1];
        v[0] = 1.0;
        v
    } else if ax < SERIES_CUTOFF {
        (0..=nmax).map(|k| series(k, ax)).collect()
    } else {
        miller(ax, nmax)
    };
    // J_n(−x) = (−1)ⁿ J_n(x)
    if x < 0.0 {
        for v in seq.iter_mut().skip(1).step_by(2) {
            *v = -*v;
        }
    }
    Ok(seq)
}

/// Ascending series (x/2)ⁿ/n! · Σₖ (−x²/4)ᵏ / (k!·(n+1)ₖ), for x ≥ 0.
fn series(n: usize, x: f64) -> f64 {
    let half = 0.5 * x;
    // (x/2)^n / n! built incrementally to avoid overflow in n!.
    let mut lead = 1.0;
    for k in 1..=n {
        lead *= half / k as f64;
        if lead == 0.0 {
            return 0.0;
        }
    }
    let q = -half * half;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * (n + k) as f64);
        sum += term;
        if term.abs() <= f64::EPSILON * 0.25 * sum.abs() {
            break;
        }
    }
    lead * sum
}

/// Miller's algorithm for x > 0.
fn miller(x: f64, nmax: usize) -> Vec<f64> {
    let reach = (nmax as f64).max(x);
    let mut start = (reach + 30.0 + (160.0 * reach).sqrt()).ceil() as usize;
    if start % 2 == 1 {
        start += 1;
    }
    let mut out = vec![0.0; nmax + 1];
    let two_over_x = 2.0 / x;
    let mut above = 0.0; // J_{k+1}
    let mut current = 1e-30; // J_k, unnormalized
    let mut norm = 0.0; // J_0 + 2 Σ J_{2k}, unnormalized
    let mut k = start;
    loop {
        if k <= nmax {
            out[k] = current;
        }
        if k.is_multiple_of(2) {
            norm += if k == 0 { current } else { 2.0 * current };
        }
        if k == 0 {
            break;
        }
        let below = k as f64 * two_over_x * current - above;
        above = current;
        current = below;
        k -= 1;
        if current.abs() > RESCALE_ABOVE {
            current *= RESCALE_BY;
            above *= RESCALE_BY;
            norm *= RESCALE_BY;
            for v in out.iter_mut().skip(k) {
                *v *= RESCALE_BY;
            }
        }
    }
    let inv = 1.0 / norm;
    for v in out.iter_mut() {
        *v *= inv;
    }
    out
}

/// Default truncation N = max(25, ⌈ξ⌉ + 20).
pub fn default_truncation(xi: f64) -> usize {
    25.max(xi.ceil() as usize + 20)
}

/// Arguments of a single kernel evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityKernelInput {
    /// Dimensionless amplitude ξ = 2g|A|/ω_m.
    pub xi: f64,
    /// Effective detuning Δ (rad/s).
    pub detuning: f64,
    pub kappa: f64,
    pub omega_m: f64,
    /// Sum truncation N; `None` selects [`default_truncation`].
    pub truncation: Option<usize>,
}

impl CavityKernelInput {
    fn kernel(&self) -> Result<CavityKernel> {
        CavityKernel::new(self.detuning, self.kappa, self.omega_m)
    }

    fn order(&self) -> Result<usize> {
        let n = self
            .truncation
            .unwrap_or_else(|| default_truncation(self.xi));
        if n < 1 {
            return Err(Error::domain("kernel truncation must be at least 1"));
        }
        Ok(n)
    }
}

/// Σ(ξ) for one set of arguments.
pub fn sigma(inp: &CavityKernelInput) -> Result<Complex64> {
    let n = inp.order()?;
    inp.kernel()?.sigma_truncated(inp.xi, n)
}

/// dΣ/dξ for one set of arguments.
pub fn sigma_prime(inp: &CavityKernelInput) -> Result<Complex64> {
    let n = inp.order()?;
    inp.kernel()?.sigma_prime_truncated(inp.xi, n)
}

/// Number of coefficients cached on each side of n = 0.
const CACHE_HALF_WIDTH: usize = 64;

/// Σ and Σ′ for fixed (Δ, κ, ω_m); the denominators do not depend on ξ and
/// are cached.
#[derive(Debug, Clone)]
pub struct CavityKernel {
    detuning: f64,
    kappa: f64,
    omega_m: f64,
    /// coefficient for index n stored at n + CACHE_HALF_WIDTH + 1
    coeffs: Vec<Complex64>,
}

impl CavityKernel {
    pub fn new(detuning: f64, kappa: f64, omega_m: f64) -> Result<Self> {
        if !detuning.is_finite() {
            return Err(Error::domain("detuning must be finite"));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(Error::domain(format!(
                "cavity decay rate must be positive for the kernel to be pole-free, got {kappa}"
            )));
        }
        if !(omega_m.is_finite() && omega_m > 0.0) {
            return Err(Error::domain("mechanical frequency must be positive"));
        }
        let mut kernel = CavityKernel {
            detuning,
            kappa,
            omega_m,
            coeffs: Vec::new(),
        };
        let lo = -(CACHE_HALF_WIDTH as i64) - 1;
        let hi = CACHE_HALF_WIDTH as i64 + 1;
        kernel.coeffs = (lo..=hi).map(|n| kernel.coefficient_uncached(n)).collect();
        Ok(kernel)
    }

    pub fn detuning(&self) -> f64 {
        self.detuning
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn omega_m(&self) -> f64 {
        self.omega_m
    }

    /// W = iΔ − κ.
    pub fn pole(&self) -> Complex64 {
        Complex64::new(-self.kappa, self.detuning)
    }

    fn coefficient_uncached(&self, n: i64) -> Complex64 {
        let w = self.pole();
        let i = Complex64::i();
        let nf = n as f64;
        let first = i * (nf * self.omega_m) - w;
        let second = -i * ((nf + 1.0) * self.omega_m) - w.conj();
        (first * second).inv()
    }

    /// 1/([i·n·ω_m − W]·[−i·(n+1)·ω_m − W*]).
    pub fn coefficient(&self, n: i64) -> Complex64 {
        let idx = n + CACHE_HALF_WIDTH as i64 + 1;
        if idx >= 0 && (idx as usize) < self.coeffs.len() {
            self.coeffs[idx as usize]
        } else {
            self.coefficient_uncached(n)
        }
    }

    /// Σ(ξ) with the default truncation.
    pub fn sigma(&self, xi: f64) -> Result<Complex64> {
        self.sigma_truncated(xi, default_truncation(xi))
    }

    /// dΣ/dξ with the default truncation.
    pub fn sigma_prime(&self, xi: f64) -> Result<Complex64> {
        self.sigma_prime_truncated(xi, default_truncation(xi))
    }

    pub fn sigma_truncated(&self, xi: f64, order: usize) -> Result<Complex64> {
        Ok(self.terms(xi, order)?.0)
    }

    /// Σ(ξ) together with the largest summand magnitude.
    pub fn sigma_with_max_term(&self, xi: f64) -> Result<(Complex64, f64)> {
        self.terms(xi, default_truncation(xi))
    }

    fn terms(&self, xi: f64, order: usize) -> Result<(Complex64, f64)> {
        check_xi(xi)?;
        let bessel = NegArgBessel::new(xi, order + 2)?;
        let n_max = order as i64;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut largest: f64 = 0.0;
        for n in (-n_max - 1)..=n_max {
            let term = self.coefficient(n) * (bessel.get(n) * bessel.get(n + 1));
            largest = largest.max(term.norm());
            sum += term;
        }
        Ok((sum, largest))
    }

    pub fn sigma_prime_truncated(&self, xi: f64, order: usize) -> Result<Complex64> {
        check_xi(xi)?;
        let bessel = NegArgBessel::new(xi, order + 3)?;
        let n_max = order as i64;
        let mut sum = Complex64::new(0.0, 0.0);
        for n in (-n_max - 1)..=n_max {
            sum += self.coefficient(n) * bessel.pair_derivative(n);
        }
        Ok(sum)
    }

    /// Σ(ξ) and dΣ/dξ sharing one Bessel evaluation.
    pub fn sigma_and_prime(&self, xi: f64) -> Result<(Complex64, Complex64)> {
        check_xi(xi)?;
        let order = default_truncation(xi);
        let bessel = NegArgBessel::new(xi, order + 3)?;
        let n_max = order as i64;
        let mut s = Complex64::new(0.0, 0.0);
        let mut ds = Complex64::new(0.0, 0.0);
        for n in (-n_max - 1)..=n_max {
            let c = self.coefficient(n);
            s += c * (bessel.get(n) * bessel.get(n + 1));
            ds += c * bessel.pair_derivative(n);
        }
        Ok((s, ds))
    }

    /// lim_{ξ→0⁺} Σ(ξ)/ξ (equal to Σ′(0)), from J₀ ≈ 1 and J_{±1}(−ξ) ≈ ∓(−ξ)/2:
    /// −½·(c₀ − c₋₁), c_n the n-th denominator reciprocal.
    pub fn small_xi_slope(&self) -> Complex64 {
        -0.5 * (self.coefficient(0) - self.coefficient(-1))
    }
}

fn check_xi(xi: f64) -> Result<()> {
    if !(xi.is_finite() && xi >= 0.0) {
        return Err(Error::domain(format!(
            "xi must be finite and non-negative, got {xi}"
        )));
    }
    Ok(())
}

/// J_k(−ξ) for |k| ≤ kmax.
struct NegArgBessel {
    pos: Vec<f64>,
}

impl NegArgBessel {
    fn new(xi: f64, kmax: usize) -> Result<Self> {
        Ok(NegArgBessel {
            pos: bessel_j_orders(-xi, kmax)?,
        })
    }

    fn get(&self, k: i64) -> f64 {
        let m = k.unsigned_abs() as usize;
        let v = self.pos[m];
        if k < 0 && m % 2 == 1 {
            -v
        } else {
            v
        }
    }

    /// d/dξ [J_n(−ξ)·J_{n+1}(−ξ)] with J′_k = (J_{k−1} − J_{k+1})/2.
    fn pair_derivative(&self, n: i64) -> f64 {
        let d = |k: i64| 0.5 * (self.get(k - 1) - self.get(k + 1));
        -(d(n) * self.get(n + 1) + self.get(n) * d(n + 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::TWO_PI;

    /// Direct power series for J_n(x), n ≥ 0, summed in f64 without
    /// the incremental scaling used above.
    fn series_oracle(n: i32, x: f64) -> f64 {
        let mut sum = 0.0;
        let mut fact_k = 1.0;
        for k in 0..40 {
            if k > 0 {
                fact_k *= k as f64;
            }
            let mut fact_nk = 1.0;
            for j in 1..=(n + k) {
                fact_nk *= j as f64;
            }
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            sum += sign * (x / 2.0).powi(2 * k + n) / (fact_k * fact_nk);
        }
        sum
    }

    #[test]
    fn trivial_values() {
        assert_eq!(bessel_j(0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_j(1, 0.0).unwrap(), 0.0);
        assert_eq!(bessel_j(-3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn j0_of_one_matches_series() {
        let oracle = series_oracle(0, 1.0);
        assert!((oracle - 0.765_197_686_6).abs() < 1e-10);
        let v = bessel_j(0, 1.0).unwrap();
        assert!(((v - oracle) / oracle).abs() < 1e-14, "{v} vs {oracle}");
    }

    #[test]
    fn negative_order_reflection() {
        for &x in &[0.3, 1.7, 6.2, 23.0] {
            for n in 0..12 {
                let a = bessel_j(-n, x).unwrap();
                let b = bessel_j(n, x).unwrap();
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                assert_eq!(a, sign * b);
            }
        }
    }

    #[test]
    fn negative_argument_parity() {
        for n in 0..8 {
            let a = bessel_j(n, -2.3).unwrap();
            let b = bessel_j(n, 2.3).unwrap();
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            assert_eq!(a, sign * b);
        }
    }

    #[test]
    fn recurrence_matches_series_for_small_arguments() {
        for &x in &[0.6, 1.0, 2.0, 3.5, 5.0] {
            for n in 0..15 {
                let v = bessel_j(n, x).unwrap();
                let o = series_oracle(n, x);
                assert!(
                    (v - o).abs() <= 1e-13 * o.abs().max(1e-3),
                    "n={n} x={x}: {v} vs {o}"
                );
            }
        }
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(bessel_j(0, f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(bessel_j(2, f64::INFINITY), Err(Error::Domain(_))));
    }

    fn reference_kernel() -> CavityKernel {
        CavityKernel::new(TWO_PI * 239.35e3, TWO_PI * 66.8e3, TWO_PI * 229.753e3).unwrap()
    }

    #[test]
    fn sigma_vanishes_at_zero_amplitude() {
        let k = reference_kernel();
        assert_eq!(k.sigma(0.0).unwrap(), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sigma_vanishes_on_resonance() {
        let k = CavityKernel::new(0.0, TWO_PI * 66.8e3, TWO_PI * 229.753e3).unwrap();
        for &xi in &[0.1, 0.5, 1.0, 2.0, 5.0, 10.0] {
            let (s, largest) = k.sigma_with_max_term(xi).unwrap();
            assert!(s.norm() < 1e-12 * largest, "xi={xi}: {s} vs {largest}");
            assert!(k.sigma_prime(xi).unwrap().norm() < 1e-12 * largest);
        }
        assert_eq!(k.sigma_prime(0.0).unwrap().norm(), 0.0);
    }

    #[test]
    fn small_xi_limit() {
        let k = reference_kernel();
        let limit = k.small_xi_slope();
        let xi = 1e-6;
        let ratio = k.sigma(xi).unwrap() / xi;
        assert!((ratio - limit).norm() < 1e-9 * limit.norm());
        let slope0 = k.sigma_prime(0.0).unwrap();
        assert!((slope0 - limit).norm() < 1e-12 * limit.norm());
    }

    #[test]
    fn sigma_prime_matches_central_difference() {
        let k = reference_kernel();
        let xi = 0.5;
        let h = 1e-6;
        let fd = (k.sigma(xi + h).unwrap() - k.sigma(xi - h).unwrap()) / (2.0 * h);
        let an = k.sigma_prime(xi).unwrap();
        assert!((fd - an).norm() < 1e-6 * an.norm(), "{fd} vs {an}");
        let (s, ds) = k.sigma_and_prime(xi).unwrap();
        assert_eq!(s, k.sigma(xi).unwrap());
        assert_eq!(ds, an);
    }

    #[test]
    fn free_functions_match_kernel() {
        let inp = CavityKernelInput {
            xi: 1.3,
            detuning: TWO_PI * 239.35e3,
            kappa: TWO_PI * 66.8e3,
            omega_m: TWO_PI * 229.753e3,
            truncation: None,
        };
        let k = reference_kernel();
        assert_eq!(sigma(&inp).unwrap(), k.sigma(1.3).unwrap());
        assert_eq!(sigma_prime(&inp).unwrap(), k.sigma_prime(1.3).unwrap());
    }

    #[test]
    fn kernel_rejects_zero_linewidth() {
        assert!(CavityKernel::new(1.0, 0.0, 1.0).is_err());
        assert!(CavityKernel::new(1.0, -1.0, 1.0).is_err());
        let k = reference_kernel();
        assert!(k.sigma(-0.1).is_err());
    }
}
