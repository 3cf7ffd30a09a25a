use hopfcal::amplitude::{max_slope_point, threshold_power};
use hopfcal::constants::TWO_PI;
use hopfcal::estimation::*;
use hopfcal::langevin::{simulate_full, EnvelopeTrace, LockIn, Observable, SimulationConfig};
use hopfcal::model::{Beam, SystemParams};
use hopfcal::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const G0: f64 = TWO_PI * 0.336;
const A: f64 = 2.1e-4;

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn trace(dt: f64, v: Vec<f64>) -> EnvelopeTrace {
    EnvelopeTrace {
        times: (0..v.len()).map(|k| k as f64 * dt).collect(),
        v,
        bandwidth: 182.0,
        reference_frequency: 229.753e3,
    }
}

fn rise(out: SlopeOutcome) -> RiseSlope {
    *out.rise().expect("a rise")
}

#[test]
fn linear_ramp_is_exact() {
    let dt = 1e-4;
    let s = 3.7;
    let v: Vec<f64> = (0..30_000)
        .map(|k| {
            let t = k as f64 * dt;
            0.05 + s * (t - 1.0).clamp(0.0, 1.0)
        })
        .collect();
    let r = rise(extract_max_slope(&trace(dt, v), &SlopeExtraction::default()).unwrap());
    assert!(rel(r.slope, s) < 1e-12, "{}", r.slope);
    assert!(r.std_error < 1e-9);
    assert!(r.t_low > 1.0 && r.t_high < 2.0);
}

#[test]
fn logistic_rise_returns_peak_derivative() {
    let dt = 1e-4;
    for &(vf, s, t0) in &[(1.0, 10.0, 1.0), (2.5e-10, 4e-9, 0.8), (3.0, 2.0, 2.5)] {
        let v: Vec<f64> = (0..60_000)
            .map(|k| {
                let t = k as f64 * dt;
                vf / (1.0 + (-4.0 * s * (t - t0) / vf).exp())
            })
            .collect();
        let r = rise(extract_max_slope(&trace(dt, v), &SlopeExtraction::default()).unwrap());
        assert!(rel(r.slope, s) < 0.02, "vf={vf}: {} vs {s}", r.slope);
        assert!((r.time - t0).abs() < 0.05 * vf / s);
    }
}

#[test]
fn explicit_window_and_log_scale() {
    let dt = 1e-3;
    let rate = 5.0;
    // pure exponential growth between two plateaus
    let v: Vec<f64> = (0..4000)
        .map(|k| {
            let t = (k as f64 * dt).clamp(0.5, 1.5);
            1e-3 * (rate * (t - 0.5)).exp()
        })
        .collect();
    let opts = SlopeExtraction {
        log_scale: true,
        window: Some(0.05),
        ..Default::default()
    };
    let r = rise(extract_max_slope(&trace(dt, v.clone()), &opts).unwrap());
    assert!(rel(r.slope, rate) < 1e-9, "{}", r.slope);
    assert_eq!(r.window_samples, 50);

    let tiny = SlopeExtraction {
        window: Some(5.0 * dt),
        ..Default::default()
    };
    assert!(matches!(
        extract_max_slope(&trace(dt, v), &tiny),
        Err(Error::Domain(_))
    ));
}

#[test]
fn noisy_plateau_without_growth_is_no_rise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let normal = Normal::<f64>::new(1.0, 0.3).unwrap();
    let v: Vec<f64> = (0..10_000).map(|_| normal.sample(&mut rng)).collect();
    let out = extract_max_slope(&trace(1e-4, v), &SlopeExtraction::default()).unwrap();
    assert!(matches!(out, SlopeOutcome::NoRise { .. }));
}

fn simulated_envelopes(power: f64, duration: f64, orders: &[u32]) -> Vec<EnvelopeTrace> {
    let sys = SystemParams::reference_defaults().with_pump_power(power);
    let cfg = SimulationConfig {
        seed: 11,
        pump_on_time: 0.05,
        record_stride: 64,
        ..SimulationConfig::new(&sys, duration)
    };
    let traj = simulate_full(&sys, &cfg).unwrap();
    orders
        .iter()
        .map(|&n| {
            LockIn::new(sys.mech.omega_m / TWO_PI, 182.0)
                .with_order(n)
                .demodulate(&traj, &sys, &Observable::Displacement)
                .unwrap()
                .since(0.01)
        })
        .collect()
}

#[test]
fn simulated_slopes_order_and_filter_insensitivity() {
    let opts = SlopeExtraction::default();
    let fast = simulated_envelopes(21e-6, 0.6, &[4, 1]);
    let slow = simulated_envelopes(6.1e-6, 2.5, &[4]);
    let s_fast = rise(extract_max_slope(&fast[0], &opts).unwrap());
    let s_fast1 = rise(extract_max_slope(&fast[1], &opts).unwrap());
    let s_slow = rise(extract_max_slope(&slow[0], &opts).unwrap());
    assert!(s_fast.slope > s_slow.slope);
    assert!(
        rel(s_fast1.slope, s_fast.slope) < 0.02,
        "{} vs {}",
        s_fast1.slope,
        s_fast.slope
    );

    let sys = SystemParams::reference_defaults();
    let scale = sys.mech.x_zpf().unwrap() * sys.mech.omega_m * sys.mech.gamma_m / (2.0 * sys.g0);
    let predicted = |p: f64| {
        scale
            * max_slope_point(&sys.clone().with_pump_power(p))
                .unwrap()
                .unwrap()
                .s_mx
    };
    assert!(rel(s_fast.slope, predicted(21e-6)) < 0.05);
    // near threshold the thermal random walk inflates short-window maxima
    let wide = SlopeExtraction {
        window_fraction: 0.2,
        ..Default::default()
    };
    let s_wide = rise(extract_max_slope(&slow[0], &wide).unwrap());
    assert!(s_wide.slope < s_slow.slope);
    assert!(
        rel(s_wide.slope, predicted(6.1e-6)) < 0.1,
        "{:e}",
        s_wide.slope
    );
}

fn powers(n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 5e-6 + 25e-6 * k as f64 / (n - 1) as f64)
        .collect()
}

fn synthetic(ps: &[f64], g0: f64, a: f64) -> Vec<SlopeMeasurement> {
    let base = SystemParams::reference_defaults();
    ps.iter()
        .map(|&p| {
            let s = max_slope_point(&base.clone().with_pump_power(p).with_g0(g0))
                .unwrap()
                .map_or(0.0, |m| m.s_mx);
            SlopeMeasurement::new(p, a * s)
        })
        .collect()
}

#[test]
fn noiseless_fit_recovers_parameters() {
    let data = synthetic(&powers(8), G0, A);
    let fit = fit_slope_power(
        &data,
        &SystemParams::reference_defaults(),
        &FitOptions::default(),
    )
    .unwrap();
    assert!(fit.converged);
    assert!(rel(fit.g0, G0) < 1e-6, "g0/2pi = {}", fit.g0 / TWO_PI);
    assert!(rel(fit.a, A) < 1e-6);
    assert!(fit.chi2 < 1e-20);
}

#[test]
fn noisy_fit_median_error() {
    let clean = synthetic(&powers(8), G0, A);
    let sys = SystemParams::reference_defaults();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::<f64>::new(0.0, 0.05).unwrap();
    let mut errors: Vec<f64> = (0..50)
        .map(|_| {
            let data: Vec<SlopeMeasurement> = clean
                .iter()
                .map(|d| {
                    SlopeMeasurement::new(
                        d.pump_power,
                        d.max_slope * (1.0 + normal.sample(&mut rng)).max(0.0),
                    )
                })
                .collect();
            let fit = fit_slope_power(&data, &sys, &FitOptions::default()).unwrap();
            assert!(fit.converged);
            rel(fit.g0, G0)
        })
        .collect();
    errors.sort_by(f64::total_cmp);
    let med = 0.5 * (errors[24] + errors[25]);
    assert!(med < 0.05, "median relative error {med}");
}

#[test]
fn fixed_coupling_matches_weighted_least_squares() {
    let mut data = synthetic(&powers(8), G0, A);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let normal = Normal::<f64>::new(0.0, 0.1).unwrap();
    for (k, d) in data.iter_mut().enumerate() {
        d.max_slope *= 1.0 + normal.sample(&mut rng);
        d.max_slope = d.max_slope.max(0.0);
        d.uncertainty = Some(1e-5 * (1.0 + k as f64));
    }
    let g = TWO_PI * 0.31;
    let opts = FitOptions {
        fixed_g0: Some(g),
        ..Default::default()
    };
    let fit = fit_slope_power(&data, &SystemParams::reference_defaults(), &opts).unwrap();
    let model = synthetic(&powers(8), g, 1.0);
    let (mut num, mut den) = (0.0, 0.0);
    for (d, m) in data.iter().zip(&model) {
        let w = d.uncertainty.unwrap().powi(-2);
        num += w * d.max_slope * m.max_slope;
        den += w * m.max_slope * m.max_slope;
    }
    let a = num / den;
    assert!(rel(fit.a, a) < 1e-10, "{} vs {a}", fit.a);
    assert_eq!(fit.g0, g);
    assert!(rel(fit.covariance[1][1], 1.0 / den) < 1e-8);
    assert_eq!(fit.covariance[0][0], 0.0);
}

#[test]
fn below_threshold_data_is_not_fittable() {
    let data: Vec<SlopeMeasurement> = [2e-6, 3e-6, 4e-6]
        .iter()
        .map(|&p| SlopeMeasurement::new(p, 0.0))
        .collect();
    let out = fit_slope_power(
        &data,
        &SystemParams::reference_defaults(),
        &FitOptions::default(),
    );
    assert!(matches!(out, Err(Error::BelowThreshold(_))));
}

#[test]
fn two_point_threshold_line() {
    let data = [
        SlopeMeasurement::new(5e-6, 0.0),
        SlopeMeasurement::new(10e-6, 1.0),
    ];
    // a zero slope marks a non-rising point and is excluded
    assert!(fit_threshold_linear(&data).is_err());
    let data = [
        SlopeMeasurement::new(7.5e-6, 0.5),
        SlopeMeasurement::new(10e-6, 1.0),
    ];
    let t = fit_threshold_linear(&data).unwrap();
    assert!(rel(t.p_th, 5e-6) < 1e-12);
    assert!(t.std_error.is_none());
}

#[test]
fn threshold_line_standard_error_matches_monte_carlo() {
    let ps = [8e-6, 12e-6, 16e-6, 20e-6, 24e-6];
    let sigma = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let normal = Normal::<f64>::new(0.0, sigma).unwrap();
    let mut est = Vec::new();
    let mut reported = 0.0;
    for _ in 0..2000 {
        let data: Vec<SlopeMeasurement> = ps
            .iter()
            .map(|&p| SlopeMeasurement {
                uncertainty: Some(sigma),
                ..SlopeMeasurement::new(p, 1e5 * (p - 5e-6) + normal.sample(&mut rng))
            })
            .collect();
        let t = fit_threshold_linear(&data).unwrap();
        reported = t.std_error.unwrap();
        est.push(t.p_th);
    }
    let m = est.iter().sum::<f64>() / est.len() as f64;
    let sd = (est.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
    assert!(rel(sd, reported) < 0.1, "{sd:e} vs {reported:e}");
}

#[test]
fn linear_threshold_overestimates_model_threshold() {
    let sys = SystemParams::reference_defaults();
    let p_model = threshold_power(&sys, Beam::Pump).unwrap();
    for n in [4, 6, 8] {
        let data = synthetic(&powers(n), G0, A);
        let t = fit_threshold_linear(&data).unwrap();
        assert!(t.p_th >= p_model, "n={n}: {:e} < {p_model:e}", t.p_th);
    }
}

#[test]
fn thermal_displacement_scale() {
    let env = trace(1e-3, vec![1.0; 100]);
    let f = displacement_calibration(&env, 2.676e7, 4.58e-16).unwrap();
    assert!(rel(f, 3.35e-12) < 0.005, "{f:e}");
    let g = displacement_calibration(&env, 2.0 * 2.676e7, 4.58e-16).unwrap();
    assert!(rel(g / f, 2f64.sqrt()) < 1e-12);

    let drifting: Vec<f64> = (0..100).map(|k| 1.0 + 0.01 * k as f64).collect();
    assert!(matches!(
        displacement_calibration(&trace(1e-3, drifting), 2.676e7, 4.58e-16),
        Err(Error::Data(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn common_rescaling_leaves_coupling_unchanged(scale in 1e-3f64..1e3, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::<f64>::new(0.0, 0.03).unwrap();
        let data: Vec<SlopeMeasurement> = synthetic(&powers(6), G0, A)
            .into_iter()
            .map(|d| SlopeMeasurement {
                uncertainty: Some(0.03 * A),
                max_slope: (d.max_slope * (1.0 + normal.sample(&mut rng))).max(0.0),
                ..d
            })
            .collect();
        let scaled: Vec<SlopeMeasurement> = data
            .iter()
            .map(|d| SlopeMeasurement {
                max_slope: d.max_slope * scale,
                uncertainty: d.uncertainty.map(|u| u * scale),
                ..d.clone()
            })
            .collect();
        let sys = SystemParams::reference_defaults();
        let a = fit_slope_power(&data, &sys, &FitOptions::default()).unwrap();
        let b = fit_slope_power(&scaled, &sys, &FitOptions::default()).unwrap();
        prop_assert!(rel(b.g0, a.g0) < 1e-6);
        prop_assert!(rel(b.a, a.a * scale) < 1e-6);
    }
}
