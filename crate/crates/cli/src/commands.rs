use std::path::Path;
use std::sync::Mutex;

use hopfcal::amplitude::{
    max_slope_point, steady_state_amplitude, threshold_constant, threshold_power,
};
use hopfcal::constants::TWO_PI;
use hopfcal::estimation::{
    extract_max_slope, fit_slope_power, fit_threshold_linear, max_slope_with_derivative,
    FitOptions, FitResult, LinearThreshold, SlopeMeasurement, SlopeOutcome,
};
use hopfcal::langevin::{simulate_full, LockIn, Observable};
use hopfcal::model::{Beam, SystemParams};
use hopfcal::pipeline::{run_one, simulation_for, summarize, RunRecord, Spread};
use hopfcal::spectral::{
    detection_factor, forward_calibration_spectrum, g0_from_calibration, integrated_area,
    ReflectionParams, SpectrumRecord,
};
use hopfcal::Error;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{parse_power, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{self, OutputDir};

fn or_none<T: Into<Value>>(r: hopfcal::Result<T>, none: &str) -> CliResult<Value> {
    match r {
        Ok(v) => Ok(v.into()),
        Err(Error::NoThreshold(_)) => Ok(Value::from(none)),
        Err(e) => Err(e.into()),
    }
}

fn probe_reflection(sys: &SystemParams) -> ReflectionParams {
    ReflectionParams {
        detuning: sys.detuning(Beam::Probe),
        kappa: sys.probe.kappa(),
        kappa_in: sys.probe.kappa_in,
        omega_m: sys.mech.omega_m,
    }
}

pub fn derive(cfg: &RunConfig) -> CliResult<Value> {
    let sys = cfg.params()?;
    let n_bar = sys.mech.n_bar()?;
    let x_zpf = sys.mech.x_zpf()?;
    let tone = cfg.calibration.tone();
    let p = probe_reflection(&sys);
    let k = detection_factor(p.kappa, p.kappa_in, p.omega_m, tone.omega_b)?;
    let none = "none (no antidamping)";
    let mx = max_slope_point(&sys)?;
    Ok(json!({
        "g0_rad_s": sys.g0,
        "n_bar": n_bar,
        "x_zpf_m": x_zpf,
        "q_thermal_m": (2.0 * n_bar).sqrt() * x_zpf,
        "drive_sq_pump": sys.drive_sq(Beam::Pump),
        "drive_sq_probe": sys.drive_sq(Beam::Probe),
        "alpha": sys.alpha(),
        "detection_factor": k,
        "threshold_constant_W": or_none(threshold_constant(&sys), none)?,
        "p_th_W": or_none(threshold_power(&sys, Beam::Pump), none)?,
        "pump_power_W": sys.pump.power,
        "xi_st": steady_state_amplitude(&sys)?,
        "xi_mx": mx.map(|m| m.xi_mx),
        "s_mx": mx.map(|m| m.s_mx),
    }))
}

fn outcome_json(o: &SlopeOutcome) -> Value {
    match o {
        SlopeOutcome::Rise(r) => json!({
            "rise": true,
            "max_slope": r.slope,
            "std_error": r.std_error,
            "time_s": r.time,
            "t_low_s": r.t_low,
            "t_high_s": r.t_high,
            "window_samples": r.window_samples,
        }),
        SlopeOutcome::NoRise {
            initial,
            final_level,
        } => json!({
            "rise": false,
            "initial_level": initial,
            "final_level": final_level,
        }),
    }
}

fn run_label(power: f64, seed: u64) -> String {
    format!("P{:.4e}_seed{seed}", power)
}

struct SimulatedRun {
    label: String,
    power: f64,
    trajectory: Vec<u8>,
    envelope: Vec<u8>,
    outcome: SlopeOutcome,
    duration: f64,
}

pub fn simulate(cfg: &RunConfig, powers: &[f64]) -> CliResult<Value> {
    let sys = cfg.params()?;
    let pc = cfg.pipeline(&sys, powers.to_vec());
    pc.validate()?;
    let seed = cfg.seed;
    let runs = powers
        .par_iter()
        .map(|&p| -> CliResult<SimulatedRun> {
            let (psys, mut sim, _) = simulation_for(&pc, p, seed)?;
            if let Some(d) = cfg.simulation.duration {
                sim.duration = d;
                sim.pump_on_time = cfg.simulation.pump_on_time.min(d);
            }
            let traj = simulate_full(&psys, &sim)?;
            let env = LockIn::new(psys.mech.omega_m / TWO_PI, pc.lock_in_bandwidth)
                .with_order(pc.lock_in_order)
                .demodulate(&traj, &psys, &Observable::Displacement)?
                .since(pc.settle_time)
                .decimate(pc.envelope_decimation);
            let outcome = extract_max_slope(&env, &pc.extraction)?;
            let xi_per_meter = psys.xi_from_amplitude(1.0 / psys.mech.x_zpf()?);
            Ok(SimulatedRun {
                label: run_label(p, seed),
                power: p,
                trajectory: output::trajectory_csv(&traj, cfg.simulation.trajectory_stride)?,
                envelope: output::envelope_csv(&env, xi_per_meter)?,
                outcome,
                duration: sim.duration,
            })
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut out = OutputDir::create(&cfg.output_dir)?;
    let mut summary = Vec::new();
    let mut slopes = Vec::new();
    for r in &runs {
        out.write(&format!("trajectory_{}.csv", r.label), &r.trajectory)?;
        out.write(&format!("envelope_{}.csv", r.label), &r.envelope)?;
        let mut entry = outcome_json(&r.outcome);
        entry["power_W"] = r.power.into();
        entry["seed"] = seed.into();
        entry["duration_s"] = r.duration.into();
        summary.push(entry);
        let (slope, sd) = match r.outcome {
            SlopeOutcome::Rise(x) => (x.slope, Some(x.std_error).filter(|s| *s > 0.0)),
            SlopeOutcome::NoRise { .. } => (0.0, None),
        };
        slopes.push(SlopeMeasurement {
            pump_power: r.power,
            max_slope: slope,
            uncertainty: sd,
            trace_id: r.label.clone(),
        });
    }
    out.write("slopes.csv", &output::slopes_csv(&slopes)?)?;
    let report = json!({ "runs": summary });
    out.write_json("summary.json", &report)?;
    out.write_manifest("simulate", cfg)?;
    Ok(report)
}

fn column(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.trim() == name)
}

pub fn read_slopes(path: &Path) -> CliResult<Vec<SlopeMeasurement>> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let need = |n: &str| {
        column(&headers, n).ok_or_else(|| {
            CliError::Data(format!(
                "{}: missing column `{n}` (expected power_W, slope_V_per_s[, sigma])",
                path.display()
            ))
        })
    };
    let (ip, is) = (need("power_W")?, need("slope_V_per_s")?);
    let isig = column(&headers, "sigma");
    let iid = column(&headers, "trace_id");
    let mut data = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let field = |i: usize| rec.get(i).unwrap_or("").trim();
        let bad = |what: &str, v: &str| CliError::Data(format!("line {line}: bad {what} `{v}`"));
        let power = parse_power(field(ip)).map_err(|_| bad("power", field(ip)))?;
        let slope: f64 = field(is).parse().map_err(|_| bad("slope", field(is)))?;
        let sigma = match isig.map(field) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<f64>().map_err(|_| bad("sigma", s))?),
        };
        let m = SlopeMeasurement {
            pump_power: power,
            max_slope: slope,
            uncertainty: sigma,
            trace_id: iid.map(field).unwrap_or_default().to_string(),
        };
        m.validate()
            .map_err(|e| CliError::Data(format!("line {line}: {e}")))?;
        data.push(m);
    }
    if data.is_empty() {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(data)
}

fn fit_json(fit: &FitResult) -> Value {
    json!({
        "g0_rad_s": fit.g0,
        "g0_2pi_Hz": fit.g0 / TWO_PI,
        "g0_std_rad_s": fit.g0_std(),
        "a_V_per_s": fit.a,
        "a_std_V_per_s": fit.a_std(),
        "cov": fit.covariance,
        "chi2": fit.chi2,
        "iterations": fit.iterations,
        "converged": fit.converged,
    })
}

fn threshold_json(t: &LinearThreshold, sys: &SystemParams) -> Value {
    json!({
        "p_th_W": t.p_th,
        "p_th_std_W": t.std_error,
        "slope_per_W": t.c,
        "g0_rad_s": hopfcal::amplitude::g0_from_threshold(t.p_th, sys).ok(),
    })
}

pub fn fit(cfg: &RunConfig, slopes: &Path) -> CliResult<Value> {
    let sys = cfg.params()?;
    let data = read_slopes(slopes)?;
    let slope_fit = fit_slope_power(&data, &sys, &FitOptions::default());
    let threshold = fit_threshold_linear(&data);
    if let (Err(e), Err(_)) = (&slope_fit, &threshold) {
        return Err(e.clone().into());
    }
    let mut report = match &slope_fit {
        Ok(f) => fit_json(f),
        Err(e) => json!({ "g0_rad_s": null, "a_V_per_s": null, "cov": null, "chi2": null,
                          "converged": false, "error": e.to_string() }),
    };
    report["threshold"] = match &threshold {
        Ok(t) => threshold_json(t, &sys),
        Err(e) => json!({ "error": e.to_string() }),
    };

    let mut out = OutputDir::create(&cfg.output_dir)?;
    if let Ok(f) = &slope_fit {
        let p_max = data.iter().map(|d| d.pump_power).fold(0.0, f64::max) * 1.1;
        let n = cfg.analysis.curve_points.max(2);
        let grid: Vec<f64> = (1..=n).map(|k| p_max * k as f64 / n as f64).collect();
        let model = max_slope_with_derivative(&sys, &grid, f.g0)?;
        let rows: Vec<Vec<f64>> = grid
            .iter()
            .zip(&model)
            .map(|(p, (s, _))| vec![*p, f.a * s])
            .collect();
        out.write(
            "model_curve.csv",
            &output::columns_csv(&["power_W", "model_slope_V_per_s"], &rows)?,
        )?;
    }
    out.write_json("fit.json", &report)?;
    out.write_manifest("fit", cfg)?;
    Ok(report)
}

pub fn read_spectrum(path: &Path) -> CliResult<SpectrumRecord> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers()?.clone();
    let (Some(i_f), Some(i_p)) = (
        column(&headers, "freq_Hz"),
        column(&headers, "psd_V2_per_Hz"),
    ) else {
        return Err(CliError::Data(format!(
            "{}: expected columns freq_Hz, psd_V2_per_Hz",
            path.display()
        )));
    };
    let (mut freqs, mut psd) = (Vec::new(), Vec::new());
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| -> CliResult<f64> {
            let v = rec.get(i).unwrap_or("").trim();
            v.parse()
                .map_err(|_| CliError::Data(format!("line {}: bad number `{v}`", row + 2)))
        };
        freqs.push(get(i_f)?);
        psd.push(get(i_p)?);
    }
    SpectrumRecord::new(freqs, psd).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn spectrum_csv(rec: &SpectrumRecord) -> CliResult<Vec<u8>> {
    let rows: Vec<Vec<f64>> = rec
        .freqs
        .iter()
        .zip(&rec.psd)
        .map(|(f, p)| vec![*f, *p])
        .collect();
    output::columns_csv(&["freq_Hz", "psd_V2_per_Hz"], &rows)
}

pub fn calibrate_tone(
    cfg: &RunConfig,
    spectrum: Option<&Path>,
    areas: Option<(f64, f64)>,
    area_std: Option<(f64, f64)>,
) -> CliResult<Value> {
    let sys = cfg.params()?;
    let c = &cfg.calibration;
    let tone = c.tone();
    tone.validate()?;
    let n_bar = match c.n_bar {
        Some(n) => n,
        None => sys.mech.n_bar()?,
    };
    let p = probe_reflection(&sys);
    let k = match c.detection_factor {
        Some(k) => k,
        None => detection_factor(p.kappa, p.kappa_in, p.omega_m, tone.omega_b)?,
    };
    let (dv2_m, dv2_b) = match (areas, spectrum) {
        (Some(a), _) => a,
        (None, Some(path)) => {
            let rec = read_spectrum(path)?;
            let fm = sys.mech.omega_m / TWO_PI;
            let fb = tone.omega_b / TWO_PI;
            let mech = c.mech_band_hz.unwrap_or([fm - 300.0, fm + 300.0]);
            let band = c.tone_band_hz.unwrap_or([fb - 100.0, fb + 100.0]);
            let area = |b: [f64; 2], what: &str| {
                integrated_area(&rec, (b[0], b[1]))
                    .map_err(|e| CliError::Data(format!("{what} band: {e}")))
            };
            (area(mech, "mechanical")?, area(band, "calibration")?)
        }
        (None, None) => {
            return Err(CliError::Config(
                "calibrate-tone needs a spectrum file or --areas".into(),
            ))
        }
    };
    let g0 = g0_from_calibration(dv2_m, dv2_b, &tone, n_bar, k)?;
    let (sm, sb) = area_std
        .map(|(m, b)| (m / dv2_m, b / dv2_b))
        .unwrap_or((c.area_m_rel_std, c.area_b_rel_std));
    let terms = [
        c.beta_std / c.beta,
        c.detection_factor_std / k,
        c.n_bar_std / (2.0 * n_bar),
        sm / 2.0,
        sb / 2.0,
    ];
    let linear: f64 = terms.iter().map(|t| t.abs()).sum();
    let quadrature = terms.iter().map(|t| t * t).sum::<f64>().sqrt();
    let report = json!({
        "dv2_m_V2": dv2_m,
        "dv2_b_V2": dv2_b,
        "detection_factor": k,
        "n_bar": n_bar,
        "beta_rad": tone.beta,
        "g0_rad_s": g0,
        "g0_2pi_Hz": g0 / TWO_PI,
        "g0_std_rad_s": g0 * linear,
        "g0_std_2pi_Hz": g0 * linear / TWO_PI,
        "g0_std_quadrature_rad_s": g0 * quadrature,
    });
    let mut out = OutputDir::create(&cfg.output_dir)?;
    out.write_json("calibration.json", &report)?;
    out.write_manifest("calibrate-tone", cfg)?;
    Ok(report)
}

fn spread_json(s: &Option<Spread>) -> Value {
    match s {
        Some(s) => json!({
            "median_rad_s": s.median,
            "mean_rad_s": s.mean,
            "std_rad_s": s.std,
            "count": s.count,
        }),
        None => Value::Null,
    }
}

fn run_json(r: &RunRecord) -> Value {
    let mut v = outcome_json(&r.outcome);
    v["power_W"] = r.power.into();
    v["seed"] = r.seed.into();
    v["pump_on_s"] = r.plan.pump_on_time.into();
    v["duration_s"] = r.plan.duration.into();
    v
}

/// Printable summary table and, if no slope fit was possible, the reason.
pub struct PipelineOutcome {
    pub table: String,
    pub below_threshold: Option<String>,
}

pub fn pipeline(cfg: &RunConfig, powers: &[f64]) -> CliResult<PipelineOutcome> {
    let sys = cfg.params()?;
    let pc = cfg.pipeline(&sys, powers.to_vec());
    pc.validate()?;
    let out = OutputDir::create(&cfg.output_dir)?;

    let jobs: Vec<(f64, u64)> = pc
        .seeds
        .iter()
        .flat_map(|&s| pc.powers.iter().map(move |&p| (p, s)))
        .collect();
    let xi_per_meter = sys.xi_from_amplitude(1.0 / sys.mech.x_zpf()?);
    let shared = Mutex::new(out);
    let results: Vec<hopfcal::Result<RunRecord>> = jobs
        .par_iter()
        .map(|&(p, s)| -> CliResult<hopfcal::Result<RunRecord>> {
            let label = run_label(p, s);
            let res = run_one(&pc, p, s);
            let record = match &res {
                Ok(r) => run_json(r),
                Err(e) => json!({ "power_W": p, "seed": s, "error": e.to_string() }),
            };
            let envelope = match &res {
                Ok(RunRecord {
                    envelope: Some(env),
                    ..
                }) => Some(output::envelope_csv(env, xi_per_meter)?),
                _ => None,
            };
            let mut out = shared.lock().unwrap_or_else(|e| e.into_inner());
            out.write_json(&format!("run_{label}.json"), &record)?;
            if let Some(bytes) = envelope {
                out.write(&format!("envelope_{label}.csv"), &bytes)?;
            }
            Ok(res)
        })
        .collect::<CliResult<_>>()?;
    let mut out = shared.into_inner().unwrap_or_else(|e| e.into_inner());

    let runs = match results.into_iter().collect::<hopfcal::Result<Vec<_>>>() {
        Ok(runs) => runs,
        Err(e) => {
            out.write_manifest("pipeline", cfg)?;
            return Err(e.into());
        }
    };

    let rep = summarize(&pc, runs)?;
    let mut per_seed = Vec::new();
    for s in &rep.seeds {
        out.write(
            &format!("slopes_seed{}.csv", s.seed),
            &output::slopes_csv(&s.measurements)?,
        )?;
        per_seed.push(json!({
            "seed": s.seed,
            "slope_fit": match &s.slope_fit {
                Ok(f) => fit_json(f),
                Err(e) => json!({ "error": e.to_string() }),
            },
            "threshold": match &s.threshold {
                Ok(t) => threshold_json(t, &sys),
                Err(e) => json!({ "error": e.to_string() }),
            },
        }));
    }
    if let Some(tone) = &pc.tone {
        let n_bar = sys.mech.n_bar()?;
        let fwd = forward_calibration_spectrum(
            sys.g0,
            n_bar,
            tone,
            &probe_reflection(&sys),
            &pc.chain,
            pc.sideband_model,
            &pc.layout,
        )?;
        out.write("spectrum.csv", &spectrum_csv(&fwd.record)?)?;
    }
    let report = json!({
        "true_g0_rad_s": rep.true_g0,
        "powers_W": pc.powers,
        "seeds": pc.seeds,
        "slope_method": spread_json(&rep.slope_g0),
        "threshold_method": spread_json(&rep.threshold_g0),
        "calibration_tone": rep.tone.map(|t| json!({
            "g0_rad_s": t.g0,
            "dv2_m_V2": t.dv2_m,
            "dv2_b_V2": t.dv2_b,
            "detection_factor": t.detection_factor,
        })),
        "not_crossed_W": rep.not_crossed,
        "per_seed": per_seed,
    });
    out.write_json("report.json", &report)?;
    out.write_manifest("pipeline", cfg)?;

    let g = rep.true_g0;
    let row = |name: &str, s: Option<Spread>| match s {
        Some(s) => format!(
            "{name:<18} {:>10.5} {:>10.5} {:>+9.2}%  (n = {})\n",
            s.median / TWO_PI,
            s.std / TWO_PI,
            100.0 * (s.median - g) / g,
            s.count
        ),
        None => format!("{name:<18} {:>10}\n", "n/a"),
    };
    let mut table = format!(
        "{:<18} {:>10} {:>10} {:>10}\n",
        "estimator", "g0/2pi Hz", "spread", "error"
    );
    table += &format!("{:<18} {:>10.5}\n", "true", g / TWO_PI);
    table += &row("slope method", rep.slope_g0);
    table += &row("threshold method", rep.threshold_g0);
    table += &row(
        "calibration tone",
        rep.tone.and_then(|t| Spread::of(&[t.g0])),
    );
    if !rep.not_crossed.is_empty() {
        let list: Vec<String> = rep.not_crossed.iter().map(|p| format!("{p:e}")).collect();
        table += &format!("threshold not crossed at P = {} W\n", list.join(", "));
    }
    let below_threshold = (rep.slope_g0.is_none()
        && rep
            .seeds
            .iter()
            .any(|s| matches!(s.slope_fit, Err(Error::BelowThreshold(_)))))
    .then(|| "no slope-method estimate at any seed".to_string());
    Ok(PipelineOutcome {
        table,
        below_threshold,
    })
}
