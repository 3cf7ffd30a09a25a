use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use hopfcal::constants::TWO_PI;
use hopfcal::estimation::max_slope_with_derivative;
use hopfcal::model::SystemParams;
use serde_json::Value;
use tempfile::TempDir;

fn hopfcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopfcal"))
        .args(args)
        .output()
        .expect("failed to launch hopfcal")
}

fn json_ok(args: &[&str]) -> Value {
    let out = hopfcal(args);
    assert!(
        out.status.success(),
        "hopfcal {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is not JSON")
}

fn write(dir: &TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_column(path: &Path, name: &str) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(path).unwrap();
    let idx = rdr
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == name)
        .unwrap();
    rdr.records()
        .map(|r| r.unwrap()[idx].parse().unwrap())
        .collect()
}

#[test]
fn derive_reports_default_quantities() {
    let v = json_ok(&["derive"]);
    let k = v["detection_factor"].as_f64().unwrap();
    assert!((k - 5.65).abs() < 0.01, "K = {k}");
    let p_th = v["p_th_W"].as_f64().unwrap();
    assert!((p_th - 4.41e-6).abs() < 0.02e-6, "P_th = {p_th}");
    let n_bar = v["n_bar"].as_f64().unwrap();
    assert!((n_bar / 267.6e5 - 1.0).abs() < 1e-3);
    assert!(v["xi_st"].as_f64().unwrap() > 0.0);
}

#[test]
fn derive_without_antidamping_reports_none() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"system": {"pump": {"detuning_2pi": 0}}}"#,
    );
    let v = json_ok(&["derive", "--config", &cfg]);
    assert_eq!(v["p_th_W"], "none (no antidamping)");
    assert_eq!(v["threshold_constant_W"], "none (no antidamping)");
}

#[test]
fn doubling_g0_quarters_threshold() {
    let dir = TempDir::new().unwrap();
    let base = json_ok(&["derive"]);
    let g0 = base["g0_rad_s"].as_f64().unwrap() / TWO_PI;
    let cfg = write(
        &dir,
        "c.json",
        &format!(r#"{{"system": {{"g0_2pi": {}}}}}"#, 2.0 * g0),
    );
    let v = json_ok(&["derive", "--config", &cfg]);
    let ratio = v["p_th_W"].as_f64().unwrap() / base["p_th_W"].as_f64().unwrap();
    assert!((ratio - 0.25).abs() < 1e-9, "ratio {ratio}");
}

#[test]
fn unknown_config_key_is_rejected_with_line() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        "{\n  \"simulation\": {\n    \"tiemstep\": 1e-9\n  }\n}\n",
    );
    let out = hopfcal(&["derive", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("tiemstep") && err.contains("line 3"), "{err}");
}

#[test]
fn simulate_is_reproducible_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        r#"{"simulation": {"duration": 0.03, "pump_on_time": 0.01}}"#,
    );
    let run = |seed: &str, out: &str| {
        let out = dir.path().join(out);
        let o = hopfcal(&[
            "simulate",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--powers",
            "21uW",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        read_json(&out.join("manifest.json"))["files"].clone()
    };
    let a = run("7", "a");
    let b = run("7", "b");
    let c = run("8", "c");
    assert_eq!(a, b);
    let key = "trajectory_P2.1000e-5_seed7.csv";
    assert!(a[key].is_string());
    assert_ne!(a[key], c["trajectory_P2.1000e-5_seed8.csv"]);
}

#[test]
fn simulate_below_threshold_does_not_grow() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let v = json_ok(&[
        "simulate",
        "--powers",
        "3uW",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(v["runs"][0]["rise"], false);
    let xi = csv_column(&out.join("envelope_P3.0000e-6_seed0.csv"), "xi");
    let n = xi.len();
    let early = xi[..n / 10].iter().sum::<f64>() / (n / 10) as f64;
    let late_max = xi[n / 2..].iter().cloned().fold(0.0, f64::max);
    assert!(
        late_max < 10.0 * early,
        "early {early}, late max {late_max}"
    );
}

#[test]
fn simulate_slopes_increase_with_power() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    json_ok(&[
        "simulate",
        "--powers",
        "6.1uW,21uW",
        "--out",
        out.to_str().unwrap(),
    ]);
    let p = csv_column(&out.join("slopes.csv"), "power_W");
    let s = csv_column(&out.join("slopes.csv"), "slope_V_per_s");
    assert_eq!(p, vec![6.1e-6, 21e-6]);
    assert!(s[0] > 0.0 && s[1] > s[0], "{s:?}");
}

#[test]
fn fit_recovers_coupling_from_model_slopes() {
    let dir = TempDir::new().unwrap();
    let sys = SystemParams::reference_defaults();
    let (g0, a) = (1.1 * sys.g0, 3.7e-10);
    let powers: Vec<f64> = (0..6).map(|k| 6e-6 + 4.8e-6 * k as f64).collect();
    let model = max_slope_with_derivative(&sys, &powers, g0).unwrap();
    let mut text = String::from("power_W,slope_V_per_s\n");
    for (p, (s, _)) in powers.iter().zip(&model) {
        text += &format!("{p:e},{:e}\n", a * s);
    }
    let csv = write(&dir, "slopes.csv", &text);
    let out = dir.path().join("o");
    let v = json_ok(&["fit", &csv, "--out", out.to_str().unwrap()]);
    assert_eq!(v["converged"], true);
    let fit_g0 = v["g0_rad_s"].as_f64().unwrap();
    let fit_a = v["a_V_per_s"].as_f64().unwrap();
    assert!((fit_g0 / g0 - 1.0).abs() < 1e-6, "g0 {fit_g0} vs {g0}");
    assert!((fit_a / a - 1.0).abs() < 1e-6);
    assert!(out.join("fit.json").exists());
    let curve = csv_column(&out.join("model_curve.csv"), "model_slope_V_per_s");
    assert!(curve.len() > 10 && curve.iter().all(|s| s.is_finite()));
}

#[test]
fn fit_two_points_gives_threshold_line() {
    let dir = TempDir::new().unwrap();
    let c = 2.0e-4;
    let csv = write(
        &dir,
        "s.csv",
        &format!(
            "power_W,slope_V_per_s\n10uW,{:e}\n20uW,{:e}\n",
            c * 5e-6,
            c * 15e-6
        ),
    );
    let out = dir.path().join("o");
    let v = json_ok(&["fit", &csv, "--out", out.to_str().unwrap()]);
    let p_th = v["threshold"]["p_th_W"].as_f64().unwrap();
    assert!((p_th / 5e-6 - 1.0).abs() < 1e-9, "{p_th}");
    assert!(v["error"].as_str().unwrap().contains("3 points"));
}

#[test]
fn fit_rejects_malformed_csv() {
    let dir = TempDir::new().unwrap();
    let csv = write(&dir, "s.csv", "power_W,slope_V_per_s\n10uW,fast\n");
    let out = dir.path().join("o");
    let o = hopfcal(&["fit", &csv, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn fit_below_threshold_only_is_not_fittable() {
    let dir = TempDir::new().unwrap();
    let csv = write(
        &dir,
        "s.csv",
        "power_W,slope_V_per_s\n1uW,0\n2uW,0\n3uW,0\n",
    );
    let out = dir.path().join("o");
    let o = hopfcal(&["fit", &csv, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("threshold"));
}

#[test]
fn calibrate_tone_with_reported_areas() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let v = json_ok(&[
        "calibrate-tone",
        "--areas",
        "2.8e-10,1.669e-8",
        "--area-std",
        "0.4e-10,0.001e-8",
        "--out",
        out.to_str().unwrap(),
    ]);
    let g0 = v["g0_2pi_Hz"].as_f64().unwrap();
    let sd = v["g0_std_2pi_Hz"].as_f64().unwrap();
    assert!((g0 - 0.327).abs() < 0.0005, "{g0}");
    assert!((sd - 0.033).abs() < 0.001, "{sd}");
}

fn gaussian_peak(f: f64, center: f64, width: f64, area: f64) -> f64 {
    let z = (f - center) / width;
    area * (-0.5 * z * z).exp() / (width * TWO_PI.sqrt())
}

#[test]
fn calibrate_tone_integrates_spectrum() {
    let dir = TempDir::new().unwrap();
    let (am, ab) = (3.1e-10, 1.5e-8);
    let mut text = String::from("freq_Hz,psd_V2_per_Hz\n");
    let mut f = 229.0e3;
    while f < 237.6e3 {
        let psd =
            gaussian_peak(f, 229.753e3, 15.0, am) + gaussian_peak(f, 237.0e3, 3.0, ab) + 1e-22;
        text += &format!("{f:e},{psd:e}\n");
        f += 0.25;
    }
    let spectrum = write(&dir, "psd.csv", &text);
    let out = dir.path().join("o");
    let from_spectrum = json_ok(&["calibrate-tone", &spectrum, "--out", out.to_str().unwrap()]);
    let from_areas = json_ok(&[
        "calibrate-tone",
        "--areas",
        &format!("{am:e},{ab:e}"),
        "--out",
        out.to_str().unwrap(),
    ]);
    let m = from_spectrum["dv2_m_V2"].as_f64().unwrap();
    assert!((m / am - 1.0).abs() < 0.02, "{m}");
    let (g1, g2) = (
        from_spectrum["g0_rad_s"].as_f64().unwrap(),
        from_areas["g0_rad_s"].as_f64().unwrap(),
    );
    assert!((g1 / g2 - 1.0).abs() < 0.02, "{g1} vs {g2}");
}

#[test]
fn calibrate_tone_rejects_zero_modulation() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "c.json", r#"{"calibration": {"beta": 0}}"#);
    let out = dir.path().join("o");
    let o = hopfcal(&[
        "calibrate-tone",
        "--areas",
        "1e-10,1e-8",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_below_threshold_reports_not_crossed() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");
    let o = hopfcal(&[
        "pipeline",
        "--powers",
        "2uW,3uW",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(5));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("threshold not crossed"), "{stdout}");
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["not_crossed_W"].as_array().unwrap().len(), 2);
    assert!(report["slope_method"].is_null());
    assert!(out.join("run_P2.0000e-6_seed0.json").exists());
    assert!(out.join("manifest.json").exists());
}
