use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use hopfcal::estimation::SlopeMeasurement;
use hopfcal::langevin::{EnvelopeTrace, Trajectory};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Collects written files and records their hashes for the manifest.
pub struct OutputDir {
    root: PathBuf,
    files: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn write_manifest(&mut self, command: &str, cfg: &RunConfig) -> CliResult<PathBuf> {
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(&serde_json::to_vec(cfg)?),
            seed: cfg.seed,
            config: cfg.clone(),
            files: self.files.clone(),
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        let path = self.root.join("manifest.json");
        fs::write(&path, bytes).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: String,
    config_sha256: String,
    seed: u64,
    config: RunConfig,
    files: BTreeMap<String, String>,
}

fn csv_bytes<F>(header: &[&str], mut rows: F) -> CliResult<Vec<u8>>
where
    F: FnMut(&mut csv::Writer<Vec<u8>>) -> CliResult<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    rows(&mut w)?;
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

pub fn trajectory_csv(traj: &Trajectory, stride: usize) -> CliResult<Vec<u8>> {
    let header = [
        "t_s",
        "alpha_pr_re",
        "alpha_pr_im",
        "alpha_pm_re",
        "alpha_pm_im",
        "beta_re",
        "beta_im",
    ];
    csv_bytes(&header, |w| {
        for k in (0..traj.len()).step_by(stride.max(1)) {
            let (a, p, b) = (traj.alpha_pr[k], traj.alpha_pm[k], traj.beta[k]);
            w.write_record([
                num(traj.times[k]),
                num(a.re),
                num(a.im),
                num(p.re),
                num(p.im),
                num(b.re),
                num(b.im),
            ])?;
        }
        Ok(())
    })
}

/// Envelope in meters with the matching dimensionless amplitude.
pub fn envelope_csv(env: &EnvelopeTrace, xi_per_meter: f64) -> CliResult<Vec<u8>> {
    csv_bytes(&["t_s", "v_m", "xi"], |w| {
        for (t, v) in env.times.iter().zip(&env.v) {
            w.write_record([num(*t), num(*v), num(v * xi_per_meter)])?;
        }
        Ok(())
    })
}

pub fn slopes_csv(data: &[SlopeMeasurement]) -> CliResult<Vec<u8>> {
    csv_bytes(&["power_W", "slope_V_per_s", "sigma", "trace_id"], |w| {
        for d in data {
            w.write_record([
                num(d.pump_power),
                num(d.max_slope),
                d.uncertainty.map_or(String::new(), num),
                d.trace_id.clone(),
            ])?;
        }
        Ok(())
    })
}

pub fn columns_csv(header: &[&str], rows: &[Vec<f64>]) -> CliResult<Vec<u8>> {
    csv_bytes(header, |w| {
        for r in rows {
            w.write_record(r.iter().map(|v| num(*v)))?;
        }
        Ok(())
    })
}
