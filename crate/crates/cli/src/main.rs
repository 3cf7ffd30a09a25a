mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_power_list, RunConfig};
use crate::error::{CliError, CliResult};

/// Slope-method and calibration-tone estimation of the optomechanical coupling g₀.
#[derive(Parser)]
#[command(name = "hopfcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated pump powers, e.g. "6uW,10.8uW,21e-6".
    #[arg(long, value_name = "LIST")]
    powers: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Print derived quantities as JSON.
    Derive {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate rises and write trajectories, envelopes and slopes.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit a slope-versus-power CSV (power_W, slope_V_per_s[, sigma]).
    Fit {
        slopes: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate g₀ from a calibration-tone spectrum (freq_Hz, psd_V2_per_Hz).
    CalibrateTone {
        spectrum: Option<PathBuf>,
        /// Integrated areas "DV2_M,DV2_B" in V² instead of a spectrum.
        #[arg(long, value_name = "M,B")]
        areas: Option<String>,
        /// Standard deviations of the two areas in V².
        #[arg(long, value_name = "M,B")]
        area_std: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Simulate, demodulate, extract and fit over a power sweep.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> CliResult<(RunConfig, Option<Vec<f64>>)> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    let powers = match &common.powers {
        Some(list) => {
            let p =
                parse_power_list(list).map_err(|e| CliError::Config(format!("--powers: {e}")))?;
            if p.is_empty() {
                return Err(CliError::Config("--powers: empty list".into()));
            }
            Some(p)
        }
        None => None,
    };
    Ok((cfg, powers))
}

fn threads() -> CliResult<Option<usize>> {
    match std::env::var("HOPFCAL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| {
                CliError::Config(format!(
                    "HOPFCAL_THREADS must be a positive integer, got `{v}`"
                ))
            }),
        Err(_) => Ok(None),
    }
}

fn pair(flag: &str, text: &str) -> CliResult<(f64, f64)> {
    let v: Vec<f64> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Config(format!("{flag}: bad value `{s}`")))
        })
        .collect::<CliResult<_>>()?;
    match v[..] {
        [m, b] => Ok((m, b)),
        _ => Err(CliError::Config(format!(
            "{flag} takes two comma-separated values"
        ))),
    }
}

fn print_json(v: &serde_json::Value) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Derive { common } => {
            let (mut cfg, powers) = load(&common)?;
            if let Some(p) = powers {
                if let [single] = p[..] {
                    cfg.system.pump.power = Some(config::Power(single));
                } else {
                    return Err(CliError::Config(
                        "derive takes a single --powers value".into(),
                    ));
                }
            }
            print_json(&commands::derive(&cfg)?)
        }
        Command::Simulate { common } => {
            let (cfg, powers) = load(&common)?;
            let powers = match powers {
                Some(p) => p,
                None => vec![cfg.params()?.pump.power],
            };
            let report =
                hopfcal::pipeline::with_threads(threads()?, || commands::simulate(&cfg, &powers))??;
            print_json(&report)
        }
        Command::Fit { slopes, common } => {
            let (cfg, _) = load(&common)?;
            print_json(&commands::fit(&cfg, &slopes)?)
        }
        Command::CalibrateTone {
            spectrum,
            areas,
            area_std,
            common,
        } => {
            let (cfg, _) = load(&common)?;
            let areas = areas.as_deref().map(|t| pair("--areas", t)).transpose()?;
            let area_std = area_std
                .as_deref()
                .map(|t| pair("--area-std", t))
                .transpose()?;
            print_json(&commands::calibrate_tone(
                &cfg,
                spectrum.as_deref(),
                areas,
                area_std,
            )?)
        }
        Command::Pipeline { common } => {
            let (cfg, powers) = load(&common)?;
            let powers =
                powers.unwrap_or_else(|| cfg.pipeline.powers.iter().map(|p| p.0).collect());
            let outcome =
                hopfcal::pipeline::with_threads(threads()?, || commands::pipeline(&cfg, &powers))??;
            print!("{}", outcome.table);
            match outcome.below_threshold {
                Some(msg) => Err(hopfcal::Error::BelowThreshold(msg).into()),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
