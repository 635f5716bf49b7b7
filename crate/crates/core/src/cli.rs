//! `sim` command line: load a config, run, write the CSV and a summary.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::Parser;

use crate::config::SimulationConfig;
use crate::engine::{SimError, SimOptions, Simulation};
use crate::simnet::{LatencySource, DEFAULT_MEDIAN_MS, DEFAULT_SIGMA};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_STALLED: i32 = 4;

#[derive(Debug, Clone, Parser, PartialEq)]
#[command(name = "sim", version, about = "Deterministic LightChain network simulator")]
pub struct CliOptions {
    /// Simulation config file (KEY = VALUE lines)
    #[arg(long, value_name = "FILE")]
    pub config: PathBuf,
    /// Per-entity metrics CSV
    #[arg(long, value_name = "FILE", default_value = "simulation.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Pairwise latencies drawn from this file, one ms value per line
    #[arg(long, value_name = "FILE", conflicts_with_all = ["latency_median", "latency_sigma"])]
    pub latency_samples: Option<PathBuf>,
    /// Median of the builtin log-normal latency model, ms
    #[arg(long, value_name = "MS")]
    pub latency_median: Option<f64>,
    /// Shape of the builtin log-normal latency model
    #[arg(long, value_name = "S")]
    pub latency_sigma: Option<f64>,
    /// Print the summary only, do not write the CSV
    #[arg(long)]
    pub summary_only: bool,
    /// Run all structural checks every N events
    #[arg(long, value_name = "N")]
    pub check_invariants: Option<u64>,
    /// Print both skip graphs after the run
    #[arg(long)]
    pub dump_overlay: bool,
}

impl CliOptions {
    pub fn latency_source(&self) -> Result<LatencySource, crate::simnet::SimnetError> {
        match &self.latency_samples {
            Some(path) => LatencySource::from_file(path),
            None => LatencySource::builtin(
                self.latency_median.unwrap_or(DEFAULT_MEDIAN_MS),
                self.latency_sigma.unwrap_or(DEFAULT_SIGMA),
            ),
        }
    }
}

pub fn exit_code(err: &SimError) -> i32 {
    match err {
        SimError::Config(_) => EXIT_CONFIG,
        SimError::Stalled { .. } => EXIT_STALLED,
        _ => EXIT_FAILURE,
    }
}

/// Runs the command and returns its exit status.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let opts = match CliOptions::try_parse_from(args) {
        Ok(o) => o,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };

    let cfg = match SimulationConfig::from_path(&opts.config) {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(stderr, "config error in {}: {e}", opts.config.display());
            return EXIT_CONFIG;
        }
    };
    let latency = match opts.latency_source() {
        Ok(l) => l,
        Err(e) => {
            let _ = writeln!(stderr, "{e}");
            return EXIT_USAGE;
        }
    };
    let sim_opts = SimOptions {
        seed: opts.seed,
        latency,
        check_invariants_every: opts.check_invariants,
        ..SimOptions::default()
    };

    let mut sim = match Simulation::new(&cfg, sim_opts) {
        Ok(s) => s,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            return exit_code(&e);
        }
    };
    if let Err(e) = sim.run() {
        let _ = writeln!(stderr, "error: {e}");
        return exit_code(&e);
    }

    if !opts.summary_only {
        let written = File::create(&opts.out)
            .map_err(|e| e.to_string())
            .and_then(|f| {
                let mut w = BufWriter::new(f);
                sim.write_csv(&mut w).map_err(|e| e.to_string())?;
                w.flush().map_err(|e| e.to_string())
            });
        if let Err(e) = written {
            let _ = writeln!(stderr, "cannot write {}: {e}", opts.out.display());
            return EXIT_FAILURE;
        }
    }
    if opts.dump_overlay {
        let _ = write!(stdout, "{}", sim.overlay().dump());
    }
    let _ = writeln!(stdout, "{}", sim.report());
    if !opts.summary_only {
        let _ = writeln!(stdout, "csv written to {}", opts.out.display());
    }
    EXIT_OK
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let o = CliOptions::try_parse_from(["sim", "--config", "a.config"]).unwrap();
        assert_eq!(o.seed, 42);
        assert_eq!(o.out, PathBuf::from("simulation.csv"));
        assert!(!o.summary_only && !o.dump_overlay);
        assert_eq!(o.latency_source().unwrap(), LatencySource::default());
    }

    #[test]
    fn samples_conflict_with_builtin_parameters() {
        assert!(CliOptions::try_parse_from([
            "sim",
            "--config",
            "a",
            "--latency-samples",
            "x",
            "--latency-median",
            "20"
        ])
        .is_err());
    }

    #[test]
    fn missing_config_is_usage_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["sim"], &mut out, &mut err), EXIT_USAGE);
        assert!(String::from_utf8(err).unwrap().contains("Usage"));
    }

    #[test]
    fn unreadable_config_is_config_error() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(
            ["sim", "--config", "/nonexistent/simulation.config"],
            &mut out,
            &mut err,
        );
        assert_eq!(code, EXIT_CONFIG);
    }
}
