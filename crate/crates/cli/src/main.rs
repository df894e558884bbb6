//! `optoqsd` command-line driver.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use optoqsd::config::RunConfig;
use optoqsd::run::{self, Artifacts, CompareInputs};

/// Worker-count override for the trajectory pool.
const WORKERS_ENV: &str = "OPTOQSD_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "optoqsd", version, about = "Non-Markovian TTCFs and spectra for linearized cavity optomechanics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Flat JSON config; omitted keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve for F1..F4 and write coeffs.csv.
    Coeffs(Common),
    /// Run the configured method; write coeffs.csv, ttcf.csv, spectrum.csv.
    Simulate(Common),
    /// Transform an existing ttcf.csv into spectrum.csv.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Trace to transform (default: <out>/ttcf.csv).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the configured reference route (pseudomode or markov-lindblad).
    Oracle(Common),
    /// Compare two traces, or the configured method against its oracle.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Reference `t,re,im` file; without it both traces are computed
        #[arg(long, requires = "candidate")]
        reference: Option<PathBuf>,
        /// Candidate `t,re,im` file
        #[arg(long, requires = "reference")]
        candidate: Option<PathBuf>,
        /// `t,sigma` file enabling the pointwise band test.
        #[arg(long, requires = "candidate")]
        sigma: Option<PathBuf>,
        /// Band width in units of sigma.
        #[arg(long, default_value_t = 5.0)]
        band: f64,
    },
    /// Empirical noise moments against the kernel; writes noise.csv.
    NoiseTest(Common),
}

fn load(common: &Common, command: &str) -> anyhow::Result<RunConfig> {
    let (mut cfg, present) = match &common.config {
        Some(path) => {
            let loaded = RunConfig::load(path)?;
            (loaded.config, loaded.present)
        }
        None => (RunConfig::default(), Vec::new()),
    };
    let relevant = run::relevant_keys(command);
    for key in present.iter().filter(|k| !relevant.contains(&k.as_str())) {
        info!("`{command}` ignores config key `{key}`");
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn workers() -> anyhow::Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(v) => {
            let n: usize = v.trim().parse().with_context(|| format!("{WORKERS_ENV}={v} is not a worker count"))?;
            anyhow::ensure!(n >= 1, "{WORKERS_ENV} must be >= 1");
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn report(art: &Artifacts) {
    for f in &art.files {
        println!("{}", f.display());
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    let art = match cli.command {
        Command::Coeffs(c) => run::run_coeffs(&load(&c, "coeffs")?)?,
        Command::Simulate(c) => run::run_simulate(&load(&c, "simulate")?, workers()?)?,
        Command::Spectrum { common, input } => {
            let cfg = load(&common, "spectrum")?;
            let input = input.unwrap_or_else(|| cfg.out_dir.join("ttcf.csv"));
            run::run_spectrum(&cfg, &input)?
        }
        Command::Oracle(c) => run::run_oracle(&load(&c, "oracle")?)?,
        Command::Compare {
            common,
            reference,
            candidate,
            sigma,
            band,
        } => {
            let cfg = load(&common, "compare")?;
            run::run_compare(
                &cfg,
                &CompareInputs {
                    reference,
                    candidate,
                    sigma,
                    band,
                },
                workers()?,
            )?
        }
        Command::NoiseTest(c) => run::run_noise_test(&load(&c, "noise-test")?)?,
    };
    report(&art);
    if art.pass == Some(false) {
        warn!("check failed; see summary in the output directory");
    }
    Ok(art.pass.unwrap_or(true))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
