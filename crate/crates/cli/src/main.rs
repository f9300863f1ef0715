use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use steinflow_cli::commands::{self, Engine};
use steinflow_cli::{CliError, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "steinflow", version, about = "Function-space SVGD for PDE-constrained Bayesian inversion")]
struct Cli {
    /// TOML run configuration; defaults apply to every missing key.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    /// Worker threads; one worker makes every run bit-reproducible.
    #[arg(long, global = true, env = "STEINFLOW_WORKERS")]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write noisy observations of the configured truth.
    Synthesize {
        /// Output directory; defaults to `model.data`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a sampler or optimiser on the data in `model.data`.
    Run {
        /// plain, mpo, pcn, map or gd; defaults to `svgd.algorithm`.
        #[arg(long)]
        algorithm: Option<String>,
        /// Number of particles.
        #[arg(long)]
        m: Option<usize>,
        /// SVGD iterations.
        #[arg(long)]
        iters: Option<usize>,
        /// Seed of the initial ensemble or the chain.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check derivatives and operator identities; exits nonzero on failure.
    Verify {
        /// Flip the adjoint sign to confirm the checks can fail.
        #[arg(long)]
        perturb_adjoint_sign: bool,
        /// Also write the JSON report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean, variance and covariance of a directory of field files.
    Stats {
        /// Directory of `.sfld` files.
        samples: PathBuf,
        /// Reference run or samples directory to compare against.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Output directory; defaults to `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::Config("--workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
    }
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synthesize { out } => {
            let dir = out.unwrap_or_else(|| cfg.model.data.clone());
            commands::synthesize(&cfg, &dir)
        }
        Command::Run { algorithm, m, iters, seed, out } => {
            let engine = match algorithm {
                Some(a) => Engine::parse(&a)?,
                None => Engine::parse(&format!("{:?}", cfg.svgd.algorithm).to_lowercase())?,
            };
            if let Some(m) = m {
                cfg.svgd.m = m;
            }
            if let Some(iters) = iters {
                cfg.svgd.iters = iters;
            }
            if let Some(seed) = seed {
                cfg.svgd.seed = seed;
                cfg.pcn.seed = seed;
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            commands::run(&cfg, engine, &dir)
        }
        Command::Verify { perturb_adjoint_sign, out } => {
            let report = commands::verify(&cfg, perturb_adjoint_sign)?;
            let text = serde_json::to_string_pretty(&report)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(path, text + "\n")?;
            }
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::Verification { failed });
            }
            Ok(())
        }
        Command::Stats { samples, reference, out } => {
            let dir = out.unwrap_or_else(|| cfg.output.dir.clone());
            commands::stats(&cfg, &samples, reference.as_deref(), &dir)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{report}");
            ExitCode::from(if matches!(e, CliError::Verification { .. }) { 1 } else { 2 })
        }
    }
}
