//! `nonlocal-kpp` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 solver failure, 64 usage error.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Experiment;
use run::{Manifest, Output, RunError};

#[derive(Parser, Debug)]
#[command(name = "nonlocal-kpp", version, about = "Stationary nonlocal Fisher-KPP experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory [default: `output_dir` from the config, else `out`]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads [default: all cores]
    #[arg(long, env = "NONLOCAL_KPP_THREADS", value_name = "INT")]
    threads: Option<usize>,
    /// Recorded in the manifest; no experiment draws random numbers
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Minimal solution at `solver.epsilon` via radius continuation
    Solve(Common),
    /// Solutions over `solver.eps_list` on one ball
    Sweep(Common),
    /// Sub-solution validation over `barriers.eps_list` and super-solution search
    Barriers(Common),
    /// Kernel moments for `moments.betas`
    Moments(Common),
    /// Moment sharpness study for power-tail kernels
    Appendix(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 64,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (exp, common) = match cli.command {
        Command::Solve(c) => (Experiment::Solve, c),
        Command::Sweep(c) => (Experiment::Sweep, c),
        Command::Barriers(c) => (Experiment::Barriers, c),
        Command::Moments(c) => (Experiment::Moments, c),
        Command::Appendix(c) => (Experiment::Appendix, c),
    };
    match execute(exp, &common) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: one or more solves failed; see report.json");
            ExitCode::from(2)
        }
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(RunError::Solver(e)) => {
            eprintln!("solver error: {e}");
            ExitCode::from(2)
        }
        Err(RunError::Io(e)) => {
            eprintln!("output error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(exp: Experiment, common: &Common) -> Result<bool, RunError> {
    let cfg = config::load(&common.config)?;
    if let Some(e) = cfg.experiment {
        if e != exp {
            return Err(RunError::Config(config::ConfigError(format!(
                "{}: experiment = {e:?} does not match the subcommand {exp:?}",
                common.config.display()
            ))));
        }
    }
    if matches!(exp, Experiment::Solve | Experiment::Sweep | Experiment::Barriers | Experiment::Appendix) {
        cfg.resource()?;
    }
    if common.threads == Some(0) {
        return Err(RunError::Config(config::ConfigError("--threads must be at least 1".into())));
    }
    let dir = common.out.clone().or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let out = Output::new(&dir)?;
    out.json(
        "manifest.json",
        &Manifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            experiment: exp,
            config_path: common.config.display().to_string(),
            threads: common.threads,
            seed: common.seed,
            parallel: cfg!(feature = "parallel"),
            config: &cfg,
        },
    )?;
    #[cfg(feature = "parallel")]
    {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(t) = common.threads {
            b = b.num_threads(t);
        }
        b.build().map_err(|e| RunError::Io(e.to_string()))?.install(|| run::run(exp, &cfg, &out))
    }
    #[cfg(not(feature = "parallel"))]
    {
        run::run(exp, &cfg, &out)
    }
}
