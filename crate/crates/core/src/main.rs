use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qbpsh::config::{self, Command, RunConfig, EXIT_INVALID_CONFIG, EXIT_RUNTIME};
use qbpsh::LabError;

/// Discrete psh envelopes, the S operator and Jensen-measure duality.
///
/// Reports go to --output, else $QBPSH_OUT, else ./qbpsh-out.
/// Exit codes: 0 all expectations pass, 1 some failed, 2 invalid config,
/// 3 runtime error.
#[derive(Parser)]
#[command(name = "qbpsh", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[arg(long, global = true)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run cases from a TOML config, or one case by name.
    Run {
        #[arg(long, conflicts_with_all = ["case", "resolution"])]
        config: Option<PathBuf>,
        #[arg(long)]
        case: Option<String>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// List the registered cases.
    List,
    /// Run one case at increasing resolutions.
    Ladder {
        #[arg(long)]
        case: String,
        #[arg(long, value_delimiter = ',', required = true)]
        resolutions: Vec<usize>,
    },
    /// Compare the envelope LP with the Jensen LP on random data.
    DualitySweep {
        #[arg(long, default_value = "Disc1D")]
        domain: String,
        #[arg(long, default_value_t = 7)]
        resolution: usize,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        tol_lp: Option<f64>,
    },
    /// Run a property suite.
    Suite {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn build(cli: Cli) -> Result<RunConfig, LabError> {
    let mut cfg = match cli.command {
        Cmd::Run { config: Some(path), .. } => RunConfig::load(&path)?,
        Cmd::Run { case: Some(case), resolution, .. } => {
            let mut c = RunConfig::new(Command::RunCase);
            c.cases = vec![case];
            c.resolutions = resolution.into_iter().collect();
            c
        }
        Cmd::Run { .. } => return Err(LabError::InvalidConfig("run needs --config or --case".into())),
        Cmd::List => RunConfig::new(Command::List),
        Cmd::Ladder { case, resolutions } => {
            let mut c = RunConfig::new(Command::Ladder);
            c.cases = vec![case];
            c.resolutions = resolutions;
            c
        }
        Cmd::DualitySweep { domain, resolution, samples, seed, tol_lp } => {
            let mut c = RunConfig::new(Command::DualitySweep);
            c.domain = Some(domain);
            c.resolutions = vec![resolution];
            c.samples = Some(samples);
            c.seed = Some(seed);
            c.tol_lp = tol_lp;
            c
        }
        Cmd::Suite { name, seed } => {
            let mut c = RunConfig::new(Command::Suite);
            c.suite = Some(name);
            c.seed = Some(seed);
            c
        }
    };
    if cli.output.is_some() {
        cfg.output = cli.output;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cfg = match build(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID_CONFIG as u8);
        }
    };
    if cfg.command == Command::List {
        print!("{}", config::list_cases());
        return ExitCode::SUCCESS;
    }
    match config::run(&cfg) {
        Ok(summary) => {
            for job in &summary.jobs {
                println!("{} {}", if job.passed { "PASS" } else { "FAIL" }, job.job);
                for f in &job.failures {
                    println!("  {f}");
                }
            }
            println!("reports in {}", cfg.output_dir().display());
            ExitCode::from(summary.exit_code() as u8)
        }
        Err(e @ LabError::InvalidConfig(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID_CONFIG as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME as u8)
        }
    }
}
