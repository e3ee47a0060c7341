use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sgdlab::experiment::{invariant_checks, parse_config, run_experiment_with_threads, summary_json};
use sgdlab::optimizers::{required_steps_raspgd, required_steps_ssgd};

#[derive(Parser, Debug)]
#[command(name = "sgdlab", version, about = "Run and check subgradient-method experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment and write its traces and summary.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Base directory for the config's output paths.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        #[arg(long)]
        verbose: bool,
    },
    /// Run the invariant suites and the experiment's per-run checks without writing outputs.
    Check {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = default_threads())]
        threads: usize,
        #[arg(long)]
        verbose: bool,
    },
    /// Print the step count required to reach a target accuracy.
    #[command(allow_negative_numbers = true)]
    Steps {
        #[arg(long, value_enum)]
        alg: StepsAlg,
        #[arg(long = "G")]
        grad_bound: f64,
        #[arg(long)]
        diam: f64,
        #[arg(long)]
        eps: f64,
        /// Use the bound for objectives with Lipschitz gradient (ssgd only).
        #[arg(long)]
        lipschitz: bool,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StepsAlg {
    Ssgd,
    Raspgd,
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(command: Command) -> sgdlab::Result<bool> {
    match command {
        Command::Run {
            config,
            out_dir,
            threads,
            verbose,
        } => {
            init_logging(verbose);
            let exp = parse_config(&std::fs::read_to_string(&config)?)?;
            log::info!("running {} trials of {} with T = {}", exp.config.trials, exp.config.algorithm, exp.steps);
            let report = run_experiment_with_threads(&exp, Some(&out_dir), threads.max(1))?;
            if exp.config.outputs.summary_path.is_none() {
                print!("{}", summary_json(&report.summary)?);
            }
            for (name, tally) in &report.summary.checks {
                if tally.failed > 0 {
                    eprintln!("check {name}: {} of {} trials failed", tally.failed, tally.failed + tally.passed);
                }
            }
            Ok(report.summary.all_checks_passed)
        }
        Command::Check {
            config,
            threads,
            verbose,
        } => {
            init_logging(verbose);
            let mut exp = parse_config(&std::fs::read_to_string(&config)?)?;
            exp.config.outputs = Default::default();
            let mut ok = true;
            for (name, passed) in invariant_checks(&exp, 1000) {
                println!("{:<36} {}", name, if passed { "pass" } else { "FAIL" });
                ok &= passed;
            }
            let report = run_experiment_with_threads(&exp, None, threads.max(1))?;
            for (name, tally) in &report.summary.checks {
                println!(
                    "{:<36} {} ({}/{})",
                    name,
                    if tally.failed == 0 { "pass" } else { "FAIL" },
                    tally.passed,
                    tally.passed + tally.failed
                );
            }
            Ok(ok && report.summary.all_checks_passed)
        }
        Command::Steps {
            alg,
            grad_bound,
            diam,
            eps,
            lipschitz,
        } => {
            init_logging(false);
            let t = match alg {
                StepsAlg::Ssgd => required_steps_ssgd(grad_bound, diam, eps, lipschitz)?,
                StepsAlg::Raspgd => {
                    if lipschitz {
                        return Err(sgdlab::Error::InvalidArgument("--lipschitz applies to ssgd only".into()));
                    }
                    required_steps_raspgd(grad_bound, diam, eps)?
                }
            };
            println!("{t}");
            Ok(true)
        }
    }
}
