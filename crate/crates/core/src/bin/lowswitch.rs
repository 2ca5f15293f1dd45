use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lowswitch::harness::{compare_adaptivity, diagnostics_csv, lemma_suite, run_experiment, ExperimentConfig, ExperimentResult};
use lowswitch::Error;

#[derive(Parser)]
#[command(name = "lowswitch", version, about = "Low-switching-cost episodic RL experiments")]
struct Cli {
    /// Directory for CSV output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Compare a gated learner with its always-switch counterpart.
    Compare {
        #[arg(long = "config-a")]
        config_a: PathBuf,
        #[arg(long = "config-b")]
        config_b: PathBuf,
    },
    /// Randomized checks of the covariance lemmas.
    Lemmas {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn write(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn out_dir(cli: Option<&PathBuf>, config: &ExperimentConfig) -> Result<PathBuf, Error> {
    let dir = cli.cloned().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|source| Error::Io {
        path: dir.clone(),
        source,
    })?;
    Ok(dir)
}

fn write_result(dir: &Path, prefix: &str, res: &ExperimentResult) -> Result<(), Error> {
    write(&dir.join(format!("{prefix}episodes.csv")), &res.episodes_csv())?;
    write(&dir.join(format!("{prefix}diagnostics.csv")), &diagnostics_csv(&res.runs))?;
    for run in &res.runs {
        write(
            &dir.join(format!("{prefix}switches_seed{}.csv", run.seed)),
            &run.switches.to_csv(run.horizon()),
        )?;
    }
    write(&dir.join(format!("{prefix}summary.txt")), &res.summary_text())
}

fn main_inner(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            cfg.validate()?;
            let dir = out_dir(cli.out.as_ref(), &cfg)?;
            let res = run_experiment(&cfg)?;
            write_result(&dir, "", &res)?;
            print!("{}", res.summary_text());
            println!("output: {}", dir.display());
        }
        Command::Compare { config_a, config_b } => {
            let a = ExperimentConfig::load(&config_a)?;
            let b = ExperimentConfig::load(&config_b)?;
            a.validate()?;
            b.validate()?;
            let dir = out_dir(cli.out.as_ref(), &a)?;
            let cmp = compare_adaptivity(&a, &b)?;
            write_result(&dir, "gated_", &cmp.gated)?;
            write_result(&dir, "ungated_", &cmp.ungated)?;
            let table = cmp.to_csv();
            write(&dir.join("comparison.csv"), &table)?;
            print!("{table}");
            println!("output: {}", dir.display());
        }
        Command::Lemmas { trials, seed } => {
            let report = lemma_suite(trials, seed)?;
            println!("{report}");
            if !report.passed() {
                return Err(Error::InvariantViolation("lemma suite failed".into()));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                Error::InvariantViolation(_) => ExitCode::from(3),
                _ => ExitCode::from(1),
            }
        }
    }
}
