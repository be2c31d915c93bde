use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dafnn::harness::{self, Case, Method, Settings};
use dafnn::Result;

#[derive(Parser)]
#[command(
    name = "dafnn",
    version,
    about = "Train small feedforward networks with EnKF, ES-MDA or gradient descent"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Comma-separated run seeds [default: 1,2,3,4,5]
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Directory for report.json and the CSV artifacts
    #[arg(long)]
    out: Option<PathBuf>,
    /// TOML settings file
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        if let Some(seeds) = &self.seeds {
            s.seeds = Some(seeds.clone());
        }
        Ok(s)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one case over every seed
    Train {
        #[arg(long, value_enum)]
        case: Case,
        #[arg(long, value_enum)]
        method: Method,
        #[command(flatten)]
        common: Common,
    },
    /// Run all six case/method cells and print the median scores
    ReproducePaper {
        #[command(flatten)]
        common: Common,
    },
}

fn print_report(report: &harness::RunReport) {
    println!(
        "{} / {} (median over {} seeds)",
        report.case(),
        report.method(),
        report.runs.len()
    );
    for run in &report.runs {
        println!(
            "  seed {:>3}: validation RMSE {:.4}  R2 {:.4}   train RMSE {:.4}  R2 {:.4}   {:.2}s",
            run.seed,
            run.validation.rmse,
            run.validation.r2,
            run.train.rmse,
            run.train.r2,
            run.wall_time_secs
        );
    }
    if let Some(iters) = &report.iteration_medians {
        for it in iters {
            let s = it.scores.validation;
            println!(
                "  iteration {}: validation RMSE {:.4}  R2 {:.4}",
                it.iteration, s.rmse, s.r2
            );
        }
    }
    let m = report.median;
    println!(
        "  median : validation RMSE {:.4}  R2 {:.4}   train RMSE {:.4}  R2 {:.4}",
        m.validation.rmse, m.validation.r2, m.train.rmse, m.train.r2
    );
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            case,
            method,
            common,
        } => {
            let mut config = common.settings()?.run_config(case, method);
            config.out_dir = common.out.clone();
            let report = harness::run_experiment(&config)?;
            print_report(&report);
        }
        Command::ReproducePaper { common } => {
            let settings = common.settings()?;
            let out = common.out.as_deref();
            let reports = harness::reproduce(&settings, out)?;
            print!("{}", harness::summary_table(&reports));
            if let Some(dir) = out {
                harness::write_summary(&reports, &dir.join("summary.csv"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
