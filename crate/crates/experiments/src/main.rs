use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mmkf::config::ExperimentKind;
use mmkf::output::write_records;
use mmkf::{oracle, ExperimentConfig, HarnessError};

#[derive(Parser)]
#[command(name = "mmkf", version, about = "Multi-model ensemble Kalman filter twin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cycled assimilation experiment.
    Assimilate(RunArgs),
    /// Forecast sweep from a cycling analysis.
    Forecast(RunArgs),
    /// Direct/iterative/BLUE equivalence and property suite.
    Oracle {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Uses the reduced cycle counts of the `[quick]` section.
    #[arg(long)]
    quick: bool,
    #[arg(long)]
    out: PathBuf,
}

fn run(args: &RunArgs, kind: ExperimentKind) -> Result<(), HarnessError> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if config.kind != kind {
        return Err(HarnessError::Config(format!(
            "{} describes a {:?} experiment",
            args.config.display(),
            config.kind
        )));
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.quick {
        config = config.quick();
    }
    let out = mmkf::run(&config)?;
    let (csv, json) = write_records(&out.records, &out.summary, &args.out)?;
    for e in &out.summary.entries {
        if let Some(crps) = e.metrics.get("crps") {
            println!(
                "{:<24} {:<9} lead {:<5.2} crps {:.4} ± {:.4}  rmse {:.4}",
                e.method,
                e.phase.as_str(),
                e.lead,
                crps.mean,
                crps.stderr,
                e.metrics.get("rmse").map_or(f64::NAN, |s| s.mean)
            );
        }
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Assimilate(a) => run(a, ExperimentKind::Assimilation),
        Command::Forecast(a) => run(a, ExperimentKind::Forecast),
        Command::Oracle { seed } => {
            let reports = oracle::run_all(*seed);
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed) {
                Ok(())
            } else {
                std::process::exit(1)
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
