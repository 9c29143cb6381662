use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tallyband::harness::{read_summary, render_svg, run_experiment, verify, ExperimentConfig, Selector};
use tallyband::{Error, Execution};

#[derive(Parser)]
#[command(name = "tallyband", version, about = "Tallying-bandit benchmark runner")]
struct Cli {
    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every cell of an experiment config.
    Run(RunArgs),
    /// Like `run`, with the horizon list given on the command line.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated horizons, replacing the config's list.
        #[arg(long, value_delimiter = ',', required = true)]
        horizons: Vec<usize>,
    },
    /// Run the built-in self-checks and print a JSON report.
    Verify {
        /// Also write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Plot mean CPR against T from a summary CSV.
    Plot {
        #[arg(long)]
        summary: PathBuf,
        /// Row filter, e.g. `family=alternating,algorithm=se_tb|best_constant`.
        #[arg(long, default_value = "")]
        select: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to the config's `output` field.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run cells one at a time.
    #[arg(long)]
    sequential: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Run(args) => run(&args, None, cli.seed),
        Command::Sweep { run: args, horizons } => run(&args, Some(horizons), cli.seed),
        Command::Verify { report } => {
            let r = verify();
            let text = r.to_json_pretty();
            println!("{text}");
            if let Some(path) = report {
                std::fs::write(&path, &text).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
            }
            for c in r.failed() {
                eprintln!("check failed: {}", c.name);
            }
            Ok(if r.passed { 0 } else { 1 })
        }
        Command::Plot { summary, select, out } => {
            let rows = read_summary(&summary)?;
            let (svg, series) = render_svg(&rows, &Selector::parse(&select)?)?;
            write(&out, svg.as_bytes())?;
            for s in series {
                match s.slope {
                    Some(slope) => eprintln!("{}: {} horizons, log-log slope {slope:.3}", s.algorithm, s.means.len()),
                    None => eprintln!("{}: {} horizons", s.algorithm, s.means.len()),
                }
            }
            Ok(0)
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(args: &RunArgs, horizons: Option<Vec<usize>>, seed: Option<u64>) -> Result<u8, Error> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(h) = horizons {
        config.horizons = h;
    }
    if let Some(s) = seed {
        config.seeds.master = s;
    }
    config.validate()?;
    let out_dir = args
        .out
        .clone()
        .or_else(|| config.output.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `output`".into()))?;
    let exec = if args.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let output = run_experiment(&config, exec)?;
    output.write_to(&out_dir)?;
    eprintln!(
        "{} cells ok, {} failed; results in {}",
        output.rows.len(),
        output.failures.len(),
        out_dir.display()
    );
    for f in &output.failures {
        eprintln!("failed {}: {}", f.run_id, f.reason);
    }
    Ok(if output.has_capacity_failure() {
        3
    } else if output.failures.is_empty() {
        0
    } else {
        2
    })
}
