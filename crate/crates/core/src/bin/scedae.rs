use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use scedae::datasets::{self, LiftKind, LiftingTransform};
use scedae::experiment::{self, ExperimentConfig};
use scedae::metrics::{accuracy, ari_checked, nmi};
use scedae::{Error, SeededRng};

#[derive(Parser)]
#[command(name = "scedae", version, about = "Spectral clustering over ensembles of autoencoder encodings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Report path; overrides `output` in the config. Without either the
        /// report goes to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic dataset (`.csv` or binary, chosen by extension).
    Gen {
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Lift low-dimensional points: sigmoid_stack, sigmoid_squared or tan_sigmoid.
        #[arg(long)]
        lift: Option<String>,
        #[arg(long, default_value_t = 0)]
        lift_seed: u64,
    },
    /// Score predicted labels against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

#[derive(Serialize)]
struct Scores {
    n: usize,
    acc: f64,
    nmi: f64,
    ari: f64,
    ari_degenerate: bool,
}

fn exit_code(e: &Error) -> ExitCode {
    if e.is_config() {
        ExitCode::from(2)
    } else {
        ExitCode::from(3)
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = experiment::run(&cfg)?;
            match out.or_else(|| cfg.output.clone()) {
                Some(path) => experiment::write_report(&report, &path)?,
                None => println!("{}", report.to_json()),
            }
            let failed = report.failed_replicates();
            if failed > 0 {
                eprintln!("{failed} replicate(s) failed; see the report for details");
                return Err(Error::InvalidArgument(format!("{failed} replicate(s) failed")));
            }
            Ok(())
        }
        Command::Gen {
            dataset,
            seed,
            out,
            lift,
            lift_seed,
        } => {
            let mut ds = datasets::generate(&dataset, seed)?;
            if let Some(kind) = lift {
                let kind: LiftKind = serde_json::from_value(serde_json::Value::String(kind.clone()))
                    .map_err(|_| Error::Config(format!("unknown lift '{kind}'")))?;
                let t = LiftingTransform::sample(kind, ds.x.cols(), SeededRng::new(lift_seed))
                    .map_err(|e| Error::Config(e.to_string()))?;
                ds = ds.with_x(datasets::lift(&ds.x, &t)?);
            }
            if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
                datasets::save_csv(&ds, &out)
            } else {
                datasets::save_binary(&ds, &out)
            }
        }
        Command::Eval { pred, truth } => {
            let load = |p: &PathBuf| {
                datasets::load_labels(p).map_err(|e| match e {
                    Error::Io(io) => Error::Config(format!("{}: {io}", p.display())),
                    other => other,
                })
            };
            let (p, t) = (load(&pred)?, load(&truth)?);
            let (ari, ari_degenerate) = ari_checked(&p, &t)?;
            let scores = Scores {
                n: p.len(),
                acc: accuracy(&p, &t)?,
                nmi: nmi(&p, &t)?,
                ari,
                ari_degenerate,
            };
            println!("{}", serde_json::to_string_pretty(&scores).expect("scores serialize"));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
