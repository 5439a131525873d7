use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdmac_core::config::load_scenario;
use fdmac_core::engine::{run_traced, write_csv, MetricsReport, RunError};
use fdmac_core::experiments::{run_experiment, summary_csv, Experiment, ExperimentOutput};
use fdmac_core::trace::write_trace;

#[derive(Parser)]
#[command(name = "fdmac", version, about = "Full-duplex MAC simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file and write one CSV row per repeat.
    Run {
        file: PathBuf,
        /// CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Event trace of the first repeat.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Overrides `[run] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `[run] repeats`.
        #[arg(long)]
        repeats: Option<u32>,
    },
    /// Run a canned experiment and check it against its bands.
    Paper {
        /// fd-vs-hd, bufdepth-sweep, hidden-injection, snooper-collisions or all.
        which: String,
        /// Write `<experiment>.csv` and `summary.csv` here instead of stdout.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Invariant(String),
    Io(String),
    Bands,
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Invalid(m) => Failure::Config(m),
            RunError::Invariant(m) => Failure::Invariant(m),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> Failure + '_ {
    move |e| Failure::Io(format!("{}: {e}", path.display()))
}

fn cmd_run(
    file: &Path,
    out: Option<&Path>,
    trace: Option<&Path>,
    seed: Option<u64>,
    repeats: Option<u32>,
) -> Result<(), Failure> {
    let mut scn = load_scenario(file).map_err(|e| Failure::Config(format!("{}: {e}", file.display())))?;
    if let Some(s) = seed {
        scn.seed = s;
    }
    if let Some(r) = repeats {
        if r == 0 {
            return Err(Failure::Config("--repeats must be positive".into()));
        }
        scn.repeats = r;
    }
    let base = scn.seed;
    let mut reports: Vec<MetricsReport> = Vec::new();
    for r in 0..scn.repeats {
        let mut one = scn.clone();
        one.seed = base.wrapping_add(u64::from(r));
        let output = run_traced(&one, r == 0 && trace.is_some())?;
        if let (Some(path), Some(rows)) = (trace, output.trace) {
            let f = fs::File::create(path).map_err(io_err(path))?;
            write_trace(io::BufWriter::new(f), &rows).map_err(io_err(path))?;
        }
        reports.push(output.report);
    }
    let written = match out {
        Some(path) => {
            let f = fs::File::create(path).map_err(io_err(path))?;
            write_csv(f, &reports)
        }
        None => write_csv(io::stdout().lock(), &reports),
    };
    written.map_err(|e| Failure::Io(e.to_string()))
}

fn cmd_paper(which: &str, out_dir: Option<&Path>) -> Result<(), Failure> {
    let list: Vec<Experiment> = if which == "all" {
        Experiment::ALL.to_vec()
    } else {
        vec![which.parse().map_err(Failure::Config)?]
    };
    let mut outputs: Vec<ExperimentOutput> = Vec::new();
    for e in list {
        outputs.push(run_experiment(e, false)?);
    }
    let summary = summary_csv(&outputs);
    match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            for o in &outputs {
                let p = dir.join(format!("{}.csv", o.experiment.name()));
                fs::write(&p, &o.csv).map_err(io_err(&p))?;
            }
            let p = dir.join("summary.csv");
            fs::write(&p, &summary).map_err(io_err(&p))?;
            print!("{summary}");
        }
        None => {
            let mut w = io::stdout().lock();
            for o in &outputs {
                let _ = writeln!(w, "# {}\n{}", o.experiment.name(), o.csv);
            }
            let _ = write!(w, "# summary\n{summary}");
        }
    }
    if outputs.iter().all(ExperimentOutput::passed) {
        Ok(())
    } else {
        Err(Failure::Bands)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            file,
            out,
            trace,
            seed,
            repeats,
        } => cmd_run(file, out.as_deref(), trace.as_deref(), *seed, *repeats),
        Command::Paper { which, out_dir } => cmd_paper(which, out_dir.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Invariant(m)) => {
            eprintln!("invariant violated: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Bands) => {
            eprintln!("one or more acceptance bands failed");
            ExitCode::from(1)
        }
    }
}
