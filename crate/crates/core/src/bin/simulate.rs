use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cscr_core::experiment::{
    load_experiment, parse_protocols, parse_values, run_sweep, write_csv, SweepParam, SweepSpec,
};
use cscr_core::sim::simulate;
use cscr_core::{Error, Protocol};

/// Run CSCR / UNDERCOVER / LAUNCH simulations and write aggregate CSV.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Args {
    /// `key = value` configuration file. Besides simulation parameters it may
    /// set `sweep`, `sweep_values`, `protocols` and `seeds`; flags override.
    #[arg(long)]
    config: PathBuf,
    /// Sweep one of num_sus, num_pus, pu_activity, num_channels, num_flows.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated sweep values (defaults depend on the parameter).
    #[arg(long)]
    values: Option<String>,
    /// Comma-separated protocols [default: cscr,undercover,launch].
    #[arg(long)]
    protocols: Option<String>,
    /// Number of consecutive seeds starting at the configured seed [default: 10].
    #[arg(long)]
    seeds: Option<usize>,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the event trace of the first protocol at the base configuration.
    #[arg(long)]
    trace: Option<PathBuf>,
}

enum Failure {
    Config(Error),
    Runtime(String),
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(args: &Args) -> Result<(), Failure> {
    let (base, file) = load_experiment(&args.config).map_err(Failure::Config)?;
    let protocols = match &args.protocols {
        Some(p) => parse_protocols(p).map_err(Failure::Config)?,
        None => file.protocols.unwrap_or_else(|| Protocol::ALL.to_vec()),
    };
    let param = match &args.sweep {
        Some(s) => Some(s.parse::<SweepParam>().map_err(Failure::Config)?),
        None => file.sweep,
    };
    let seeds = args.seeds.or(file.seeds).unwrap_or(10);
    let mut spec = SweepSpec::new(&base, param, protocols.clone(), seeds);
    let values = match &args.values {
        Some(v) => Some(parse_values(v).map_err(Failure::Config)?),
        None => file.values,
    };
    if let Some(values) = values {
        spec.values = values;
    }

    let rows = run_sweep(&base, &spec).map_err(|e| match e {
        Error::InvalidConfig(_) | Error::InvalidSweep(_) => Failure::Config(e),
        other => Failure::Runtime(other.to_string()),
    })?;
    let io_err = |e: io::Error| Failure::Runtime(e.to_string());
    match &args.out {
        Some(path) => write_csv(BufWriter::new(File::create(path).map_err(io_err)?), &rows).map_err(io_err)?,
        None => write_csv(io::stdout().lock(), &rows).map_err(io_err)?,
    }

    if let Some(path) = &args.trace {
        let protocol = protocols.first().copied().unwrap_or(Protocol::Cscr);
        let raw = simulate(&base, protocol, true).map_err(|e| Failure::Runtime(e.to_string()))?;
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        for line in raw.trace.iter().flatten() {
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)?;
        eprintln!("trace {} ({} events) sha256 {}", path.display(), raw.events, raw.trace_hash);
    }
    Ok(())
}
