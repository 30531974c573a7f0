use std::path::PathBuf;
use std::process::ExitCode;

use bmcompact::config::Format;
use bmcompact::{CliError, Command, Overrides, Plan};
use clap::Parser;

/// Seeded experiments on random unconditional convex bodies.
#[derive(Debug, Parser)]
#[command(name = "bmcompact", version)]
struct Args {
    /// sample | gauge | conc | dist | separate | net
    #[arg(value_enum)]
    command: Command,
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format; repeat for several (overrides `output.formats`).
    #[arg(long, value_enum)]
    format: Vec<Format>,
    /// Worker threads (overrides `workers`).
    #[arg(long)]
    workers: Option<usize>,
    /// Cap on the number of enumerated maps for `net`.
    #[arg(long)]
    cap_enumeration: Option<u128>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(args) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: Args) -> Result<i32, CliError> {
    let loaded = bmcompact::load_config(&args.config)?;
    let overrides = Overrides {
        seed: args.seed,
        out: args.out,
        formats: args.format,
        workers: args.workers,
        cap_enumeration: args.cap_enumeration,
    };
    let base = args.config.parent().map(PathBuf::from).unwrap_or_default();
    let plan = Plan::new(args.command, loaded, overrides, &base)?;
    let outcome = bmcompact::run(&plan)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    for f in &outcome.failures {
        eprintln!("numeric failure: {f}");
    }
    Ok(outcome.exit_code())
}
