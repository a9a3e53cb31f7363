use clap::{Parser, Subcommand};
use shift_lab::config::ExperimentSpec;
use shift_lab::error::CliError;
use shift_lab::runner;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shift-lab", version, about = "Watermark-removal sweeps and stability-bound checks on closed-form diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Worker threads (0 = all cores). Results do not depend on this.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// Output directory (defaults to runs/<spec-stem> or <run-dir>/plots).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Keep per-cell trajectory traces and debug grids.
    #[arg(long, global = true)]
    keep_traces: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the (scheme x lambda) attack sweep and write sweep/summary CSVs.
    Sweep { spec: PathBuf },
    /// Run every stability and decoupling check and write theory.csv.
    VerifyTheory { spec: PathBuf },
    /// Export plot-ready long-format CSVs from a completed sweep.
    Plotdata { run_dir: PathBuf },
}

fn load_spec(path: &PathBuf) -> Result<(ExperimentSpec, String), CliError> {
    let text = std::fs::read_to_string(path)?;
    let spec = ExperimentSpec::parse(&text)?;
    Ok((spec, text))
}

fn run(cli: Cli) -> Result<i32, CliError> {
    match cli.command {
        Command::Sweep { spec } => {
            let (parsed, text) = load_spec(&spec)?;
            let out_dir = cli
                .out
                .or_else(|| parsed.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| runner::default_out_dir(&spec));
            let outcome =
                runner::execute_sweep(parsed, &text, &out_dir, cli.workers, cli.keep_traces)?;
            println!("wrote {} rows to {}", outcome.rows_written, out_dir.display());
            for (scheme, tau) in &outcome.taus {
                println!("tau[{scheme}] = {tau}");
            }
            for (scheme, min) in &outcome.minimal_lambda {
                match min {
                    Some(l) => println!("minimal lambda with ASR >= 0.95 for {scheme}: {l}"),
                    None => println!("no grid lambda reached ASR >= 0.95 for {scheme}"),
                }
            }
            println!("hierarchy: {}", outcome.hierarchy);
            Ok(0)
        }
        Command::VerifyTheory { spec } => {
            let (parsed, text) = load_spec(&spec)?;
            let out_dir = cli
                .out
                .or_else(|| parsed.output_dir.clone().map(PathBuf::from))
                .unwrap_or_else(|| runner::default_out_dir(&spec));
            let outcome = runner::execute_verify_theory(parsed, &text, &out_dir, cli.workers)?;
            for row in &outcome.rows {
                println!(
                    "{:<28} {:<28} bound={:<12} observed={:<24} {}",
                    row.name,
                    row.anchor,
                    row.bound.map(shift_lab::report::fmt_f64).unwrap_or_default(),
                    row.observed.map(shift_lab::report::fmt_f64).unwrap_or_default(),
                    row.pass
                );
            }
            if outcome.failures > 0 {
                println!("{} theory check(s) FAILED", outcome.failures);
                Ok(2)
            } else {
                println!("all theory checks passed");
                Ok(0)
            }
        }
        Command::Plotdata { run_dir } => {
            let out_dir = cli.out.unwrap_or_else(|| run_dir.join("plots"));
            runner::execute_plotdata(&run_dir, &out_dir)?;
            println!("wrote plot data to {}", out_dir.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
