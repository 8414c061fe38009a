use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use phforge_cli::error::{exit_code, ConfigError, EXIT_CONFIG, EXIT_OK};
use phforge_cli::{output, run, Command, Overrides};

/// Construct, certify and probe partially hyperbolic maps built from
/// geodesic flows and Dehn twists.
#[derive(Parser)]
#[command(name = "phforge", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Respectful metrics and cone certificates over a collar-length sweep.
    CertifyCollar(Flags),
    /// Roof-time search and certificates for the flow-box twist.
    CertifyFlowbox(Flags),
    /// Heuristic Lyapunov, transitivity and volume experiments.
    Experiments(Flags),
}

#[derive(Args)]
struct Flags {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated collar lengths.
    #[arg(long, value_delimiter = ',')]
    ell_list: Option<Vec<f64>>,
    /// Grid resolution (nodes per axis; cell count for experiments).
    #[arg(long)]
    grid: Option<usize>,
    /// Twist mode: identity, dehn, vp or both.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for report.json and results.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("PHFORGE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ConfigError::new(format!("PHFORGE_THREADS = '{v}' is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    configure_threads()?;
    let (cmd, flags) = match cli.command {
        Cmd::CertifyCollar(f) => (Command::CertifyCollar, f),
        Cmd::CertifyFlowbox(f) => (Command::CertifyFlowbox, f),
        Cmd::Experiments(f) => (Command::Experiments, f),
    };
    let overrides = Overrides {
        ell_list: flags.ell_list,
        grid: flags.grid,
        mode: flags.mode,
        seed: flags.seed,
        out: flags.out,
    };
    let out = run(cmd, flags.config.as_deref(), &overrides)?;
    output::write_outputs(&out.out_dir, &out.report, &out.table)?;
    println!("{}", out.summary);
    println!("wrote {}", out.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("phforge: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
