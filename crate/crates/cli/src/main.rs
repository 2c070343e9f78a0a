use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use consentry_cli::{cmd_run, cmd_sweep, output_dir, Vary};

#[derive(Parser)]
#[command(
    name = "consentry",
    version,
    about = "Run privacy-preserving consensus scenarios"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every trial of one scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the scenario's base seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $CONSENTRY_OUT or ./out).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a scenario over a grid of overrides.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Dotted config key and values, e.g. `topology.n=4,8,16`. Repeatable.
        #[arg(long, required = true)]
        vary: Vec<Vary>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("error")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => {
            let out = output_dir(out);
            cmd_run(&config, seed, &out).map(|o| {
                for r in &o.reports {
                    println!(
                        "trial {} seed {}: {}, {}/{} decided [{}], violations {}",
                        r.trial,
                        r.seed,
                        r.termination.name(),
                        r.decided_count(),
                        r.n,
                        r.decided_text(),
                        r.privacy_violations.len()
                    );
                }
                for p in &o.written {
                    println!("wrote {}", p.display());
                }
                o.exit_code()
            })
        }
        Command::Sweep { config, vary, out } => {
            let out = output_dir(out);
            cmd_sweep(&config, &vary, &out).map(|o| {
                for (cell, s) in &o.cells {
                    let keys: Vec<String> = cell.iter().map(|v| v.to_string()).collect();
                    println!(
                        "[{}] n={} trials={} passed={} messages_max={} rounds_max={}",
                        keys.join(", "),
                        s.n,
                        s.trials,
                        s.passed,
                        s.messages_max,
                        s.rounds_max.map(|r| r.to_string()).unwrap_or("-".into())
                    );
                }
                if let Some(k) = o.k_max {
                    println!("K = {k}");
                }
                for p in &o.written {
                    println!("wrote {}", p.display());
                }
                o.exit_code()
            })
        }
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
