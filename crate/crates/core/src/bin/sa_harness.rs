use std::process::ExitCode;

use clap::Parser;
use stochapprox::harness::{execute, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = cli.resolve().and_then(execute);
    match result {
        Ok(summary) => {
            println!(
                "terminal mean squared error {:.6e}, 90% CI [{:.6e}, {:.6e}]",
                summary.terminal_mean,
                summary.terminal_ci.lower.exp(),
                summary.terminal_ci.upper.exp()
            );
            println!("wrote {} and {}", summary.csv_path.display(), summary.metadata_path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
