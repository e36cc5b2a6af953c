use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use incompressa::harness::{self, Experiment, Status};

#[derive(Parser, Debug)]
#[command(name = "incompressa", version, about = "Incompressible elasticity experiments")]
struct Cli {
    experiment: Experiment,
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: `output` from the config, else `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let cfg = match harness::load_config(&cli.config, cli.seed) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let out = cli.out.or_else(|| cfg.output.clone().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    match harness::run(cli.experiment, &cfg, &out) {
        Ok(s) => {
            for f in &s.files {
                println!("{}", f.display());
            }
            if s.status != Status::Complete {
                eprintln!("partial results: {}", s.failure.as_deref().unwrap_or("unknown failure"));
            }
            ExitCode::from(s.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
