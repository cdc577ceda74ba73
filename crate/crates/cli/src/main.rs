use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use relscat::{run, Command};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Forward,
    Invert,
    Xray,
    Smatrix,
    Verify,
}

/// Scattering lab for the relativistic Schrodinger operator.
#[derive(Debug, Parser)]
#[command(name = "relscat", version)]
struct Args {
    command: Cmd,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for artifacts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, env = "RELSCAT_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let command = match args.command {
        Cmd::Forward => Command::Forward,
        Cmd::Invert => Command::Invert,
        Cmd::Xray => Command::Xray,
        Cmd::Smatrix => Command::Smatrix,
        Cmd::Verify => Command::Verify,
    };
    match run(command, &args.config, &args.out, args.seed) {
        Ok(done) => {
            print!("{}", done.summary);
            if !done.summary.ends_with('\n') {
                println!();
            }
            for f in &done.files {
                println!("wrote {}", f.display());
            }
            ExitCode::from(done.code as u8)
        }
        Err(f) => {
            eprintln!("{}", serde_json::to_string_pretty(&f.error).unwrap_or_default());
            ExitCode::from(f.code as u8)
        }
    }
}
