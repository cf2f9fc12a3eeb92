use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use greenfn::{run, Command, ExperimentConfig};

/// Learn Green's functions of linear PDEs from input/output samples.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Config file, or the name of a bundled config such as `fig1_helmholtz`.
    #[arg(long)]
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Merge the config's reduced-scale `[desk]` table.
    #[arg(long)]
    desk: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override any config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut overrides = args.overrides;
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    let result = ExperimentConfig::load(&args.config, args.desk, &overrides).and_then(|mut cfg| {
        if let Some(out) = args.out {
            cfg.out_dir = out;
        }
        run(args.command, &cfg)
    });
    match result {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
