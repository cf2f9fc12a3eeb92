//! Experiment driver: generate PDE data, fit Green's function estimators, and
//! export metrics, mesh-extrapolation tables, spectra and assembled kernels.

pub mod config;
pub mod error;
pub mod io;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// What `run` should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Generate,
    Train,
    Evaluate,
    Extrapolate,
    Spectra,
    Export,
}

/// Run one subcommand and return a one-line human summary.
pub fn run(command: Command, cfg: &ExperimentConfig) -> Result<String> {
    Ok(match command {
        Command::Generate => {
            let d = pipeline::generate(cfg)?;
            format!("wrote {} train and {} test samples to {}", d.train.n(), d.test.n(), cfg.out_dir.display())
        }
        Command::Train => {
            let (_, h) = pipeline::train_cmd(cfg)?;
            let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
            format!("trained: risk {:.3e}, train RSE {:.3e}", last(&h.risk), last(&h.rse))
        }
        Command::Evaluate => {
            let m = pipeline::evaluate(cfg)?;
            format!("train RSE {:.3e}, test RSE {:.3e}", m.train.rse, m.test.rse)
        }
        Command::Extrapolate => {
            let rows = pipeline::extrapolate(cfg)?;
            rows.iter()
                .map(|r| format!("m={} RSE {:.3e}", r.resolution, r.rse))
                .collect::<Vec<_>>()
                .join(", ")
        }
        Command::Spectra => {
            let s = pipeline::spectra(cfg)?;
            match s.kernel_g.decay {
                Some(d) => format!("kernel spectrum decay rate {:.3}", d.rate),
                None => "kernel spectrum written".to_string(),
            }
        }
        Command::Export => {
            pipeline::export(cfg)?;
            format!("exported assembled kernel to {}", cfg.out_dir.display())
        }
    })
}
