use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use hiersign_core::config::ExperimentConfig;
use hiersign_core::experiment::{run_plan, ExperimentError, ExperimentPlan, Sweep};

/// Runs hierarchical sign-SGD experiments and writes CSV results.
#[derive(Debug, Parser)]
#[command(name = "hiersign", version)]
struct Args {
    /// TOML experiment configuration (defaults apply when omitted).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep one axis: `algorithm`, `te`, `clustering` (QxM), `n_over_d`
    /// or `alpha`, e.g. `--sweep te=10,30,90`.
    #[arg(long)]
    sweep: Option<String>,
    /// Comma-separated seeds; defaults to `schedule.seed`.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Cap the training set at N samples.
    #[arg(long)]
    subsample: Option<usize>,
    /// Train on the synthetic quadratic instead of a dataset.
    #[arg(long)]
    synthetic: bool,
    /// Worker threads (0 = one per core). Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

fn plan(args: Args) -> Result<ExperimentPlan, ExperimentError> {
    let mut config = match &args.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::default(),
    };
    if args.subsample.is_some() {
        config.data.subsample = args.subsample;
    }
    let seeds = if args.seeds.is_empty() {
        vec![config.schedule.seed]
    } else {
        args.seeds
    };
    Ok(ExperimentPlan {
        sweep: args.sweep.as_deref().map(Sweep::parse).transpose()?,
        config,
        seeds,
        out_dir: args.out,
        synthetic: args.synthetic,
        workers: args.workers,
    })
}

fn main() -> ExitCode {
    let args = Args::parse();
    match plan(args).and_then(|p| run_plan(&p)) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
