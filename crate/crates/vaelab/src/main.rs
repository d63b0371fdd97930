//! Thin CLI over the experiment drivers. All logic lives in the library;
//! this binary only assembles an `ExperimentConfig` from the per-kind
//! defaults, an optional config file, and flag overrides.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vaelab::bench::{
    config_keys, run_covariance_study, run_mnist_denoise, run_phase_transition, run_pruning_study,
    run_selftest, ExperimentConfig, ExperimentKind, RunOutputs, Scale,
};

#[derive(Parser)]
#[command(name = "vaelab", version, about = "Robust manifold-recovery experiments", long_about = None, after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Config file of `key = value` lines layered over the defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for CSVs and checkpoints.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel cells.
    #[arg(long)]
    workers: Option<usize>,
    /// desk (default) or paper.
    #[arg(long)]
    scale: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Manifold recovery over a (dimension, corruption) grid.
    Phase(Common),
    /// Nonzero decoder-column counts over encoder/decoder depths.
    Prune(Common),
    /// Encoder-variance histograms and sorted mean diagonals.
    Covstats(Common),
    /// Denoising on MNIST digits (requires local IDX files).
    Mnist(Common),
    /// Fast smoke checks of the core numerics.
    Selftest,
}

fn keys_help() -> String {
    let mut out = String::from("Config keys:\n");
    for (k, v) in config_keys() {
        out.push_str(&format!("  {k:<22} {v}\n"));
    }
    out
}

fn build_config(kind: ExperimentKind, common: &Common) -> vaelab::Result<ExperimentConfig> {
    let scale = match common.scale.as_deref() {
        Some(s) => Scale::parse(s)?,
        None => Scale::Desk,
    };
    let mut cfg = match scale {
        Scale::Desk => ExperimentConfig::default_for(kind),
        Scale::Paper => ExperimentConfig::paper_scale(kind),
    };
    if let Some(path) = &common.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(workers) = common.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(outputs: &RunOutputs) {
    println!("wrote {} rows -> {}", outputs.rows.len(), outputs.results_csv.display());
    if let Some(p) = &outputs.histograms_csv {
        println!("histograms     -> {}", p.display());
    }
    if let Some(p) = &outputs.norms_csv {
        println!("sorted values  -> {}", p.display());
    }
    let failures = outputs.rows.iter().filter(|r| !r.converged).count();
    if failures > 0 {
        println!("{failures} cell(s) failed; see rows with converged=false");
    }
}

fn run() -> vaelab::Result<ExitCode> {
    match Cli::parse().command {
        Command::Phase(common) => {
            let cfg = build_config(ExperimentKind::Phase, &common)?;
            report(&run_phase_transition(&cfg)?);
        }
        Command::Prune(common) => {
            let cfg = build_config(ExperimentKind::Prune, &common)?;
            let study = run_pruning_study(&cfg)?;
            report(&study.outputs);
            println!("mean nonzero columns (true dimension {}):", cfg.kappa_true);
            for (model, ne, nd, mean) in &study.mean_counts {
                println!("  {model:<8} ne={ne} nd={nd}: {mean:.1}");
            }
        }
        Command::Covstats(common) => {
            let cfg = build_config(ExperimentKind::Covstats, &common)?;
            report(&run_covariance_study(&cfg)?);
        }
        Command::Mnist(common) => {
            let cfg = build_config(ExperimentKind::Mnist, &common)?;
            report(&run_mnist_denoise(&cfg)?);
        }
        Command::Selftest => {
            return Ok(if run_selftest() { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
