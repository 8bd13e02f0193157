//! `snp`: command-line front end for the experiment pipelines.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use snp_core::config::{load_config, ExperimentConfig, ExperimentKind};
use snp_core::experiments::{exit_code, run_experiment_with, RunReport};
use snp_core::io::read_text;
use snp_core::Error;

#[derive(Parser)]
#[command(name = "snp", version, about = "Noise-pretrained sine networks: fitting, denoising and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    jobs: Option<usize>,
    /// Suppress progress lines on stderr.
    #[arg(long, short)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a procedural noise corpus as PNGs plus a manifest.
    GenNoise(Common),
    /// Pretrain one shared encoder per noise family and save checkpoints.
    Pretrain(Common),
    /// Fit test images from each initialization.
    Fit(Common),
    /// Denoise photon-limited images with oracle early stopping.
    Denoise(Common),
    /// Fit videos with per-frame low-rank residuals.
    VideoFit(Common),
    /// Denoise videos.
    VideoDenoise(Common),
    /// NTK target-energy curves.
    Ntk(Common),
    /// Filter-normalized loss-landscape slices.
    Landscape(Common),
    /// Fitting and denoising on the same images, with the summary table.
    Tradeoff(Common),
    /// Print the summary of an existing run and check its aggregates.
    Report {
        /// Run directory holding report.json, or the report file itself.
        #[arg(long)]
        out: PathBuf,
        /// Accepted for symmetry with the other commands; unused.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn resolve(kind: ExperimentKind, c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::new(kind),
    };
    if cfg.kind != kind {
        return Err(Error::Config {
            key: "kind".into(),
            line: 0,
            message: format!("config is for `{}`, command is `{}`", cfg.kind.name(), kind.name()),
        });
    }
    if let Some(o) = &c.out {
        cfg.out = Some(o.clone());
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(j) = c.jobs {
        cfg.jobs = j;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(kind: ExperimentKind, c: &Common) -> Result<(), Error> {
    let cfg = resolve(kind, c)?;
    let quiet = c.quiet;
    let report = run_experiment_with(&cfg, &|msg| {
        if !quiet {
            eprintln!("{msg}");
        }
    })?;
    print!("{}", report.summary_table());
    if let Some(out) = &cfg.out {
        println!("outputs in {}", out.display());
    }
    Ok(())
}

fn report(path: &Path) -> Result<(), Error> {
    let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
    let report = RunReport::from_json(&read_text(&file)?)?;
    print!("{}", report.summary_table());
    match report.aggregate_drift() {
        Some(d) if d <= 1e-12 => Ok(()),
        Some(d) => Err(Error::InvalidArgument(format!("aggregates differ from the rows by {d:e}"))),
        None => Err(Error::InvalidArgument("aggregates do not match the row groups".into())),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::GenNoise(c) => run(ExperimentKind::GenNoise, c),
        Command::Pretrain(c) => run(ExperimentKind::Pretrain, c),
        Command::Fit(c) => run(ExperimentKind::Fit, c),
        Command::Denoise(c) => run(ExperimentKind::Denoise, c),
        Command::VideoFit(c) => run(ExperimentKind::VideoFit, c),
        Command::VideoDenoise(c) => run(ExperimentKind::VideoDenoise, c),
        Command::Ntk(c) => run(ExperimentKind::Ntk, c),
        Command::Landscape(c) => run(ExperimentKind::Landscape, c),
        Command::Tradeoff(c) => run(ExperimentKind::Tradeoff, c),
        Command::Report { out, .. } => report(out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
