use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use iqa_ambiguity::display::ViewingConditions;
use iqa_ambiguity::run::{cmd_benchmark, cmd_intervals, cmd_ladder, cmd_vdpmap, RunConfig};
use iqa_ambiguity::Error;
use log::info;

/// Ambiguity intervals of image quality metrics.
#[derive(Debug, Parser)]
#[command(name = "iqa-ambiguity", version, about)]
struct Cli {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Fraction of pixels that must be visibly different.
    #[arg(long, global = true)]
    k: Option<f64>,

    /// Viewing distance in display heights; repeat or comma-separate to sweep.
    #[arg(long, global = true, value_delimiter = ',')]
    distance: Vec<f64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate distortion ladders and a manifest.
    Ladder,
    /// Compute ambiguity intervals and width summaries.
    Intervals,
    /// Accuracy and ambiguity report against subjective scores.
    Benchmark {
        /// Subjective CSV: content,distortion,level,score,score_type.
        #[arg(long)]
        subjective: Option<PathBuf>,
    },
    /// Perceivableness map of one image pair.
    Vdpmap { reference: PathBuf, test: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(k) = cli.k {
        cfg.run.k = k;
    }
    if !cli.distance.is_empty() {
        cfg.display.distances = cli.distance.clone();
    }
    if cli.jobs.is_some() {
        cfg.run.jobs = cli.jobs;
    }
    Ok(cfg)
}

fn init_pool(jobs: Option<usize>) -> Result<(), Error> {
    match jobs {
        Some(0) => Err(Error::Config("--jobs must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string())),
        None => Ok(()),
    }
}

fn vdpmap_conditions(cfg: &RunConfig, cli: &Cli) -> Result<ViewingConditions, Error> {
    let distance = match cli.distance.as_slice() {
        [] => ViewingConditions::default().distance_multiple,
        [d] => *d,
        _ => return Err(Error::Config("vdpmap takes a single --distance".into())),
    };
    Ok(cfg.display.conditions(distance))
}

fn run(cli: &Cli) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    init_pool(cfg.run.jobs)?;
    let out: &Path = &cli.out;
    match &cli.command {
        Command::Ladder => {
            let rows = cmd_ladder(&cfg, out)?;
            info!("{} rungs written", rows.len());
        }
        Command::Intervals => {
            let results = cmd_intervals(&cfg, out)?;
            for r in &results {
                for s in &r.summaries {
                    info!(
                        "{}H {} {}: mean width {:?} (n = {})",
                        r.distance, s.metric, s.distortion, s.mean, s.n
                    );
                }
            }
        }
        Command::Benchmark { subjective } => {
            cmd_benchmark(&cfg, subjective.as_deref(), out)?;
        }
        Command::Vdpmap { reference, test } => {
            let vc = vdpmap_conditions(&cfg, cli)?;
            let s = cmd_vdpmap(reference, test, &vc, &cfg.vdp, out)?;
            println!(
                "mean {:.6} max {:.6} fraction_above {:.6}",
                s.mean, s.max, s.fraction_above
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
