//! `ads`: experiment runner for active diffusion subsampling.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ads_core::config::ExperimentConfig;
use ads_core::experiment::{analyze_masks, fit_prior_to, run_bench, run_experiment, run_sweep, SweepAxis, BENCH_COUNTS};
use ads_core::AdsError;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "ads", version, about = "Active diffusion subsampling experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for per-sample parallelism.
    #[arg(long, value_name = "N")]
    workers: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    #[value(name = "n_p", alias = "particles")]
    Particles,
    #[value(name = "sampling_rate")]
    SamplingRate,
    #[value(name = "sigma_y")]
    SigmaY,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the configured prior and save it as prior.json.
    FitPrior(Common),
    /// Run every configured policy and budget on the test split.
    Run(Common),
    /// Repeat the experiment for each value of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Time the acquisition loop for 4 to 64 measurements.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
    },
    /// Mask entropy report over a trace directory.
    AnalyzeMasks {
        #[command(flatten)]
        common: Common,
        /// Directory to scan for masks.csv files; defaults to --out.
        dir: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<AdsError> for Failure {
    fn from(e: AdsError) -> Self {
        match e {
            AdsError::Config { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(w) = common.workers {
        cfg.workers = Some(w);
    }
    cfg.validate()?;
    let out = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| Failure::Config("give --out or set out_dir".into()))?;
    cfg.out_dir = Some(out.clone());
    Ok((cfg, out))
}

fn prepare_out(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::FitPrior(common) => {
            let (cfg, out) = load(&common)?;
            prepare_out(&out)?;
            let path = out.join("prior.json");
            let info = fit_prior_to(&cfg, &path)?;
            println!(
                "fitted {} components in {} iterations -> {}",
                info.components,
                info.iterations,
                path.display()
            );
        }
        Command::Run(common) => {
            let (cfg, out) = load(&common)?;
            prepare_out(&out)?;
            let run = run_experiment(&cfg, Some(&out))?;
            for g in &run.summary.results {
                println!(
                    "{:<14} budget {:>4}  MAE {:.5} ± {:.5}  PSNR {:.3}  SSIM {:.4}  mask entropy {:.3} bits",
                    g.policy.name(),
                    g.budget,
                    g.mae.mean,
                    g.mae.se,
                    g.psnr.mean,
                    g.ssim.mean,
                    g.mask_entropy_bits
                );
            }
        }
        Command::Sweep { common, axis, values } => {
            let (cfg, out) = load(&common)?;
            prepare_out(&out)?;
            let axis = match axis {
                Axis::Particles => SweepAxis::Particles,
                Axis::SamplingRate => SweepAxis::SamplingRate,
                Axis::SigmaY => SweepAxis::SigmaY,
            };
            let rows = run_sweep(&cfg, axis, &values, Some(&out))?;
            for r in &rows {
                println!(
                    "{}={:<8} {:<14} budget {:>4}  MAE {:.5} ± {:.5}",
                    axis.name(),
                    r.value,
                    r.result.policy.name(),
                    r.result.budget,
                    r.result.mae.mean,
                    r.result.mae.se
                );
            }
        }
        Command::Bench { common, repeats } => {
            let (cfg, out) = load(&common)?;
            prepare_out(&out)?;
            let report = run_bench(&cfg, &BENCH_COUNTS, repeats, Some(&out))?;
            for r in &report.rows {
                println!(
                    "count {:>3} particles {:>3}  policy {:.6}s  diffusion {:.6}s  total {:.6}s",
                    r.count, r.particles, r.timings.policy_s, r.timings.diffusion_s, r.timings.total_s
                );
            }
            println!(
                "policy time fit: slope {:.3e} s/measurement, R² {:.4}; doubled particles ratio {:.2}",
                report.slope_s_per_measurement, report.r2, report.doubled_particles_ratio
            );
        }
        Command::AnalyzeMasks { common, dir } => {
            let out = common.out.clone();
            let input = dir
                .or_else(|| out.clone())
                .ok_or_else(|| Failure::Config("give a trace directory or --out".into()))?;
            let reports = analyze_masks(&input, Some(out.as_deref().unwrap_or(&input)))?;
            for r in &reports {
                let nn = r
                    .nn_label_agreement
                    .map_or_else(|| "-".to_string(), |v| format!("{v:.3}"));
                println!(
                    "{:<24} masks {:>5}  entropy {:.4} bits  nn agreement {nn}",
                    r.group, r.masks, r.mean_entropy_bits
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
