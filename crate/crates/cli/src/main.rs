use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use fdi_cli::config::ExperimentConfig;
use fdi_cli::experiment::{self, run_trial};
use fdi_cli::io;
use fdi_core::classifier;
use fdi_core::kernel::residual;

/// Data-driven fault isolation experiments for discrete LTI systems.
#[derive(Parser)]
#[command(name = "fdi", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Scenario1,
    Scenario2,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the healthy and faulty trajectories of a config and write
    /// them as CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Fit the kernel filter and fault dictionaries from healthy data.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Classify a trajectory with previously fitted artifacts (or refit on
    /// the fly), writing residuals, angles, and decisions.
    Classify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional trajectory CSV to classify instead of simulating the
        /// config's test section.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Compute the pairwise discernibility report.
    Discern {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Full pipeline: data, fit, classify, discern, score, write artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Seeded Monte Carlo over the config's trial count.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        quiet: bool,
    },
    /// Write a reference config with every default spelled out.
    InitConfig {
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Scenario2)]
        preset: Preset,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        config.monte_carlo.master_seed = s;
    }
    Ok(config)
}

fn out_dir(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(&config.output_dir))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            std::fs::create_dir_all(&dir)?;
            let result = run_trial(&config, 0)?;
            io::write_trajectory_csv(&dir.join("healthy.csv"), &result.healthy)?;
            io::write_trajectory_csv(&dir.join("test.csv"), &result.test)?;
            if !quiet {
                eprintln!(
                    "wrote healthy.csv ({} samples) and test.csv ({} samples) to {}",
                    result.healthy.sample_count(),
                    result.test.sample_count(),
                    dir.display()
                );
            }
        }
        Command::Fit { config, out, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            std::fs::create_dir_all(&dir)?;
            let result = run_trial(&config, 0)?;
            io::write_filter_json(&dir.join("filter.json"), &result.filter)?;
            io::write_dictionaries_json(&dir.join("dictionaries.json"), &result.dictionaries)?;
            if !quiet {
                eprintln!(
                    "fitted filter: order {}, residual dimension {}",
                    result.filter.estimated_order(),
                    result.filter.residual_dim()
                );
            }
        }
        Command::Classify { config, out, trajectory, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            std::fs::create_dir_all(&dir)?;
            let filter_path = dir.join("filter.json");
            let dicts_path = dir.join("dictionaries.json");
            let (filter, dicts, threshold) =
                if filter_path.exists() && dicts_path.exists() {
                    let result = run_trial(&config, 0)?;
                    (
                        io::read_filter_json(&filter_path)?,
                        io::read_dictionaries_json(&dicts_path)?,
                        result.threshold_used,
                    )
                } else {
                    let result = run_trial(&config, 0)?;
                    io::write_filter_json(&filter_path, &result.filter)?;
                    io::write_dictionaries_json(&dicts_path, &result.dictionaries)?;
                    (result.filter, result.dictionaries, result.threshold_used)
                };
            let traj = match trajectory {
                Some(path) => io::read_trajectory_csv(&path)?,
                None => run_trial(&config, 0)?.test,
            };
            let res = residual(&filter, &traj.u, &traj.y).context("stage 'classify'")?;
            let angles = classifier::angles(&res, &dicts).context("stage 'classify'")?;
            let decisions = classifier::decide(&angles, threshold, config.thresholds.tie);
            io::write_residuals_csv(&dir.join("residuals.csv"), &res)?;
            io::write_angles_csv(&dir.join("angles.csv"), &angles)?;
            io::write_decisions_csv(&dir.join("decisions.csv"), &angles, &decisions)?;
            if !quiet {
                let faults = decisions
                    .iter()
                    .filter(|d| !matches!(d.status, classifier::DecisionStatus::Healthy))
                    .count();
                eprintln!("classified {} instants, {} flagged", decisions.len(), faults);
            }
        }
        Command::Discern { config, out, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            std::fs::create_dir_all(&dir)?;
            let result = run_trial(&config, 0)?;
            io::write_discernibility_json(&dir.join("discernibility.json"), &result.report)?;
            if !quiet {
                for rec in result.report.indiscernible_pairs() {
                    eprintln!(
                        "indiscernible pair ({}, {}): intersection dimension {}",
                        rec.first.label(),
                        rec.second.label(),
                        rec.dimension
                    );
                }
                eprintln!("wrote discernibility.json to {}", dir.display());
            }
        }
        Command::Run { config, out, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            experiment::run_scenario(&config, &dir, quiet)?;
            if !quiet {
                eprintln!("artifacts written to {}", dir.display());
            }
        }
        Command::Montecarlo { config, out, seed, quiet } => {
            let config = load_config(&config, seed)?;
            let dir = out_dir(&config, out);
            experiment::monte_carlo_to_dir(&config, &dir, quiet)?;
        }
        Command::InitConfig { out, preset } => {
            let config = match preset {
                Preset::Scenario1 => ExperimentConfig::scenario1(),
                Preset::Scenario2 => ExperimentConfig::scenario2(),
            };
            config.save(&out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}
