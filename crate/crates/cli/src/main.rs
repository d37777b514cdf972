//! Command-line front end for the split federated learning simulator.
//!
//! Exit codes: 0 success, 2 invalid configuration (message names the config
//! field), 3 numerical divergence (message names the offending round).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use splitfl_core::harness::{
    self, compare, emit, load_summary, partition_report, run_experiment, EmitFormat,
    ExperimentConfig,
};
use splitfl_core::Error;

#[derive(Parser)]
#[command(
    name = "splitfl",
    about = "Deterministic desk-scale simulator for split federated learning",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file and emit per-round metrics.
    Run {
        /// Path to the TOML experiment config.
        #[arg(long)]
        config: PathBuf,
        /// Output directory for metrics files.
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Per-round output format.
        #[arg(long, default_value = "csv")]
        format: String,
        /// Worker threads for step-level parallelism.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Override the run name from the config.
        #[arg(long)]
        name: Option<String>,
        /// Baseline run summary; resolves the accuracy target and records
        /// round/time speedups against it.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Seed overrides, one per stream.
        #[arg(long)]
        seed_data: Option<u64>,
        #[arg(long)]
        seed_init: Option<u64>,
        #[arg(long)]
        seed_selection: Option<u64>,
        #[arg(long)]
        seed_batching: Option<u64>,
        #[arg(long)]
        seed_profiles: Option<u64>,
    },
    /// Compare run summaries against the first (baseline) run.
    Compare {
        /// Summary JSON files; the first is the baseline.
        #[arg(long, num_args = 2.., required = true)]
        runs: Vec<PathBuf>,
    },
    /// Emit per-client class histograms and JS divergences for a config.
    PartitionReport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Diverged { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            workers,
            name,
            baseline,
            seed_data,
            seed_init,
            seed_selection,
            seed_batching,
            seed_profiles,
        } => {
            let mut cfg = ExperimentConfig::from_path(&config)?;
            if let Some(s) = seed_data {
                cfg.seeds.data = s;
            }
            if let Some(s) = seed_init {
                cfg.seeds.init = s;
            }
            if let Some(s) = seed_selection {
                cfg.seeds.selection = s;
            }
            if let Some(s) = seed_batching {
                cfg.seeds.batching = s;
            }
            if let Some(s) = seed_profiles {
                cfg.seeds.profiles = s;
            }
            if let Some(n) = name {
                cfg.name = n;
            }
            let format: EmitFormat = format.parse()?;
            let mut result = run_experiment(&cfg, workers)?;
            if let Some(path) = baseline {
                let base = load_summary(&path)?;
                result.summary.apply_baseline(&base)?;
            }
            let paths = emit(&result.records, &result.summary, format, &out, &cfg.name)?;
            let s = &result.summary;
            println!(
                "{}: method={} rounds={} best_acc={:.4} (round {}) final_acc={:.4} sim_time={:.2}s",
                s.name, s.method, s.rounds, s.best_accuracy, s.best_round, s.final_accuracy,
                s.total_time_s
            );
            if let (Some(r), Some(t)) = (s.rounds_to_target, s.time_to_target_s) {
                println!(
                    "target {:.4}: reached at round {} after {:.2}s simulated",
                    s.target.unwrap_or(f64::NAN),
                    r,
                    t
                );
            }
            if let Some(base_name) = &s.baseline {
                let r_up = s
                    .round_speedup
                    .map(|v| format!("{v:.2}×"))
                    .unwrap_or_else(|| "—".to_string());
                let t_up = s
                    .time_speedup
                    .map(|v| format!("{v:.2}×"))
                    .unwrap_or_else(|| "—".to_string());
                println!("speedup vs {base_name}: R↑ {r_up}, T↑ {t_up}");
            }
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Compare { runs } => {
            let summaries = runs
                .iter()
                .map(|p| load_summary(p))
                .collect::<Result<Vec<harness::RunSummary>, Error>>()?;
            let table = compare(&summaries)?;
            print!("{}", table.render());
            Ok(())
        }
        Command::PartitionReport { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;
            let path = out.join(format!("{}.partition.csv", cfg.name));
            partition_report(&cfg, &path)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
