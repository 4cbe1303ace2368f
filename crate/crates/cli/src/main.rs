use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use driqn::distrl::Strategy;
use driqn::harness::{
    compare_runs, evaluate, load_policy, record_evaluation, render_run, train, ConfigError, HarnessError,
    MetricsRecord, RunConfig, TrainOptions,
};

/// Robust distributional RL for noisy marine navigation.
#[derive(Debug, Parser)]
#[command(name = "driqn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train an agent; without --seed every seed of the config is run.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory (with --seed) or parent of per-seed directories.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Pause after this many environment steps and write a resume checkpoint.
        #[arg(long)]
        stop_after: Option<u64>,
        /// Continue a paused run in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on its run's frozen evaluation seeds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Override the action-selection strategy (greedy or adaptive).
        #[arg(long)]
        strategy: Option<Strategy>,
        /// Directory for metrics, per-episode logs and trajectories.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize completed runs as a markdown table.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot logged evaluation trajectories as SVG.
    Render {
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated episode ids; empty renders only the legend.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        episodes: Vec<usize>,
        /// Output directory, `<run>/render` by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &Path) -> Result<RunConfig, HarnessError> {
    let doc = std::fs::read_to_string(path).map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
    Ok(RunConfig::from_toml(&doc)?)
}

fn print_metrics(label: &str, m: &MetricsRecord) {
    println!("{label}: {}", serde_json::to_string(m).expect("metrics serialize"));
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            stop_after,
            resume,
        } => {
            let cfg = load_config(&config)?;
            let opts = TrainOptions { stop_after, resume };
            let jobs: Vec<(u64, PathBuf)> = match seed {
                Some(s) => vec![(s, out.unwrap_or_else(|| PathBuf::from(format!("runs/{}-seed{s}", cfg.agent))))],
                None => {
                    let parent = out.unwrap_or_else(|| PathBuf::from(format!("runs/{}", cfg.agent)));
                    cfg.seeds.iter().map(|&s| (s, parent.join(format!("seed{s}")))).collect()
                }
            };
            for (seed, dir) in jobs {
                let summary = train(&cfg, seed, &dir, &opts)?;
                let state = if summary.finished { "finished" } else { "paused" };
                println!("{}: {state} at step {}", dir.display(), summary.steps);
                if let Some(m) = &summary.last_metrics {
                    print_metrics("last evaluation", m);
                }
            }
        }
        Command::Eval {
            checkpoint,
            strategy,
            out,
        } => {
            let doc = std::fs::read(&checkpoint).map_err(|e| HarnessError::Io {
                path: checkpoint.clone(),
                source: e,
            })?;
            let (policy, cfg) = load_policy(&doc, strategy)?;
            let logs = evaluate(&policy, &cfg, &cfg.eval_seeds())?;
            let step = driqn::qnet::load_checkpoint(&doc, None, None)?.metadata.step;
            let metrics = MetricsRecord::from_episodes(step, &logs, cfg.sim.dt);
            if let Some(dir) = out {
                record_evaluation(&dir, &metrics, &logs)?;
            }
            print_metrics(cfg.strategy.as_str(), &metrics);
        }
        Command::Compare { dirs, out } => {
            let table = compare_runs(&dirs)?;
            std::fs::write(&out, &table).map_err(|e| HarnessError::Io { path: out, source: e })?;
            print!("{table}");
        }
        Command::Render { run, episodes, out } => {
            let out = out.unwrap_or_else(|| run.join("render"));
            for path in render_run(&run, &episodes, &out)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
