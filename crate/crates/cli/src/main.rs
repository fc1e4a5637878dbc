use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qforge_cli::{
    exit_code, format_bench_table, run_benchmark, run_eval, run_grad_check, run_train, BenchOptions, ConfigSource,
};

#[derive(Parser)]
#[command(name = "qforge", version, about = "Train and evaluate pixel Q-networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Named preset shipped with the binary.
    #[arg(long)]
    preset: Option<String>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override a field, e.g. `--set agent.learning_rate=3e-4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn source(&self) -> ConfigSource {
        ConfigSource {
            preset: self.preset.clone(),
            config: self.config.clone(),
            seed: self.seed,
            overrides: self.overrides.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, a run manifest and checkpoints.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, env = "QFORGE_OUT", default_value = "runs/latest")]
        out: PathBuf,
        /// Overrides `agent.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        quiet: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 5)]
        episodes: usize,
    },
    /// Forward and forward+backward timings of every architecture.
    Bench {
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference gradient checks of every architecture.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train { config, out, episodes, quiet } => {
            let mut source = config.source();
            if let Some(n) = episodes {
                source.overrides.push(format!("agent.episodes={n}"));
            }
            let cfg = source.load()?;
            let report = run_train(&cfg, &out, quiet)?;
            println!(
                "{} episodes in {:.1}s, best eval {}, artifacts in {}",
                report.episodes_run,
                report.wall_time_s,
                report.best_eval().map_or("n/a".to_string(), |r| format!("{r}")),
                report.out_dir.display()
            );
        }
        Command::Eval { checkpoint, config, episodes } => {
            let source = config.source();
            let cfg = if source.is_empty() { None } else { Some(source.load()?) };
            let seed = config.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            let report = run_eval(&checkpoint, cfg.as_ref(), episodes, seed)?;
            println!("{:?}", report.average_reward);
        }
        Command::Bench { batch, iterations, warmup, json } => {
            let opts = BenchOptions { batch, iterations, warmup, ..Default::default() };
            let rows = run_benchmark(&opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rows)?);
            } else {
                print!("{}", format_bench_table(&rows, &opts));
            }
        }
        Command::GradCheck { seed } => {
            let mut worst: f64 = 0.0;
            for (variant, r) in run_grad_check(seed)? {
                println!(
                    "{:<18} {:>5} coords  max rel err {:.2e}  at {}",
                    variant.name(),
                    r.checked,
                    r.max_rel_error,
                    r.worst.unwrap_or_default()
                );
                worst = worst.max(r.max_rel_error);
            }
            if worst >= 1e-4 {
                anyhow::bail!("gradient check failed: max relative error {worst:.2e}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
