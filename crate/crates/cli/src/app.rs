use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use snv_core::tasks::export_stream;

use crate::config::ExperimentConfig;
use crate::error::CliResult;
use crate::exact::CompareOptions;
use crate::{analyze, exact, hpo, run};

#[derive(Debug, Parser)]
#[command(name = "snv", version, about = "Shapley neuron valuation for continual learning")]
pub struct Cli {
    /// Worker threads for valuation and evaluation (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a task stream and write the artifact directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the root seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output_dir`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Exact Shapley values of a game table.
    Exact {
        #[arg(long)]
        game: PathBuf,
        /// Also run the sampling estimator and print its errors.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 20_000)]
        max_permutations: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, allow_hyphen_values = true)]
        truncation: Option<f64>,
        #[arg(long, default_value_t = 1.0)]
        capacity: f64,
        #[arg(long)]
        racing: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the printed table to this file.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Grid search scored on task 1 validation accuracy.
    Hpo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Pruning curve, Shapley heatmap and mask overlap for a run directory.
    Analyze {
        dir: PathBuf,
        /// Defaults to the run directory.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write the configured stream as CSV files.
    GenStream {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load(config: &Path, seed: Option<u64>, output: Option<PathBuf>) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(o) = output {
        cfg.output_dir = o;
    }
    Ok(cfg)
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Run { config, seed, output } => {
            let cfg = load(&config, seed, output)?;
            let out = run::execute(&cfg)?;
            run::write_artifacts(&out, &cfg.output_dir)?;
            for w in &out.summary.warnings {
                eprintln!("warning: {w}");
            }
            println!("{}", run::summary_line(&out.summary));
        }
        Command::Exact {
            game,
            compare,
            max_permutations,
            confidence,
            truncation,
            capacity,
            racing,
            seed,
            output,
        } => {
            let opts = compare.then(|| CompareOptions {
                max_permutations,
                confidence,
                truncation_threshold: truncation.filter(|t| *t != f64::NEG_INFINITY),
                capacity_ratio: capacity,
                racing,
                seed,
            });
            let out = exact::execute(&game, opts.as_ref())?;
            let text = out.render();
            print!("{text}");
            if let Some(path) = output {
                crate::error::write(&path, text)?;
            }
        }
        Command::Hpo {
            config,
            grid,
            seed,
            output,
        } => {
            let cfg = load(&config, seed, None)?;
            let grid = hpo::Grid::load(&grid)?;
            let dir = output.unwrap_or_else(|| cfg.output_dir.clone());
            let (trace, best) = hpo::execute(&cfg, &grid)?;
            hpo::write_outputs(&dir, &trace, &best)?;
            println!(
                "best candidate {} of {}: {:?} val_accuracy {:.4}",
                best.index,
                trace.len(),
                best.candidate,
                best.val_accuracy
            );
        }
        Command::Analyze { dir, output } => {
            let a = analyze::execute(&dir)?;
            a.write(output.as_deref().unwrap_or(&dir))?;
            println!(
                "{} tasks, {} neurons, {} pruning points",
                a.heatmap.len(),
                a.neurons.len(),
                a.pruning_curve.len()
            );
        }
        Command::GenStream { config, seed, output } => {
            let cfg = load(&config, seed, None)?;
            let dir = output.unwrap_or_else(|| cfg.output_dir.join("stream"));
            let tasks = run::load_stream(&cfg)?;
            export_stream(&tasks, &dir)?;
            println!("{} tasks written to {}", tasks.len(), dir.display());
        }
    }
    Ok(())
}

pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = cli.workers {
        if w == 0 {
            eprintln!("error: --workers must be positive");
            return 2;
        }
        pool = pool.num_threads(w);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

