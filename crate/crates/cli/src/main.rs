use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use recsearch::experiment::{run_experiment, ExperimentConfig, ExperimentError, RunOptions};
use recsearch::recipes::{recipe_task, RECIPES};
use recsearch::synth;

/// Searches recommendation pipelines for rating and CTR prediction.
#[derive(Parser)]
#[command(name = "recsearch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the search described by a config file.
    Run {
        /// Config file (TOML).
        #[arg(value_name = "CONFIG", required_unless_present = "config")]
        config_pos: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for trials.csv, summary.json and trials.log.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Overrides the tuner seed from the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Trials trained in parallel. Above 1 the trial sequence may vary.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        /// Fill the seconds column of trials.csv.
        #[arg(long)]
        timings: bool,
        /// Replay trials.log from the output directory first.
        #[arg(long)]
        resume: bool,
        /// Directory that relative dataset paths are resolved against.
        #[arg(long, env = "RECSEARCH_DATA_ROOT")]
        data_root: Option<PathBuf>,
    },
    /// List the built-in recipes.
    Recipes,
    /// Check a config without training.
    Validate {
        #[arg(value_name = "CONFIG", required_unless_present = "config")]
        config_pos: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = "RECSEARCH_DATA_ROOT")]
        data_root: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    Synth {
        #[command(subcommand)]
        kind: SynthKind,
    },
}

#[derive(Subcommand)]
enum SynthKind {
    /// Click log from a logistic factorization machine (TSV: label, fields).
    Ctr {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200_000)]
        rows: usize,
        #[arg(long, default_value_t = 10)]
        fields: usize,
        #[arg(long, default_value_t = 50)]
        vocab: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        dense: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// MovieLens-format ratings from a low-rank model.
    Ratings {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        rows: usize,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 100)]
        items: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_config() {
            Self::Config(e.to_string())
        } else {
            Self::Runtime(e.to_string())
        }
    }
}

fn load(
    config: Option<PathBuf>,
    positional: Option<PathBuf>,
    data_root: Option<&Path>,
) -> Result<ExperimentConfig, Failure> {
    let path = config
        .or(positional)
        .ok_or_else(|| Failure::Config("no config file given".into()))?;
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| Failure::Config(format!("config: {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&raw)?;
    if cfg.dataset.path.is_relative() {
        let base = match data_root {
            Some(root) => root.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.dataset.path = base.join(&cfg.dataset.path);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config_pos,
            config,
            out,
            seed,
            workers,
            timings,
            resume,
            data_root,
        } => {
            let mut cfg = load(config, config_pos, data_root.as_deref())?;
            if let Some(s) = seed {
                cfg.tuner.seed = s;
            }
            cfg.report.timings |= timings;
            let opts = RunOptions {
                workers,
                out_dir: Some(out.clone()),
                resume,
            };
            let report = run_experiment(&cfg, &opts)?;
            match report.best() {
                Some(b) => println!(
                    "best trial {} {}: val {} = {:.6}, test {} = {}",
                    b.trial,
                    b.assignment.canonical_key(),
                    report.metric,
                    b.val_score.unwrap_or(f64::NAN),
                    report.metric,
                    b.test_score.map_or("n/a".into(), |t| format!("{t:.6}"))
                ),
                None => println!("no trial completed"),
            }
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Recipes => {
            for name in RECIPES {
                let task = recipe_task(name).map_err(|e| Failure::Config(e.to_string()))?;
                println!("{name}\t{}", task.metric());
            }
            Ok(())
        }
        Command::Validate {
            config_pos,
            config,
            data_root,
        } => {
            let cfg = load(config, config_pos, data_root.as_deref())?;
            let graph = cfg.check()?;
            let order: Vec<&str> = graph.blocks.iter().map(|b| b.id.as_str()).collect();
            println!("ok: {} blocks ({})", order.len(), order.join(" -> "));
            Ok(())
        }
        Command::Synth { kind } => {
            let runtime = |e: std::io::Error| Failure::Runtime(format!("synth: {e}"));
            match kind {
                SynthKind::Ctr {
                    out,
                    rows,
                    fields,
                    vocab,
                    dim,
                    dense,
                    seed,
                } => {
                    let data = synth::ctr(synth::CtrSpec {
                        rows,
                        fields,
                        vocab,
                        dim,
                        dense,
                        seed,
                        ..synth::CtrSpec::default()
                    });
                    data.write_tsv(&out).map_err(runtime)?;
                    let all: Vec<usize> = (0..rows).collect();
                    println!(
                        "wrote {rows} rows to {}; generator log loss {:.6}",
                        out.display(),
                        data.bayes_logloss(&all)
                    );
                }
                SynthKind::Ratings {
                    out,
                    rows,
                    users,
                    items,
                    seed,
                } => {
                    let data = synth::ratings(synth::RatingSpec {
                        rows,
                        users,
                        items,
                        seed,
                        ..synth::RatingSpec::default()
                    });
                    synth::write_ratings(&out, &data).map_err(runtime)?;
                    println!("wrote {rows} rows to {}", out.display());
                }
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Bad arguments are a configuration problem, not a run failure.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
