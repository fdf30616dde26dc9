use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use iso_al::datamodel::Dataset;
use iso_al::harness::{
    configure_threads_from_env, emit_results, generate_synthetic, load_dataset, read_results_csv, render_accuracy_svg,
    run_experiment_on, DatasetSpec, ExperimentConfig, Strategy, SyntheticParams,
};
use iso_al::{Error, Result};

#[derive(Parser)]
#[command(name = "iso-al", version, about = "Instance-wise supervision-level active learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic hierarchical dataset as train.csv and test.csv.
    Generate {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 10)]
        superclasses: usize,
        #[arg(long, default_value_t = 4)]
        children: usize,
        #[arg(long, default_value_t = 32)]
        dim: usize,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one or more strategies and write the result files.
    Run(RunArgs),
    /// Re-render accuracy.svg from an existing results.csv.
    Plot {
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated strategy names, e.g. `iso,random,fixed_ratio:0.6`.
    #[arg(long, value_delimiter = ',')]
    strategy: Vec<String>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    budget: Option<f64>,
    #[arg(long)]
    cost_full: Option<f64>,
    #[arg(long)]
    cost_weak: Option<f64>,
    #[arg(long)]
    k_subsets: Option<usize>,
    #[arg(long)]
    improvement_seeds: Option<usize>,
    /// Comma-separated experiment seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// `synthetic` or a path to a CSV file or a directory with train.csv/test.csv.
    #[arg(long)]
    dataset: Option<String>,
    /// Full-label budget share for a bare `fixed_ratio` strategy.
    #[arg(long)]
    full_fraction: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_configs(args: &RunArgs) -> Result<Vec<ExperimentConfig>> {
    let mut base = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            })?;
            ExperimentConfig::from_json(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(v) = args.rounds {
        base.cost.rounds = v;
    }
    if let Some(v) = args.budget {
        base.cost.budget = v;
    }
    if let Some(v) = args.cost_full {
        base.cost.cost_full = v;
    }
    if let Some(v) = args.cost_weak {
        base.cost.cost_weak = v;
    }
    if let Some(v) = args.k_subsets {
        base.k_subsets = v;
    }
    if let Some(v) = args.improvement_seeds {
        base.improvement_seeds = v;
    }
    if let Some(v) = args.epochs {
        base.train.epochs_per_stage = v;
    }
    if let Some(v) = args.hidden_dim {
        base.train.hidden_dim = v;
    }
    if !args.seeds.is_empty() {
        base.seeds = args.seeds.clone();
    }
    if let Some(d) = &args.dataset {
        base.dataset = if d == "synthetic" {
            DatasetSpec::Synthetic {
                params: SyntheticParams::default(),
                seed: 0,
            }
        } else {
            DatasetSpec::Csv {
                path: d.into(),
                split_seed: 0,
            }
        };
    }
    if args.out.is_some() {
        base.output_dir = args.out.clone();
    }
    let mut strategies = args
        .strategy
        .iter()
        .map(|s| {
            let mut strategy: Strategy = s.parse()?;
            if let (Strategy::FixedRatio { full_fraction }, Some(f)) = (&mut strategy, args.full_fraction) {
                if s.trim() == "fixed_ratio" {
                    *full_fraction = f;
                }
            }
            Ok(strategy)
        })
        .collect::<Result<Vec<_>>>()?;
    if strategies.is_empty() {
        if let (Strategy::FixedRatio { full_fraction }, Some(f)) = (&mut base.strategy, args.full_fraction) {
            *full_fraction = f;
        }
        strategies.push(base.strategy);
    }
    strategies
        .into_iter()
        .map(|strategy| {
            let cfg = ExperimentConfig {
                strategy,
                ..base.clone()
            };
            cfg.validate()?;
            Ok(cfg)
        })
        .collect()
}

fn run(args: RunArgs) -> Result<()> {
    let configs = build_configs(&args)?;
    let out = configs[0]
        .output_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"));
    let data = load_dataset(&configs[0].dataset)?;
    let results = configs
        .iter()
        .map(|cfg| run_experiment_on(cfg, &data))
        .collect::<Result<Vec<_>>>()?;
    for result in &results {
        let finals = result.final_accuracies();
        if !finals.is_empty() {
            let mean = finals.iter().map(|(_, a)| a).sum::<f64>() / finals.len() as f64;
            println!(
                "{:<20} final test accuracy {:.2}% over {} seed(s)",
                result.config.strategy.to_string(),
                100.0 * mean,
                finals.len()
            );
        }
    }
    emit_results(&results, &out)?;
    println!("results written to {}", out.display());
    Ok(())
}

fn generate(seed: u64, params: SyntheticParams, out: PathBuf) -> Result<()> {
    let data = generate_synthetic(&params, seed)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::Io {
        path: out.clone(),
        source: e,
    })?;
    let write = |name: &str, ds: &Dataset, ids: &[usize]| ds.write_csv(&out.join(name), ids);
    write("train.csv", &data.dataset, &data.train_ids)?;
    write("test.csv", &data.dataset, &data.test_ids)?;
    println!(
        "wrote {} train and {} test instances to {}",
        data.train_ids.len(),
        data.test_ids.len(),
        out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    configure_threads_from_env();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Generate {
            seed,
            superclasses,
            children,
            dim,
            n_per_class,
            out,
        } => generate(
            seed,
            SyntheticParams {
                superclasses,
                children_per_superclass: children,
                dim,
                n_per_class,
                ..SyntheticParams::default()
            },
            out,
        ),
        Command::Run(args) => run(args),
        Command::Plot { results, out } => read_results_csv(&results).and_then(|rows| {
            let out = out.unwrap_or_else(|| results.with_file_name("accuracy.svg"));
            std::fs::write(&out, render_accuracy_svg(&rows)).map_err(|e| Error::Io { path: out, source: e })
        }),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
