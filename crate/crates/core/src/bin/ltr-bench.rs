use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ltr_bench::eval::test_performance;
use ltr_bench::letor::{generate_synthetic, write_letor};
use ltr_bench::runner::{run_sweep, Experiment, ExperimentConfig};
use ltr_bench::{LinearModel, Result};

#[derive(Parser)]
#[command(
    name = "ltr-bench",
    version,
    about = "Counterfactual and online learning to rank under simulated clicks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides base_seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
    },
    /// Run every `*.cfg` file in a directory and write combined results.
    Sweep {
        /// Directory of config files.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = default_parallelism())]
        parallelism: usize,
    },
    /// Write a synthetic dataset as LETOR train/vali/test files.
    GenerateData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 20)]
        docs_per_query: usize,
        #[arg(long, default_value_t = 10)]
        features: usize,
    },
    /// Print the test nDCG@10 of a stored model on a config's dataset.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
}

fn default_parallelism() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn load_configs(dir: &Path) -> Result<Vec<ExperimentConfig>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "cfg"));
    paths.sort();
    paths
        .iter()
        .map(|p| ExperimentConfig::from_file(p))
        .collect()
}

fn sweep(
    mut configs: Vec<ExperimentConfig>,
    out: &Path,
    seed: Option<u64>,
    parallelism: usize,
) -> Result<()> {
    if let Some(seed) = seed {
        for cfg in &mut configs {
            cfg.base_seed = seed;
        }
    }
    let output = run_sweep(&configs, parallelism)?;
    output.write_to(out)?;
    for f in &output.failures {
        eprintln!("run {} of {} failed: {}", f.run_id, f.config, f.message);
    }
    eprintln!(
        "{} runs completed, {} failed; results in {}",
        output.series.len(),
        output.failures.len(),
        out.display()
    );
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            parallelism,
        } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            cfg.validate()?;
            std::fs::create_dir_all(&out)?;
            let exp = Experiment::prepare(&cfg)?;
            let mut f = BufWriter::new(File::create(out.join("production.model"))?);
            writeln!(f, "{}", exp.production)?;
            f.flush()?;
            sweep(vec![cfg], &out, seed, parallelism)
        }
        Command::Sweep {
            config,
            out,
            seed,
            parallelism,
        } => sweep(load_configs(&config)?, &out, seed, parallelism),
        Command::GenerateData {
            out,
            seed,
            queries,
            docs_per_query,
            features,
        } => {
            if queries < 1 || docs_per_query < 1 || features < 1 {
                return Err(ltr_bench::Error::Config(
                    "dataset sizes must be positive".into(),
                ));
            }
            std::fs::create_dir_all(&out)?;
            let split = generate_synthetic(queries, docs_per_query, features, seed);
            for (name, part) in [
                ("train.txt", &split.train),
                ("vali.txt", &split.validation),
                ("test.txt", &split.test),
            ] {
                let mut f = BufWriter::new(File::create(out.join(name))?);
                write_letor(part, &mut f)?;
                f.flush()?;
            }
            Ok(())
        }
        Command::Evaluate { config, model } => {
            let cfg = ExperimentConfig::from_file(&config)?;
            let exp = Experiment::prepare(&cfg)?;
            let model: LinearModel = std::fs::read_to_string(&model)?.trim().parse()?;
            if model.dim() != exp.split.feature_count {
                return Err(ltr_bench::Error::Config(format!(
                    "model has {} weights but the dataset has {} features",
                    model.dim(),
                    exp.split.feature_count
                )));
            }
            println!("{}", test_performance(&model, &exp.split.test)?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
