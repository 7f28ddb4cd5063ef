use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use replay_lab::model::{canonical_json, load_checkpoint};
use replay_lab::runner::{export_plot_data, load_results, resolve_output_dir, run_matrix, ExperimentConfig};

#[derive(Parser)]
#[command(name = "replay-lab", version, about = "Class-incremental generative replay experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured (variant, seed) pair and write results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config `output_dir`, then $REPLAY_LAB_OUT, then ./results).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only run the named variant; repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
        /// Replace the configured seeds; repeatable.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
    },
    /// Print a checkpoint's network config and parameter shapes.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Regenerate plot tables from a results directory.
    Export {
        #[arg(long)]
        results: PathBuf,
        /// Where to write the tables (default: <results>/plots).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(config: PathBuf, out: Option<PathBuf>, variants: Vec<String>, seeds: Vec<u64>) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_file(&config)
        .with_context(|| format!("reading config {}", config.display()))?;
    cfg.restrict(&variants, &seeds)?;
    let out = resolve_output_dir(out.as_deref(), &cfg);
    let outcome = run_matrix(&cfg, &out)?;

    println!(
        "{:<18} {:>9} {:>10} {:>9} {:>9} {:>12} {:>10}",
        "variant", "retention", "forgetting", "initial", "final", "log_lik", "recon_err"
    );
    let f = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
    for (name, s) in &outcome.summary {
        println!(
            "{:<18} {:>9} {:>10} {:>9} {:>9} {:>12} {:>10}",
            name,
            f(s.mean_retention_ratio),
            f(s.mean_forgetting_score),
            f(s.mean_initial_accuracy),
            f(s.mean_final_accuracy),
            f(s.mean_log_likelihood),
            f(s.mean_reconstruction_error),
        );
    }
    println!("results written to {}", out.display());
    if outcome.is_success() {
        return Ok(ExitCode::SUCCESS);
    }
    for fail in &outcome.failures {
        eprintln!("FAILED {} seed {}: {}", fail.variant, fail.seed, fail.error);
    }
    Ok(ExitCode::FAILURE)
}

fn inspect(checkpoint: PathBuf) -> Result<ExitCode> {
    let model = load_checkpoint(&checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    println!("config: {}", canonical_json(model.config())?);
    println!("perceptual_frozen: {}", model.is_perceptual_frozen());
    let seen: Vec<usize> = model.prior.seen_classes().iter().copied().collect();
    println!("seen_classes: {seen:?}");
    for (name, t) in model.named_params() {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        println!("{name}\t[{}]\ttrainable={}", shape.join(", "), t.requires_grad());
    }
    Ok(ExitCode::SUCCESS)
}

fn export(results: PathBuf, out: Option<PathBuf>) -> Result<ExitCode> {
    let bundle = load_results(&results).with_context(|| format!("loading results from {}", results.display()))?;
    let out = out.unwrap_or_else(|| results.join("plots"));
    for path in export_plot_data(&bundle, &out)? {
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            variants,
            seeds,
        } => run(config, out, variants, seeds),
        Command::Inspect { checkpoint } => inspect(checkpoint),
        Command::Export { results, out } => export(results, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
