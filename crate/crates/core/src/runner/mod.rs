//! Config-driven ablation matrix: runs every (variant, seed) pair, persists
//! results under `<out>/<variant>/<seed>/` and regenerates plot-ready tables.

mod config;
mod export;
#[cfg(test)]
mod tests;

pub use config::{slugify, DatasetSpec, ExperimentConfig, VariantSpec};
pub use export::{export_plot_data, load_results, ResultsBundle, RunRecord};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::TrainTest;
use crate::error::{Error, Result};
use crate::metrics::{
    write_accuracy_csv, write_distribution_json, write_embeddings_csv, write_metrics_csv,
    DistributionRecord,
};
use crate::trainer::{run_experiment, ExperimentOutput};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "REPLAY_LAB_OUT";
pub const DEFAULT_OUTPUT: &str = "results";

pub const ACCURACY_FILE: &str = "accuracy_matrix.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LOG_LIKELIHOOD_FILE: &str = "log_likelihood.json";
pub const RECONSTRUCTION_FILE: &str = "reconstruction_error.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PROJECTION_FILE: &str = "projection.csv";
pub const SILHOUETTE_FILE: &str = "silhouette.csv";
pub const LOSSES_FILE: &str = "losses.json";
pub const TIMINGS_FILE: &str = "timings.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const FAILURES_FILE: &str = "failures.json";

/// Output directory: explicit flag, then the config, then `REPLAY_LAB_OUT`, then `results`.
pub fn resolve_output_dir(flag: Option<&Path>, config: &ExperimentConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| config.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

pub fn run_dir(out: &Path, variant: &VariantSpec, seed: u64) -> PathBuf {
    out.join(variant.slug()).join(seed.to_string())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes every artifact of one finished run into `dir`.
pub fn write_run_artifacts(dir: &Path, variant: &str, out: &ExperimentOutput) -> Result<()> {
    write_accuracy_csv(&dir.join(ACCURACY_FILE), &out.accuracy)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &out.metrics)?;
    let d = &out.diagnostics;
    write_distribution_json(
        &dir.join(LOG_LIKELIHOOD_FILE),
        &DistributionRecord::new("log_likelihood", variant, &d.log_likelihood),
    )?;
    write_distribution_json(
        &dir.join(RECONSTRUCTION_FILE),
        &DistributionRecord::new("reconstruction_error", variant, &d.reconstruction_error),
    )?;
    write_embeddings_csv(&dir.join(EMBEDDINGS_FILE), &d.embeddings)?;

    let mut proj = String::from("task,class,x,y\n");
    for p in &d.projections {
        for r in &p.rows {
            proj.push_str(&format!("{},{},{},{}\n", r.task + 1, r.class, r.x, r.y));
        }
    }
    write_text(&dir.join(PROJECTION_FILE), &proj)?;

    let mut sil = String::from("task,silhouette\n");
    for (t, s) in d.silhouette.iter().enumerate() {
        sil.push_str(&format!("{},{}\n", t + 1, fmt_opt(*s)));
    }
    write_text(&dir.join(SILHOUETTE_FILE), &sil)?;

    write_json(&dir.join(LOSSES_FILE), &out.task_reports)?;
    write_json(&dir.join(TIMINGS_FILE), &out.timings)
}

/// Seed-averaged headline numbers of one variant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub seeds: Vec<u64>,
    pub mean_retention_ratio: Option<f64>,
    pub mean_forgetting_score: Option<f64>,
    pub mean_initial_accuracy: Option<f64>,
    pub mean_final_accuracy: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
    pub mean_reconstruction_error: Option<f64>,
    pub mean_silhouette: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub variant: String,
    pub seed: u64,
    pub error: String,
}

/// Outcome of a matrix run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixOutcome {
    pub summary: BTreeMap<String, VariantSummary>,
    pub failures: Vec<RunFailure>,
}

impl MatrixOutcome {
    pub fn is_success(&self) -> bool {
        self.failures.is_empty()
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-run headline numbers, averaged over tasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunHeadline {
    pub retention_ratio: Option<f64>,
    pub forgetting_score: Option<f64>,
    pub initial_accuracy: Option<f64>,
    pub final_accuracy: Option<f64>,
    pub log_likelihood: f64,
    pub reconstruction_error: f64,
    pub silhouette: Option<f64>,
}

impl RunHeadline {
    pub fn of(record: &RunRecord) -> Self {
        let m = &record.metrics;
        RunHeadline {
            retention_ratio: mean(m.iter().filter_map(|t| t.retention_ratio)),
            forgetting_score: mean(m.iter().map(|t| t.forgetting_score)),
            initial_accuracy: mean(m.iter().map(|t| t.initial_acc)),
            final_accuracy: mean(m.iter().map(|t| t.final_acc)),
            log_likelihood: record.log_likelihood.summary.mean,
            reconstruction_error: record.reconstruction_error.summary.mean,
            silhouette: mean(record.silhouette.iter().flatten().copied()),
        }
    }
}

/// Seed-averaged summary of every variant present in `bundle`.
pub fn summarize(bundle: &ResultsBundle) -> BTreeMap<String, VariantSummary> {
    let mut out = BTreeMap::new();
    for v in &bundle.config.variants {
        let runs: Vec<(u64, RunHeadline)> = bundle
            .runs
            .iter()
            .filter(|((name, _), _)| name == &v.name)
            .map(|((_, seed), r)| (*seed, RunHeadline::of(r)))
            .collect();
        if runs.is_empty() {
            continue;
        }
        let h = || runs.iter().map(|(_, h)| h);
        out.insert(
            v.name.clone(),
            VariantSummary {
                seeds: runs.iter().map(|(s, _)| *s).collect(),
                mean_retention_ratio: mean(h().filter_map(|h| h.retention_ratio)),
                mean_forgetting_score: mean(h().filter_map(|h| h.forgetting_score)),
                mean_initial_accuracy: mean(h().filter_map(|h| h.initial_accuracy)),
                mean_final_accuracy: mean(h().filter_map(|h| h.final_accuracy)),
                mean_log_likelihood: mean(h().map(|h| h.log_likelihood)),
                mean_reconstruction_error: mean(h().map(|h| h.reconstruction_error)),
                mean_silhouette: mean(h().filter_map(|h| h.silhouette)),
            },
        );
    }
    out
}

/// Runs every (variant, seed) pair of `config` on `data`, writing results under `out`.
///
/// A failing run is recorded in `failures.json` and the remaining runs continue;
/// completed runs keep their files.
pub fn run_matrix_on(config: &ExperimentConfig, data: &TrainTest, out: &Path) -> Result<MatrixOutcome> {
    config.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join(CONFIG_FILE), &config.canonical_echo()?)?;
    let failures_path = out.join(FAILURES_FILE);
    if failures_path.exists() {
        fs::remove_file(&failures_path).map_err(|e| Error::io(&failures_path, e))?;
    }

    let mut failures = Vec::new();
    for variant in &config.variants {
        let flags = variant.resolved_flags()?;
        for &seed in &config.seeds {
            let dir = run_dir(out, variant, seed);
            let attempt = (|| -> Result<()> {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let mut trainer = config.trainer.clone();
                trainer.seed = seed;
                log::info!("running {} seed {seed}", variant.name);
                let result = run_experiment(&trainer, &flags, data, Some(&dir))?;
                write_run_artifacts(&dir, &variant.name, &result)
            })();
            if let Err(e) = attempt {
                log::error!("{} seed {seed} failed: {e}", variant.name);
                failures.push(RunFailure {
                    variant: variant.name.clone(),
                    seed,
                    error: e.to_string(),
                });
                write_json(&failures_path, &failures)?;
            }
        }
    }

    let bundle = load_results_partial(out, config)?;
    let summary = summarize(&bundle);
    write_json(&out.join(SUMMARY_FILE), &summary)?;
    Ok(MatrixOutcome { summary, failures })
}

/// Loads the configured dataset and runs the matrix.
pub fn run_matrix(config: &ExperimentConfig, out: &Path) -> Result<MatrixOutcome> {
    let data = config.dataset.load()?;
    run_matrix_on(config, &data, out)
}

fn load_results_partial(out: &Path, config: &ExperimentConfig) -> Result<ResultsBundle> {
    export::load_runs(out, config, false)
}
