use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use super::{
    run_dir, ACCURACY_FILE, CONFIG_FILE, LOG_LIKELIHOOD_FILE, PROJECTION_FILE, RECONSTRUCTION_FILE,
    SILHOUETTE_FILE,
};
use crate::error::{Error, Result};
use crate::metrics::{
    read_accuracy_csv, read_distribution_json, AccuracyMatrix, DistributionRecord, ProjectionRow,
    TaskMetrics,
};

/// Everything the plot export needs from one (variant, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub accuracy: AccuracyMatrix,
    pub metrics: Vec<TaskMetrics>,
    pub log_likelihood: DistributionRecord,
    pub reconstruction_error: DistributionRecord,
    pub silhouette: Vec<Option<f64>>,
    pub projection: Vec<ProjectionRow>,
}

/// Results of a matrix run as found on disk, keyed by `(variant, seed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsBundle {
    pub config: ExperimentConfig,
    pub runs: BTreeMap<(String, u64), RunRecord>,
}

fn missing(path: &Path) -> Error {
    Error::Export(path.display().to_string())
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(missing(&path))
    }
}

fn read_records(path: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Export(format!("{}: {e}", path.display())))?;
    r.records()
        .map(|x| x.map_err(|e| Error::Export(format!("{}: {e}", path.display()))))
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| Error::Export(format!("{}: bad field {i} in {rec:?}", path.display())))
}

fn read_silhouette(path: &Path) -> Result<Vec<Option<f64>>> {
    read_records(path)?
        .iter()
        .map(|r| match r.get(1) {
            Some("") => Ok(None),
            _ => field(path, r, 1).map(Some),
        })
        .collect()
}

fn read_projection(path: &Path) -> Result<Vec<ProjectionRow>> {
    read_records(path)?
        .iter()
        .map(|r| {
            let task: usize = field(path, r, 0)?;
            Ok(ProjectionRow {
                task: task.checked_sub(1).ok_or_else(|| Error::Export(format!("{}: task 0", path.display())))?,
                class: field(path, r, 1)?,
                x: field(path, r, 2)?,
                y: field(path, r, 3)?,
            })
        })
        .collect()
}

fn load_run(dir: &Path, num_tasks: usize) -> Result<RunRecord> {
    let accuracy = read_accuracy_csv(&require(dir.join(ACCURACY_FILE))?, num_tasks)?;
    if !accuracy.is_complete() {
        return Err(Error::Export(format!("{} (incomplete matrix)", dir.join(ACCURACY_FILE).display())));
    }
    let metrics = accuracy.task_metrics()?;
    Ok(RunRecord {
        metrics,
        accuracy,
        log_likelihood: read_distribution_json(&require(dir.join(LOG_LIKELIHOOD_FILE))?)?,
        reconstruction_error: read_distribution_json(&require(dir.join(RECONSTRUCTION_FILE))?)?,
        silhouette: read_silhouette(&require(dir.join(SILHOUETTE_FILE))?)?,
        projection: read_projection(&require(dir.join(PROJECTION_FILE))?)?,
    })
}

pub(super) fn load_runs(out: &Path, config: &ExperimentConfig, strict: bool) -> Result<ResultsBundle> {
    let mut runs = BTreeMap::new();
    for v in &config.variants {
        for &seed in &config.seeds {
            match load_run(&run_dir(out, v, seed), config.trainer.num_tasks) {
                Ok(r) => {
                    runs.insert((v.name.clone(), seed), r);
                }
                Err(e) if strict => return Err(e),
                Err(e) => log::warn!("skipping {} seed {seed}: {e}", v.name),
            }
        }
    }
    Ok(ResultsBundle {
        config: config.clone(),
        runs,
    })
}

/// Reads a results directory written by a matrix run. Every configured run must be complete.
pub fn load_results(dir: &Path) -> Result<ResultsBundle> {
    let config = ExperimentConfig::from_file(&require(dir.join(CONFIG_FILE))?)?;
    load_runs(dir, &config, true)
}

struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    fn create(path: PathBuf, header: &[String]) -> Result<Self> {
        let writer = csv::Writer::from_path(&path).map_err(|e| Error::Export(format!("{}: {e}", path.display())))?;
        let mut t = Table { path, writer };
        t.row(header)?;
        Ok(t)
    }

    fn row(&mut self, fields: &[String]) -> Result<()> {
        let path = &self.path;
        self.writer
            .write_record(fields)
            .map_err(|e| Error::Export(format!("{}: {e}", path.display())))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

type PerTask = fn(&RunRecord, usize) -> Option<f64>;

/// Writes the per-figure tables into `out_dir` and returns their paths.
pub fn export_plot_data(bundle: &ResultsBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let variants: Vec<&str> = bundle.config.variants.iter().map(|v| v.name.as_str()).collect();
    let runs_of = |name: &str| -> Vec<(u64, &RunRecord)> {
        bundle
            .runs
            .iter()
            .filter(|((n, _), _)| n == name)
            .map(|((_, s), r)| (*s, r))
            .collect()
    };
    for name in &variants {
        if runs_of(name).is_empty() {
            return Err(Error::Export(format!("results for variant `{name}`")));
        }
    }
    let num_tasks = bundle.config.trainer.num_tasks;
    let mut header = vec!["task".to_string()];
    header.extend(variants.iter().map(|s| s.to_string()));

    let panels: [(&str, PerTask); 5] = [
        ("retention_per_task.csv", |r, t| r.metrics[t].retention_ratio),
        ("forgetting_per_task.csv", |r, t| Some(r.metrics[t].forgetting_score)),
        ("initial_acc_per_task.csv", |r, t| Some(r.metrics[t].initial_acc)),
        ("final_acc_per_task.csv", |r, t| Some(r.metrics[t].final_acc)),
        ("silhouette_per_task.csv", |r, t| r.silhouette.get(t).copied().flatten()),
    ];
    let mut written = Vec::new();
    for (file, get) in panels {
        let mut table = Table::create(out_dir.join(file), &header)?;
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); variants.len()];
        for t in 0..num_tasks {
            let mut row = vec![(t + 1).to_string()];
            for (k, name) in variants.iter().enumerate() {
                let vals: Vec<f64> = runs_of(name).iter().filter_map(|(_, r)| get(r, t)).collect();
                let m = mean(&vals);
                if let Some(m) = m {
                    columns[k].push(m);
                }
                row.push(cell(m));
            }
            table.row(&row)?;
        }
        let mut row = vec!["mean".to_string()];
        row.extend(columns.iter().map(|c| cell(mean(c))));
        table.row(&row)?;
        written.push(table.finish()?);
    }

    for (file, pick) in [
        ("histogram_log_likelihood.csv", (|r| &r.log_likelihood) as fn(&RunRecord) -> &DistributionRecord),
        ("histogram_reconstruction_error.csv", |r| &r.reconstruction_error),
    ] {
        let mut table = Table::create(
            out_dir.join(file),
            &["variant", "seed", "bin_start", "bin_end", "count"].map(String::from),
        )?;
        for name in &variants {
            for (seed, r) in runs_of(name) {
                let h = &pick(r).histogram;
                for (i, c) in h.counts.iter().enumerate() {
                    table.row(&[
                        name.to_string(),
                        seed.to_string(),
                        h.edges[i].to_string(),
                        h.edges[i + 1].to_string(),
                        c.to_string(),
                    ])?;
                }
            }
        }
        written.push(table.finish()?);
    }

    let mut table = Table::create(
        out_dir.join("projections.csv"),
        &["variant", "seed", "task", "class", "x", "y"].map(String::from),
    )?;
    for name in &variants {
        for (seed, r) in runs_of(name) {
            for p in &r.projection {
                table.row(&[
                    name.to_string(),
                    seed.to_string(),
                    (p.task + 1).to_string(),
                    p.class.to_string(),
                    p.x.to_string(),
                    p.y.to_string(),
                ])?;
            }
        }
    }
    written.push(table.finish()?);
    Ok(written)
}
