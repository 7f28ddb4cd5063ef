//! CSV and JSON artifacts. Task ids are written 1-based.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::accuracy::{AccuracyMatrix, TaskMetrics};
use super::distribution::{DistributionSummary, Histogram, SummaryStats};
use super::embedding::{EmbeddingDump, EmbeddingRow};
use super::pca::Projection;
use crate::error::{Error, Result};

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Export(format!("{}: {other:?}", path.display())),
    }
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_err(path, e))
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn parse<T: std::str::FromStr>(path: &Path, line: usize, field: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Export(format!("{}:{line}: cannot parse `{field}`", path.display())))
}

fn records(path: &Path, expect_header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().take(expect_header.len()).ne(expect_header.iter().copied()) {
        return Err(Error::Export(format!("{}: unexpected header {header:?}", path.display())));
    }
    r.records().map(|x| x.map_err(|e| csv_err(path, e))).collect()
}

pub fn write_accuracy_csv(path: &Path, acc: &AccuracyMatrix) -> Result<()> {
    let rows = acc
        .entries()
        .into_iter()
        .map(|(t, e, a)| vec![(t + 1).to_string(), (e + 1).to_string(), a.to_string()]);
    write_rows(path, &strings(&["trained_task", "eval_task", "accuracy"]), rows)
}

pub fn read_accuracy_csv(path: &Path, num_tasks: usize) -> Result<AccuracyMatrix> {
    let mut acc = AccuracyMatrix::new(num_tasks);
    for (i, r) in records(path, &["trained_task", "eval_task", "accuracy"])?.iter().enumerate() {
        let t: usize = parse(path, i + 2, &r[0])?;
        let e: usize = parse(path, i + 2, &r[1])?;
        let a: f64 = parse(path, i + 2, &r[2])?;
        if t == 0 || e == 0 {
            return Err(Error::Export(format!("{}:{}: task ids start at 1", path.display(), i + 2)));
        }
        acc.set(t - 1, e - 1, a)?;
    }
    Ok(acc)
}

pub fn write_metrics_csv(path: &Path, metrics: &[TaskMetrics]) -> Result<()> {
    let rows = metrics.iter().map(|m| {
        vec![
            (m.task + 1).to_string(),
            m.initial_acc.to_string(),
            m.final_acc.to_string(),
            m.retention_ratio.map(|r| r.to_string()).unwrap_or_default(),
            m.forgetting_score.to_string(),
        ]
    });
    write_rows(
        path,
        &strings(&["task", "initial_acc", "final_acc", "retention_ratio", "forgetting_score"]),
        rows,
    )
}

/// On-disk form of a [`DistributionSummary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRecord {
    pub metric: String,
    pub model_variant: String,
    pub values: Vec<f64>,
    pub histogram: Histogram,
    pub summary: SummaryStats,
}

impl DistributionRecord {
    pub fn new(metric: &str, model_variant: &str, d: &DistributionSummary) -> Self {
        DistributionRecord {
            metric: metric.into(),
            model_variant: model_variant.into(),
            values: d.values.clone(),
            histogram: d.histogram.clone(),
            summary: d.summary,
        }
    }
}

pub fn write_distribution_json(path: &Path, record: &DistributionRecord) -> Result<()> {
    let json = serde_json::to_string_pretty(record)?;
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(json.as_bytes())
        .and_then(|_| f.write_all(b"\n"))
        .map_err(|e| Error::io(path, e))
}

pub fn read_distribution_json(path: &Path) -> Result<DistributionRecord> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_embeddings_csv(path: &Path, dump: &EmbeddingDump) -> Result<()> {
    let mut header = strings(&["task", "class"]);
    header.extend((0..dump.dim).map(|k| format!("d{k}")));
    let rows = dump.rows.iter().map(|r| {
        let mut row = vec![(r.task + 1).to_string(), r.class.to_string()];
        row.extend(r.values.iter().map(f64::to_string));
        row
    });
    write_rows(path, &header, rows)
}

pub fn read_embeddings_csv(path: &Path, layer: &str) -> Result<EmbeddingDump> {
    let recs = records(path, &["task", "class"])?;
    let mut rows = Vec::with_capacity(recs.len());
    let mut dim = None;
    for (i, r) in recs.iter().enumerate() {
        let task: usize = parse(path, i + 2, &r[0])?;
        let class: usize = parse(path, i + 2, &r[1])?;
        let values = r.iter().skip(2).map(|f| parse(path, i + 2, f)).collect::<Result<Vec<f64>>>()?;
        dim.get_or_insert(values.len());
        rows.push(EmbeddingRow {
            task: task.checked_sub(1).ok_or_else(|| Error::Export("task ids start at 1".into()))?,
            class,
            values,
        });
    }
    EmbeddingDump::new(layer, dim.unwrap_or(0), rows)
}

pub fn write_projection_csv(path: &Path, proj: &Projection) -> Result<()> {
    let rows = proj.rows.iter().map(|r| {
        vec![
            (r.task + 1).to_string(),
            r.class.to_string(),
            r.x.to_string(),
            r.y.to_string(),
        ]
    });
    write_rows(path, &strings(&["task", "class", "x", "y"]), rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_round_trip_and_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("acc.csv");
        let mut a = AccuracyMatrix::new(2);
        a.set(0, 0, 0.75).unwrap();
        a.set(1, 0, 0.5).unwrap();
        a.set(1, 1, 1.0).unwrap();
        write_accuracy_csv(&p, &a).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "trained_task,eval_task,accuracy\n1,1,0.75\n2,1,0.5\n2,2,1\n");
        assert_eq!(read_accuracy_csv(&p, 2).unwrap(), a);
    }

    #[test]
    fn metrics_missing_retention_is_empty_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let m = [TaskMetrics {
            task: 0,
            initial_acc: 0.0,
            final_acc: 0.25,
            retention_ratio: None,
            forgetting_score: -0.25,
        }];
        write_metrics_csv(&p, &m).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "task,initial_acc,final_acc,retention_ratio,forgetting_score\n1,0,0.25,,-0.25\n"
        );
    }

    #[test]
    fn embeddings_and_distribution_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dump = EmbeddingDump::new(
            "fcE.fcLayer2.linear",
            2,
            vec![
                EmbeddingRow { task: 0, class: 1, values: vec![0.1, -2.5] },
                EmbeddingRow { task: 1, class: 3, values: vec![1e-17, 3.0] },
            ],
        )
        .unwrap();
        let p = dir.path().join("e.csv");
        write_embeddings_csv(&p, &dump).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("task,class,d0,d1\n1,1,"));
        assert_eq!(read_embeddings_csv(&p, "fcE.fcLayer2.linear").unwrap(), dump);

        let d = DistributionSummary::from_values(vec![1.0, 2.5, -0.5]).unwrap();
        let rec = DistributionRecord::new("reconstruction_error", "BIR(w/ IR)", &d);
        let p = dir.path().join("d.json");
        write_distribution_json(&p, &rec).unwrap();
        assert_eq!(read_distribution_json(&p).unwrap(), rec);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        for key in ["metric", "model_variant", "values", "histogram", "summary"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
