//! Run artifacts and sweep-level tables.
//!
//! Each run is written as one JSON report named by (dataset hash, prompt
//! configuration, model, task). Reports carry no timestamps, so re-running a
//! sweep against a warm cache reproduces them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{calibration_fit, confusion, ece, summarize_accuracies, CalibrationFit, ConfusionMatrix, RunResult, SweepSummary};
use crate::corpus::Task;
use crate::error::{Error, Result};

pub const ECE_BINS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset_hash: String,
    pub config_hash: String,
    pub run: RunResult,
    /// Present when every prediction has a gold label.
    pub confusion: Option<ConfusionMatrix>,
    pub ece: Option<f64>,
}

impl RunReport {
    pub fn new(run: RunResult, dataset_hash: &str, config_hash: &str) -> RunReport {
        let confusion = confusion(&run).ok();
        let ece = (run.n_gold > 0).then(|| ece(&run, ECE_BINS).ok()).flatten();
        RunReport {
            dataset_hash: dataset_hash.to_string(),
            config_hash: config_hash.to_string(),
            run,
            confusion,
            ece,
        }
    }

    pub fn file_name(&self) -> String {
        artifact_name(&self.dataset_hash, &self.run.config_name, &self.run.model_name, self.run.task)
    }

    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("report serializes");
        json.push('\n');
        json
    }
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn artifact_name(dataset_hash: &str, config_name: &str, model_name: &str, task: Task) -> String {
    let hash = &dataset_hash[..dataset_hash.len().min(12)];
    format!("{hash}__{}__{}__{task}.json", sanitize(config_name), sanitize(model_name))
}

pub fn write_run_report(dir: &Path, report: &RunReport) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(report.file_name());
    fs::write(&path, report.to_json()).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_run_report(path: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Invalid(format!("{}: not a run report: {e}", path.display())))
}

/// Every `*.json` report in `dir`, ordered by file name.
pub fn read_run_reports(dir: &Path) -> Result<Vec<RunReport>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_run_report(p)).collect()
}

/// One row of the per-prompt sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "Prompt")]
    pub prompt: String,
    #[serde(rename = "Accuracy")]
    pub accuracy: f64,
    #[serde(rename = "Confidence")]
    pub confidence: f64,
    #[serde(rename = "Model")]
    pub model: String,
    #[serde(rename = "Task")]
    pub task: String,
}

impl SweepRow {
    pub fn from_run(run: &RunResult) -> SweepRow {
        SweepRow {
            prompt: run.config_name.clone(),
            accuracy: run.accuracy,
            confidence: run.mean_confidence,
            model: run.model_name.clone(),
            task: run.task.title().to_string(),
        }
    }
}

#[derive(Debug, Serialize)]
struct ScatterRow<'a> {
    confidence: f64,
    accuracy: f64,
    model: &'a str,
    task: &'a str,
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Invalid(format!("{}: {e}", path.display()))
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<SweepRow>, _>>()
        .map_err(|e| csv_error(path, e))
}

/// Confidence/accuracy pairs for external plotting.
pub fn write_scatter_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.serialize(ScatterRow {
            confidence: row.confidence,
            accuracy: row.accuracy,
            model: &row.model,
            task: &row.task,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize)]
struct PredictionRow<'a> {
    id: &'a str,
    predicted: &'a str,
    confidence: f64,
    gold: Option<&'a str>,
    correct: Option<bool>,
    extraction_failed: bool,
}

/// One row per prediction, in evaluation order.
pub fn write_predictions_csv(path: &Path, run: &RunResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for p in &run.predictions {
        w.serialize(PredictionRow {
            id: &p.query_id,
            predicted: &p.predicted,
            confidence: p.confidence,
            gold: p.gold.as_deref(),
            correct: p.is_correct(),
            extraction_failed: p.extraction_failed,
        })
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// One summary per (model, task), in order of first appearance.
    pub summaries: Vec<SweepSummary>,
    /// Pooled fit over every row; absent when it would be degenerate.
    pub calibration: Option<CalibrationFit>,
}

pub fn aggregate_rows(rows: &[SweepRow]) -> Result<Aggregate> {
    let mut groups: Vec<((String, Task), Vec<f64>)> = Vec::new();
    for row in rows {
        let task = Task::parse(&row.task)
            .ok_or_else(|| Error::Invalid(format!("unknown task `{}` in sweep row", row.task)))?;
        let key = (row.model.clone(), task);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, accs)) => accs.push(row.accuracy),
            None => groups.push((key, vec![row.accuracy])),
        }
    }
    let summaries = groups
        .iter()
        .map(|((model, task), accs)| summarize_accuracies(*task, model, accs))
        .collect::<Result<Vec<_>>>()?;
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.confidence, r.accuracy)).collect();
    Ok(Aggregate {
        summaries,
        calibration: calibration_fit(&points).ok(),
    })
}

/// Aggregates run reports. All of them must come from the same dataset.
pub fn aggregate_reports(reports: &[RunReport]) -> Result<Aggregate> {
    if let Some(first) = reports.first() {
        if let Some(other) = reports.iter().find(|r| r.dataset_hash != first.dataset_hash) {
            return Err(Error::Invalid(format!(
                "refusing to aggregate runs over different datasets ({} vs {})",
                first.dataset_hash, other.dataset_hash
            )));
        }
    }
    let rows: Vec<SweepRow> = reports.iter().map(|r| SweepRow::from_run(&r.run)).collect();
    aggregate_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn artifact_names_are_filesystem_safe() {
        let name = artifact_name("0123456789abcdef", "3-shot-reverse_order-msci", "org/model 7b", Task::ImpactDuration);
        assert_eq!(name, "0123456789ab__3-shot-reverse_order-msci__org_model_7b__impact_duration.json");
    }

    #[test]
    fn mismatched_dataset_hashes_are_refused() {
        let run = RunResult::from_predictions("c".into(), Task::ImpactType, "m".into(), Default::default(), vec![], vec![], vec![]);
        let a = RunReport::new(run.clone(), "aaa", "cfg");
        let b = RunReport::new(run, "bbb", "cfg");
        assert!(aggregate_reports(&[a.clone(), a.clone()]).is_ok());
        assert!(aggregate_reports(&[a, b]).is_err());
    }

    #[test]
    fn sweep_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        let rows = vec![SweepRow {
            prompt: "1-shot-standard_order-msci".into(),
            accuracy: 0.635,
            confidence: 0.73176,
            model: "Yi-Ko-6B".into(),
            task: "Impact Type".into(),
        }];
        write_sweep_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("Prompt,Accuracy,Confidence,Model,Task\n"));
        assert_eq!(read_sweep_csv(&path).unwrap(), rows);
    }
}
