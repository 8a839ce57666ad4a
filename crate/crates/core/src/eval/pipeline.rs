//! End-to-end execution of a run configuration file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::report::{
    aggregate_reports, read_run_report, write_predictions_csv, write_run_report, write_scatter_csv, write_sweep_csv,
    Aggregate, RunReport, SweepRow,
};
use super::{index_documents, Harness, RunOptions};
use crate::config::RunConfigFile;
use crate::corpus::{validate, Dataset};
use crate::error::{Error, Result};
use crate::prompt::{Guideline, PromptConfig};
use crate::retrieval::{build_index, index_key, Index};
use crate::scorer::{Backend, ResponseCache, Scorer};

/// Loads the training file and, if configured, the test file.
pub fn load_dataset(config: &RunConfigFile) -> Result<Dataset> {
    let train = Dataset::load(&config.train_path)?;
    let dataset = match &config.test_path {
        Some(path) => {
            let name = train.name.clone();
            Dataset::merge(name, vec![train, Dataset::load(path)?])?
        }
        None => train,
    };
    let violations = validate(&dataset);
    if let Some(first) = violations.first() {
        return Err(Error::Invalid(format!(
            "dataset has {} invalid record(s); first: {first}",
            violations.len()
        )));
    }
    Ok(dataset)
}

pub struct Pipeline {
    config: RunConfigFile,
    guideline: Option<Guideline>,
    dataset_hash: String,
    config_hash: String,
    harness: Harness,
    scorer: Scorer,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    /// One report per selected configuration, in selection order.
    pub reports: Vec<RunReport>,
    /// Configurations whose artifact already existed and was reused.
    pub reused: Vec<String>,
    pub aggregate: Aggregate,
    pub run_paths: Vec<PathBuf>,
}

impl Pipeline {
    /// Loads data, prepares the index, and builds the configured backend.
    pub fn prepare(config: RunConfigFile) -> Result<Pipeline> {
        let dataset = load_dataset(&config)?;
        let backend = config.backend.build(&dataset)?;
        Pipeline::with_backend(config, dataset, backend)
    }

    /// Like [`Pipeline::prepare`] with an explicit backend and dataset.
    pub fn with_backend(config: RunConfigFile, dataset: Dataset, backend: Arc<dyn Backend>) -> Result<Pipeline> {
        let guideline = config.guideline()?;
        let config_hash = config.config_hash(guideline.as_ref());
        let dataset_hash = dataset.content_hash();
        tracing::info!(
            dataset_hash = %dataset_hash,
            config_hash = %config_hash,
            config = %serde_json::to_string(&config).unwrap_or_default(),
            "resolved configuration"
        );

        let index = prepare_index(&config, &dataset)?;
        let harness = Harness::with_index(&dataset, config.task, index, config.eval_split)?;

        let mut scorer = Scorer::new(backend).length_normalized(config.backend.length_normalize);
        if let Some(path) = &config.cache_path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            scorer = scorer.with_cache(Arc::new(ResponseCache::open(path)?));
        }
        Ok(Pipeline {
            config,
            guideline,
            dataset_hash,
            config_hash,
            harness,
            scorer,
        })
    }

    pub fn config(&self) -> &RunConfigFile {
        &self.config
    }

    pub fn harness(&self) -> &Harness {
        &self.harness
    }

    pub fn scorer(&self) -> &Scorer {
        &self.scorer
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.config.output_dir.join("runs")
    }

    fn options(&self) -> RunOptions {
        RunOptions {
            mode: self.config.mode,
            guideline: self.guideline.clone(),
            strict: self.config.strict,
            max_in_flight: self.config.backend.max_in_flight,
        }
    }

    /// An existing artifact for `config` produced by identical settings.
    fn existing(&self, config: &PromptConfig) -> Option<RunReport> {
        let name = super::report::artifact_name(
            &self.dataset_hash,
            &config.name(),
            self.scorer.model_name(),
            self.config.task,
        );
        let report = read_run_report(&self.runs_dir().join(name)).ok()?;
        (report.dataset_hash == self.dataset_hash
            && report.config_hash == self.config_hash
            && report.run.config_name == config.name()
            && report.run.errors.is_empty())
        .then_some(report)
    }

    /// Runs every selected configuration, skipping those whose artifact is
    /// already on disk. Writes `runs/*.json`, `predictions/*.csv`,
    /// `sweep.csv`, `scatter.csv`, and `summary.json` under the output
    /// directory.
    pub fn execute(&self) -> Result<SweepOutput> {
        let selected = self.config.selected();
        let mut slots: Vec<Option<RunReport>> = selected.iter().map(|c| self.existing(c)).collect();
        let reused: Vec<String> = selected
            .iter()
            .zip(&slots)
            .filter(|(_, s)| s.is_some())
            .map(|(c, _)| c.name())
            .collect();
        for name in &reused {
            tracing::info!("reusing existing artifact for `{name}`");
        }

        let pending: Vec<PromptConfig> = selected
            .iter()
            .zip(&slots)
            .filter(|(_, s)| s.is_none())
            .map(|(c, _)| *c)
            .collect();
        if !pending.is_empty() {
            let runs = self.harness.sweep(&pending, &self.scorer, &self.options())?;
            let mut fresh = runs.into_iter();
            for slot in slots.iter_mut().filter(|s| s.is_none()) {
                let run = fresh.next().expect("one run per pending configuration");
                tracing::info!(
                    prompt = %run.config_name,
                    accuracy = run.accuracy,
                    confidence = run.mean_confidence,
                    "run finished"
                );
                *slot = Some(RunReport::new(run, &self.dataset_hash, &self.config_hash));
            }
        }
        let reports: Vec<RunReport> = slots.into_iter().map(|s| s.expect("filled")).collect();

        let runs_dir = self.runs_dir();
        let predictions_dir = self.config.output_dir.join("predictions");
        std::fs::create_dir_all(&predictions_dir).map_err(|e| Error::io(&predictions_dir, e))?;
        let mut run_paths = Vec::with_capacity(reports.len());
        for report in &reports {
            run_paths.push(write_run_report(&runs_dir, report)?);
            let csv = predictions_dir.join(report.file_name()).with_extension("csv");
            write_predictions_csv(&csv, &report.run)?;
        }
        let aggregate = write_tables(&self.config.output_dir, &reports)?;
        Ok(SweepOutput {
            reports,
            reused,
            aggregate,
            run_paths,
        })
    }
}

/// Writes `sweep.csv`, `scatter.csv`, and `summary.json` for `reports`.
pub fn write_tables(dir: &Path, reports: &[RunReport]) -> Result<Aggregate> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows: Vec<SweepRow> = reports.iter().map(|r| SweepRow::from_run(&r.run)).collect();
    write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
    write_scatter_csv(&dir.join("scatter.csv"), &rows)?;
    let aggregate = aggregate_reports(reports)?;
    let path = dir.join("summary.json");
    let mut json = serde_json::to_string_pretty(&aggregate).expect("summary serializes");
    json.push('\n');
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(aggregate)
}

fn prepare_index(config: &RunConfigFile, dataset: &Dataset) -> Result<Index> {
    let docs = index_documents(dataset, config.task);
    let Some(path) = &config.index_path else {
        return build_index(&docs, config.bm25, config.tokenizer);
    };
    let key = index_key(&docs, &config.bm25, &config.tokenizer);
    if let Some(index) = Index::load_if_matching(path, &key) {
        tracing::info!("loaded index from {}", path.display());
        return Ok(index);
    }
    let index = build_index(&docs, config.bm25, config.tokenizer)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    index.save(path)?;
    Ok(index)
}
