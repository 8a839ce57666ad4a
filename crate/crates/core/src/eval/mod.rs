//! Runs, sweeps, and the metrics computed over them.
//!
//! A run evaluates one prompt configuration: for every evaluation article it
//! retrieves exemplars from the training split, assembles a prompt, and asks
//! the scorer for a prediction. Items are processed in parallel but results
//! are always reported in evaluation-split order.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Dataset, Split, Task};
use crate::error::{Error, Result};
use crate::par;
use crate::prompt::{assemble, order_exemplars, Guideline, Mode, PromptConfig};
use crate::retrieval::{build_index, Bm25Params, Index, RetrievalResult, TokenizerConfig};
use crate::scorer::{Prediction, Scorer};

mod metrics;
pub mod pipeline;
pub mod report;

pub use metrics::{
    calibration_fit, confusion, ece, expected_calibration_error, fsum, round_half_up_1dp, summarize_accuracies,
    sweep_summary, CalibrationFit, ConfusionMatrix, SweepSummary,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub query_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config_name: String,
    pub task: Task,
    pub model_name: String,
    pub mode: Mode,
    pub predictions: Vec<Prediction>,
    /// Items whose backend call failed (non-strict runs only); they are not
    /// part of any metric.
    #[serde(default)]
    pub errors: Vec<ItemError>,
    #[serde(default)]
    pub warnings: Vec<String>,
    pub n_correct: usize,
    pub n_gold: usize,
    /// Fraction correct over gold-labeled predictions; 0 when there are none.
    pub accuracy: f64,
    pub mean_confidence: f64,
}

impl RunResult {
    pub fn from_predictions(
        config_name: String,
        task: Task,
        model_name: String,
        mode: Mode,
        predictions: Vec<Prediction>,
        errors: Vec<ItemError>,
        warnings: Vec<String>,
    ) -> RunResult {
        let outcomes: Vec<bool> = predictions.iter().filter_map(Prediction::is_correct).collect();
        let n_gold = outcomes.len();
        let n_correct = outcomes.iter().filter(|&&c| c).count();
        let accuracy = if n_gold == 0 {
            0.0
        } else {
            n_correct as f64 / n_gold as f64
        };
        let mean_confidence = if predictions.is_empty() {
            0.0
        } else {
            fsum(predictions.iter().map(|p| p.confidence)) / predictions.len() as f64
        };
        RunResult {
            config_name,
            task,
            model_name,
            mode,
            predictions,
            errors,
            warnings,
            n_correct,
            n_gold,
            accuracy,
            mean_confidence,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub mode: Mode,
    pub guideline: Option<Guideline>,
    /// Abort on the first failed item instead of recording it.
    pub strict: bool,
    /// Upper bound on concurrently evaluated items.
    pub max_in_flight: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            mode: Mode::Likelihood,
            guideline: None,
            strict: false,
            max_in_flight: 4,
        }
    }
}

/// A task-specific evaluation setup: the BM25 index over labeled training
/// articles plus the evaluation items.
pub struct Harness {
    task: Task,
    index: Index,
    train: HashMap<String, Article>,
    eval_items: Vec<Article>,
}

/// `(id, title + body)` for every training article labeled for `task`, in
/// dataset order.
pub fn index_documents(dataset: &Dataset, task: Task) -> Vec<(String, String)> {
    dataset
        .split(Split::Train)
        .filter(|a| a.label(task).is_some())
        .map(|a| (a.id.clone(), a.retrieval_text()))
        .collect()
}

impl Harness {
    pub fn new(
        dataset: &Dataset,
        task: Task,
        tokenizer: TokenizerConfig,
        params: Bm25Params,
        eval_split: Split,
    ) -> Result<Harness> {
        let index = build_index(&index_documents(dataset, task), params, tokenizer)?;
        Harness::with_index(dataset, task, index, eval_split)
    }

    /// Uses a prebuilt index. Every indexed id must be a training article
    /// labeled for `task`.
    pub fn with_index(dataset: &Dataset, task: Task, index: Index, eval_split: Split) -> Result<Harness> {
        let train: HashMap<String, Article> = dataset
            .split(Split::Train)
            .filter(|a| a.label(task).is_some())
            .map(|a| (a.id.clone(), a.clone()))
            .collect();
        if let Some(id) = index.doc_ids().iter().find(|id| !train.contains_key(*id)) {
            return Err(Error::Invalid(format!(
                "index document `{id}` is not a labeled training article"
            )));
        }
        let eval_items: Vec<Article> = dataset.split(eval_split).cloned().collect();
        Ok(Harness {
            task,
            index,
            train,
            eval_items,
        })
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn eval_items(&self) -> &[Article] {
        &self.eval_items
    }

    /// Top-`k` training neighbors of every evaluation item, best first. An
    /// item's own id is always excluded.
    pub fn neighbors(&self, k: usize) -> Vec<Vec<RetrievalResult>> {
        let queries: Vec<(String, HashSet<String>)> = self
            .eval_items
            .iter()
            .map(|a| (a.retrieval_text(), HashSet::from([a.id.clone()])))
            .collect();
        self.index.top_k_batch(&queries, k)
    }

    pub fn run(&self, config: &PromptConfig, scorer: &Scorer, options: &RunOptions) -> Result<RunResult> {
        let neighbors = self.neighbors(config.shots);
        self.run_with_neighbors(config, scorer, options, &neighbors)
    }

    /// Runs every configuration, sharing one retrieval pass.
    pub fn sweep(&self, configs: &[PromptConfig], scorer: &Scorer, options: &RunOptions) -> Result<Vec<RunResult>> {
        let k = configs.iter().map(|c| c.shots).max().unwrap_or(0);
        let neighbors = self.neighbors(k);
        configs
            .iter()
            .map(|config| self.run_with_neighbors(config, scorer, options, &neighbors))
            .collect()
    }

    /// `neighbors[i]` must be the best-first neighbors of evaluation item
    /// `i`, at least `config.shots` long unless the pool is smaller.
    pub fn run_with_neighbors(
        &self,
        config: &PromptConfig,
        scorer: &Scorer,
        options: &RunOptions,
        neighbors: &[Vec<RetrievalResult>],
    ) -> Result<RunResult> {
        if self.eval_items.is_empty() {
            return Err(Error::Invalid("no evaluation items".into()));
        }
        if neighbors.len() != self.eval_items.len() {
            return Err(Error::Invalid("neighbor lists do not match the evaluation items".into()));
        }
        scorer.check_mode(options.mode)?;

        let items: Vec<(&Article, &[RetrievalResult])> = self
            .eval_items
            .iter()
            .zip(neighbors)
            .map(|(a, n)| (a, &n[..n.len().min(config.shots)]))
            .collect();

        let outcomes = par::with_threads(options.max_in_flight, || {
            par::map(&items, |(query, hits)| self.evaluate_item(config, scorer, options, query, hits))
        });

        let mut predictions = Vec::with_capacity(outcomes.len());
        let mut errors = Vec::new();
        let mut warnings = Vec::new();
        for (outcome, (query, _)) in outcomes.into_iter().zip(&items) {
            match outcome {
                Ok((prediction, item_warnings)) => {
                    predictions.push(prediction);
                    warnings.extend(item_warnings);
                }
                Err(err) if options.strict || !matches!(err, Error::Backend(_)) => {
                    return Err(Error::Runtime(format!("run `{}` aborted at `{}`: {err}", config.name(), query.id)));
                }
                Err(err) => {
                    tracing::warn!("`{}`: {err}", query.id);
                    errors.push(ItemError {
                        query_id: query.id.clone(),
                        message: err.to_string(),
                    });
                }
            }
        }

        Ok(RunResult::from_predictions(
            config.name(),
            self.task,
            scorer.model_name().to_string(),
            options.mode,
            predictions,
            errors,
            warnings,
        ))
    }

    fn evaluate_item(
        &self,
        config: &PromptConfig,
        scorer: &Scorer,
        options: &RunOptions,
        query: &Article,
        hits: &[RetrievalResult],
    ) -> Result<(Prediction, Vec<String>)> {
        let ids = order_exemplars(hits, config.order);
        let exemplars: Vec<&Article> = ids.iter().map(|id| &self.train[id]).collect();
        let prompt = assemble(
            config,
            query,
            &exemplars,
            self.task,
            options.mode,
            options.guideline.as_ref(),
        )?;
        let prediction = scorer.predict_prompt(&prompt, query.label(self.task))?;
        Ok((prediction, prompt.warnings))
    }
}

/// One-shot convenience: builds a harness with default retrieval settings
/// and runs `config` over the test split.
pub fn run(dataset: &Dataset, config: &PromptConfig, scorer: &Scorer, task: Task, mode: Mode) -> Result<RunResult> {
    let harness = Harness::new(
        dataset,
        task,
        TokenizerConfig::default(),
        Bm25Params::default(),
        Split::Test,
    )?;
    let options = RunOptions {
        mode,
        ..RunOptions::default()
    };
    harness.run(config, scorer, &options)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::scorer::{Backend, MockBackend};
    use crate::prompt::PromptInstance;

    fn art(id: &str, split: Split, body: &str, label: Option<&str>) -> Article {
        Article {
            id: id.into(),
            title: String::new(),
            body: body.into(),
            category: "Opinion".into(),
            impact_type: label.map(String::from),
            impact_duration: None,
            split,
        }
    }

    fn dataset() -> Dataset {
        Dataset::new(
            "d",
            vec![
                art("t1", Split::Train, "탄소 배출 감축", Some("Opportunity")),
                art("t2", Split::Train, "횡령 배임 기소", Some("Risk")),
                art("t3", Split::Train, "탄소 중립 투자", Some("Opportunity")),
                art("t4", Split::Train, "no label", None),
                art("q1", Split::Test, "탄소 배출 목표", Some("Opportunity")),
                art("q2", Split::Test, "횡령 혐의", Some("Risk")),
                art("q3", Split::Test, "unlabeled query", None),
            ],
        )
    }

    #[test]
    fn unlabeled_train_articles_are_not_indexed() {
        let h = Harness::new(&dataset(), Task::ImpactType, TokenizerConfig::default(), Bm25Params::default(), Split::Test).unwrap();
        assert_eq!(h.index().doc_count(), 3);
        assert_eq!(h.eval_items().len(), 3);
    }

    #[test]
    fn empty_eval_split_is_an_error() {
        let mut ds = dataset();
        ds.articles.retain(|a| a.split == Split::Train);
        let scorer = Scorer::new(Arc::new(MockBackend::new("m", 0)));
        let config = PromptConfig::parse("1-shot-standard_order-standard").unwrap();
        let err = run(&ds, &config, &scorer, Task::ImpactType, Mode::Likelihood).unwrap_err();
        assert!(err.to_string().contains("no evaluation items"));
    }

    #[test]
    fn accuracy_counts_only_gold_items() {
        let scorer = Scorer::new(Arc::new(MockBackend::new("m", 3)));
        let config = PromptConfig::parse("3-shot-standard_order-standard").unwrap();
        let r = run(&dataset(), &config, &scorer, Task::ImpactType, Mode::Likelihood).unwrap();
        assert_eq!(r.predictions.len(), 3);
        assert_eq!(r.n_gold, 2);
        assert_eq!(r.accuracy, r.n_correct as f64 / 2.0);
        assert_eq!(r.predictions[2].query_id, "q3");
        assert!(r.warnings.is_empty());
    }

    struct Flaky;

    impl Backend for Flaky {
        fn model_name(&self) -> &str {
            "flaky"
        }
        fn score_continuations(&self, prompt: &PromptInstance) -> Result<Vec<Vec<f64>>> {
            if prompt.query_id == "q2" {
                Err(Error::Backend("connection reset".into()))
            } else {
                Ok(vec![vec![-1.0]; prompt.option_strings.len()])
            }
        }
        fn complete(&self, _: &PromptInstance) -> Result<String> {
            Err(Error::Backend("no".into()))
        }
    }

    #[test]
    fn strict_flag_controls_item_failures() {
        let scorer = Scorer::new(Arc::new(Flaky));
        let h = Harness::new(&dataset(), Task::ImpactType, TokenizerConfig::default(), Bm25Params::default(), Split::Test).unwrap();
        let config = PromptConfig::parse("1-shot-standard_order-standard").unwrap();
        let lenient = h.run(&config, &scorer, &RunOptions::default()).unwrap();
        assert_eq!(lenient.errors.len(), 1);
        assert_eq!(lenient.errors[0].query_id, "q2");
        assert_eq!(lenient.n_gold, 1);
        let strict = RunOptions {
            strict: true,
            ..RunOptions::default()
        };
        assert!(h.run(&config, &scorer, &strict).is_err());
    }

    #[test]
    fn generation_mode_runs_end_to_end() {
        let scorer = Scorer::new(Arc::new(MockBackend::new("m", 3)));
        let h = Harness::new(&dataset(), Task::ImpactType, TokenizerConfig::default(), Bm25Params::default(), Split::Test).unwrap();
        let config = PromptConfig::parse("1-shot-standard_order-standard").unwrap();
        let options = RunOptions {
            mode: Mode::Generation,
            ..RunOptions::default()
        };
        let r = h.run(&config, &scorer, &options).unwrap();
        assert!(r.predictions.iter().all(|p| p.mode == Mode::Generation && !p.extraction_failed));
    }
}
